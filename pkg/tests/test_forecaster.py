import hashlib
import math
from dataclasses import replace

import numpy as np
import pytest

from a2sl import forecaster, nets, pipeline, simkit
from a2sl.errors import EmptyLoss
from a2sl.forecaster import ARMS, TrainConfig

from conftest import small_config


def digest(arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_weighted_mse_hand_case():
    loss, _ = forecaster.weighted_masked_mse(np.array([[1.0, 2.0, 3.0]]), np.array([[1.0, 3.0, 3.0]]),
                                             np.array([[1, 1, 0]]), [1.0])
    assert loss == pytest.approx(0.5, abs=1e-9)


def test_weighted_mse_perfect():
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    loss, g = forecaster.weighted_masked_mse(y, y, np.ones((2, 2)), [0.3, 0.7])
    assert loss == 0.0 and not g.any()


def test_masked_days_do_not_matter(rng):
    P, Y = rng.normal(size=(3, 30)), rng.normal(size=(3, 30))
    M = (rng.random((3, 30)) < 0.3).astype(np.int8)
    M[:, 0] = 1
    base = forecaster.weighted_masked_mse(P, Y, M, [0.2, 0.3, 0.5])
    P2, Y2 = P.copy(), Y.copy()
    P2[M == 0] = rng.normal(size=int((M == 0).sum())) * 1e6
    Y2[M == 0] = np.nan
    again = forecaster.weighted_masked_mse(P2, Y2, M, [0.2, 0.3, 0.5])
    assert base[0] == again[0]
    assert np.array_equal(base[1], again[1])


def test_empty_batch_raises():
    with pytest.raises(EmptyLoss):
        forecaster.weighted_masked_mse(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)), [1.0])


def test_masked_mse_hand_case():
    assert forecaster.masked_mse(np.array([0.0, 0.0]), np.array([3.0, 4.0]), np.array([1, 1])) == 12.5
    assert forecaster.masked_mse(np.array([0.0, 0.0]), np.array([3.0, 4.0]), np.array([0, 0])) is None


def test_rmse_hand_case():
    r = forecaster.rmse([np.array([0.0, 0.0])], [np.array([3.0, 4.0])], [np.array([1, 1])])
    assert r == pytest.approx(math.sqrt(12.5), abs=1e-9)
    assert r == pytest.approx(3.5355, abs=1e-4)


def test_arm_registry():
    assert ARMS == ("no-pretrain", "pretrain", "a2sl")


def test_degenerate_joint_equals_baseline(small_bench, small_cfg):
    cfg = replace(small_cfg.train, mu=0.0, k=0, epochs=4)
    ts = small_bench.task_split(small_cfg.task)
    base, hist = forecaster.train_monthly_baseline(ts.train, cfg, pretrain=False)
    res = forecaster.joint_train(ts.train, small_bench.split.train, small_bench.clusters, cfg)
    assert [r["loss"] for r in hist["observed"]] == [r["L_De"] for r in res.history]
    assert nets.params_equal(base, res.decoder)


def test_yearly_shares_the_masked_trainer(small_bench, small_cfg):
    cfg = replace(small_cfg.train, pretrain_yearly=False, epochs=2)
    params, hist = forecaster.train_yearly(small_bench.split.train, "DO_hyp", cfg)
    seqs = forecaster.yearly_sequences(small_bench.split.train, "DO_hyp")
    X, Y, M = (np.stack([getattr(q, a) for q in seqs]) for a in ("X", "y", "mask"))
    S = np.stack([q.sim_phys for q in seqs])
    init, shuffle, _ = forecaster.rng_streams(cfg.seed + 7919)
    p0 = forecaster.new_decoder(X.shape[2], S, cfg, init)
    ref, rows = forecaster.train_masked(p0, X, Y, M, 2, cfg.lr, cfg.batch_size, shuffle)
    assert nets.params_equal(params, ref)
    assert rows == hist["observed"]


def test_yearly_output_length_and_determinism(small_bench, small_cfg):
    cfg = replace(small_cfg.train, epochs=1, pretrain_epochs=1)
    a, _ = forecaster.train_yearly(small_bench.split.train, "DO_hyp", cfg)
    b, _ = forecaster.train_yearly(small_bench.split.train, "DO_hyp", cfg)
    assert nets.params_equal(a, b)
    preds = forecaster.predict_yearly(a, small_bench.split.test, "DO_hyp")
    assert preds and all(len(v) == 360 for v in preds.values())


def test_year_slicing_alignment(small_bench, small_models):
    test = small_bench.task_split("DO_hyp").test
    full = forecaster.predict_yearly(small_models.gamma, small_bench.split.all(), "DO_hyp")
    sliced = forecaster.yearly_scenario_predictions(small_models.gamma, small_bench.split.all(), test)
    for s, row in zip(test, sliced):
        lo = (s.month - 1) * 30
        assert np.array_equal(row, full[(s.lake_id, s.year)][lo:lo + 30])


def test_joint_loss_moving_average_decreases(small_bench):
    cfg = TrainConfig(epochs=30)
    ts = small_bench.task_split("DO_hyp")
    res = forecaster.joint_train(ts.train, small_bench.split.train, small_bench.clusters, cfg)
    loss = np.array([r["loss"] for r in res.history])
    ma = np.convolve(loss, np.ones(5) / 5, "valid")
    assert (np.diff(ma) <= 0).all()


def test_joint_training_deterministic(small_bench, small_cfg):
    ts = small_bench.task_split("DO_hyp")
    cfg = replace(small_cfg.train, epochs=2)
    a = forecaster.joint_train(ts.train, small_bench.split.train, small_bench.clusters, cfg)
    b = forecaster.joint_train(ts.train, small_bench.split.train, small_bench.clusters, cfg)
    assert nets.params_equal(a.encoder, b.encoder) and nets.params_equal(a.decoder, b.decoder)
    assert a.history == b.history


def test_validation_selection_never_worse_than_start(small_bench, small_cfg):
    ts = small_bench.task_split("DO_hyp")
    val = pipeline.observed(ts.validation)
    cfg = replace(small_cfg.train, epochs=3)
    res = forecaster.joint_train(ts.train, small_bench.split.train, small_bench.clusters, cfg, val=val)
    assert forecaster.monthly_rmse(res.decoder, val) <= min(r["val_rmse"] for r in res.history)


def _anchor(small_bench, small_models):
    return next(s for s in small_bench.task_split("DO_hyp").test if s.n_obs)


def test_zero_finetune_epochs_is_identity(small_bench, small_cfg, small_models):
    cfg = replace(small_cfg.train, finetune_epochs=0)
    a = _anchor(small_bench, small_models)
    emb = forecaster.encode([a], small_models.encoder)[0]
    params, _, _ = forecaster.finetune(a, small_models.alpha, small_models.index, cfg, emb)
    assert nets.params_equal(params, small_models.alpha)


def test_finetune_freezes_index_and_decoder(small_bench, small_cfg, small_models):
    idx = small_models.index
    before = (digest([idx.embeddings]), digest(small_models.alpha[k] for k in sorted(small_models.alpha)))
    a = _anchor(small_bench, small_models)
    emb = forecaster.encode([a], small_models.encoder)[0]
    forecaster.finetune(a, small_models.alpha, idx, replace(small_cfg.train, finetune_epochs=5), emb)
    after = (digest([idx.embeddings]), digest(small_models.alpha[k] for k in sorted(small_models.alpha)))
    assert before == after


def test_finetune_lowers_retrieval_loss(small_bench, small_cfg, small_models):
    cfg = replace(small_cfg.train, finetune_epochs=20)
    for a in [s for s in small_bench.task_split("DO_hyp").test if s.n_obs][:5]:
        emb = forecaster.encode([a], small_models.encoder)[0]
        _, _, losses = forecaster.finetune(a, small_models.alpha, small_models.index, cfg, emb)
        assert losses[-1] <= losses[0]


def test_pretraining_uses_every_day(monkeypatch, small_bench):
    seen = []
    real = forecaster.train_masked

    def spy(params, X, Y, M, *a, **kw):
        seen.append(np.asarray(M))
        return real(params, X, Y, M, *a, **kw)

    monkeypatch.setattr(forecaster, "train_masked", spy)
    cfg = TrainConfig(epochs=1, pretrain_epochs=1)
    forecaster.train_monthly_baseline(small_bench.task_split("DO_hyp").train, cfg, pretrain=True)
    assert seen[0].mean() == 1.0
    assert seen[1].mean() < 1.0


def test_pretraining_learns_unbiased_temperature():
    recs = simkit.generate_benchmark(n_lakes=12, n_years=5, seed=7, bias={"k_atm": 1.0, "s_sed": 1.0, "b1": 1.0},
                                     sigma_obs=0.0)
    bench = pipeline.make_benchmark(small_config(), recs)
    train = bench.task_split("T_epi").train
    X, Y, M, S = forecaster._monthly_arrays(train)
    cfg = TrainConfig(pretrain_epochs=100, lr=0.01)
    init, shuffle, _ = forecaster.rng_streams(0)
    params = forecaster.new_decoder(X.shape[2], S, cfg, init)
    params, _ = forecaster.pretrain_simulated(params, X, S, Y, M, cfg, shuffle, epochs=0)
    P = forecaster.predict_monthly(params, train)
    truth = np.stack([s.sim_phys for s in train])
    assert math.sqrt(np.mean((P - truth) ** 2)) < 0.2
