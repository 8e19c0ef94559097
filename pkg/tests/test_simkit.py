import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import binom

from a2sl import simkit
from a2sl.errors import FormatError, InvalidArgument
from a2sl.simkit import DailyDrivers, SimParams, WeatherParams


def constant_drivers(n, air, sw=0.0, wind=0.0):
    return DailyDrivers(day=np.arange(n), air_temp=np.full(n, air), shortwave=np.full(n, sw),
                        wind=np.full(n, wind), heatwave=np.zeros(n, bool))


@pytest.fixture(scope="module")
def lakes():
    return simkit.gen_lakes(24, 7)


def test_gen_lakes_deterministic(lakes):
    again = simkit.gen_lakes(24, 7)
    assert len(lakes) == 24
    assert [simkit.lake_to_dict(a) for a in lakes] == [simkit.lake_to_dict(b) for b in again]


def test_gen_lakes_needs_two():
    with pytest.raises(InvalidArgument):
        simkit.gen_lakes(1, 0)


def test_land_use_on_simplex(lakes):
    for lk in lakes:
        assert abs(sum(lk.land_use) - 1.0) < 1e-12
        assert min(lk.land_use) >= 0


def test_weather_length_and_determinism(lakes):
    a = simkit.gen_weather(lakes[0], 2, 3)
    b = simkit.gen_weather(lakes[0], 2, 3)
    assert len(a) == 720
    for col in ("air_temp", "shortwave", "wind", "heatwave"):
        assert np.array_equal(getattr(a, col), getattr(b, col))


def test_weather_rejects_zero_years(lakes):
    with pytest.raises(InvalidArgument):
        simkit.gen_weather(lakes[0], 0, 3)


def test_forced_heatwaves_every_month(lakes):
    d = simkit.gen_weather(lakes[1], 2, 5, WeatherParams(p_hw=1.0))
    hw = d.heatwave.reshape(-1, simkit.DAYS_PER_MONTH)
    assert hw.any(axis=1).all()


def test_do_saturation_at_20():
    # 14.62 - 0.3898*20 + 0.006969*400 - 0.00005897*8000
    hand = 14.62 - 7.796 + 2.7876 - 0.47176
    assert simkit.do_saturation(20.0) == pytest.approx(hand, abs=1e-12)
    assert simkit.do_saturation(20.0) == pytest.approx(9.140, abs=1e-3)


def test_fixed_point_keeps_temperature_constant(lakes):
    p = SimParams()
    # T_eq = b0 + b1*A equals the initial temperature 4 degC with no radiation or wind
    air = (4.0 - p.b0) / p.b1
    out = simkit.simulate(lakes[0], constant_drivers(360, air), p)
    assert np.allclose(out.T_epi, 4.0, atol=1e-12)


def test_calm_stratified_month_only_loses_oxygen(lakes):
    out = simkit.simulate(lakes[5], constant_drivers(360, 22.0, sw=200.0, wind=0.0))
    d = constant_drivers(360, 0.0)
    summer = np.isin(d.month, simkit.SUMMER_MONTHS)
    do = out.DO_hyp[summer]
    assert out.stratified[summer].all()
    assert np.all(np.diff(do) <= 0)


def test_identity_bias_reproduces_truth(lakes):
    d = simkit.gen_weather(lakes[2], 2, 1)
    truth = simkit.simulate(lakes[2], d)
    labels = simkit.simulate_process_labels(lakes[2], d, bias={"k_atm": 1.0, "s_sed": 1.0, "b1": 1.0})
    for t in simkit.TASKS:
        assert np.array_equal(truth.task(t), labels.task(t))


def _summer_month_means(lake, bias):
    d = simkit.gen_weather(lake, 2, 1)
    truth = simkit.simulate(lake, d)
    labels = simkit.simulate_process_labels(lake, d, bias=bias)
    for year in (1, 2):
        for month in simkit.SUMMER_MONTHS:
            sel = (d.year == year) & (d.month == month)
            yield labels.DO_hyp[sel].mean(), truth.DO_hyp[sel].mean()


def test_larger_sediment_demand_depletes_hypolimnion(lakes):
    # same onset state, larger sink: the labels can only sit at or below the truth
    for lk in lakes:
        for lab, tru in _summer_month_means(lk, {"k_atm": 1.0, "s_sed": 1.25, "b1": 1.0}):
            assert lab <= tru


@pytest.mark.xfail(strict=True, reason="the cooler b1 bias raises onset oxygen in deep lakes by more than "
                                       "the extra sediment demand removes; see the decisions ledger")
def test_default_bias_depletes_hypolimnion(lakes):
    for lk in lakes:
        for lab, tru in _summer_month_means(lk, None):
            assert lab <= tru


def _stratified_pairs(lakes, task):
    for lk in lakes[:8]:
        d = simkit.gen_weather(lk, 2, 1)
        truth = simkit.simulate(lk, d)
        labels = simkit.simulate_process_labels(lk, d)
        s = truth.stratified
        yield labels.task(task)[s], truth.task(task)[s]


@pytest.mark.parametrize("task", simkit.TASKS)
def test_default_bias_differs_off_the_anoxic_floor(lakes, task):
    for lab, tru in _stratified_pairs(lakes, task):
        live = ~((lab == 0) & (tru == 0))
        assert np.mean(lab[live] != tru[live]) >= 0.99


@pytest.mark.xfail(strict=True, reason="both series sit at the DO >= 0 floor on anoxic hypolimnion days; "
                                       "see the decisions ledger")
def test_default_bias_differs_on_stratified_days(lakes):
    for lab, tru in _stratified_pairs(lakes, "DO_hyp"):
        assert np.mean(lab != tru) >= 0.99


def test_physical_sanity(lakes):
    for lk in lakes[:6]:
        out = simkit.simulate(lk, simkit.gen_weather(lk, 2, 4))
        s = out.stratified
        assert (out.DO_epi >= 0).all() and (out.DO_hyp >= 0).all()
        assert (out.T_epi[s] >= out.T_hyp[s]).all()
        assert np.array_equal(out.T_epi[~s], out.T_hyp[~s])
        assert np.array_equal(out.T_total[~s], out.T_epi[~s])


def test_entrainment_conserves_mean():
    f = 0.3
    a, b = simkit.entrain(20.0, 8.0, f, 0.4)
    assert abs(f * a + (1 - f) * b - (f * 20.0 + (1 - f) * 8.0)) < 1e-9


def test_process_labels_deterministic(lakes):
    d = simkit.gen_weather(lakes[3], 1, 9)
    a = simkit.simulate_process_labels(lakes[3], d)
    b = simkit.simulate_process_labels(lakes[3], d)
    assert np.array_equal(a.DO_hyp, b.DO_hyp)


def test_full_noise_free_observation(lakes):
    lk = replace(lakes[0], obs_rate=1.0)
    truth = simkit.simulate(lk, simkit.gen_weather(lk, 1, 0))
    obs = simkit.sample_observations(truth, lk, 0.0, 0)
    for t in simkit.TASKS:
        y, m = obs[t]
        assert m.all()
        assert np.array_equal(y, truth.task(t))


def test_zero_rate_masks_everything(lakes):
    lk = replace(lakes[0], obs_rate=0.0)
    truth = simkit.simulate(lk, simkit.gen_weather(lk, 1, 0))
    for y, m in simkit.sample_observations(truth, lk, 0.3, 0).values():
        assert not m.any()
        assert np.isnan(y).all()


def test_mask_density_binomial_bound(lakes):
    n, rate = 3600, 0.1
    lo, hi = int(math.ceil(0.05 * n)), int(math.floor(0.15 * n))
    inside = binom.cdf(hi, n, rate) - binom.cdf(lo - 1, n, rate)
    assert inside >= 0.999
    lk = replace(lakes[0], obs_rate=rate)
    truth = simkit.simulate(lk, simkit.gen_weather(lk, 10, 0))
    for seed in range(20):
        y, m = simkit.sample_observations(truth, lk, 0.3, seed)["T_epi"]
        assert 0.05 <= m.mean() <= 0.15


def test_negative_noise_rejected(lakes):
    truth = simkit.simulate(lakes[0], simkit.gen_weather(lakes[0], 1, 0))
    with pytest.raises(InvalidArgument):
        simkit.sample_observations(truth, lakes[0], -1.0, 0)


def test_export_round_trip(tmp_path):
    recs = simkit.generate_benchmark(n_lakes=3, n_years=1, seed=2)
    paths = simkit.export(recs, tmp_path, header="config=abc seed=0")
    assert len(paths) == 3 + 1
    back = simkit.load_benchmark(tmp_path)
    for a, b in zip(recs, back):
        assert simkit.lake_to_dict(a.lake) == simkit.lake_to_dict(b.lake)
        assert np.array_equal(a.drivers.air_temp, b.drivers.air_temp)
        assert np.array_equal(a.drivers.heatwave, b.drivers.heatwave)
        for t in simkit.TASKS:
            assert np.array_equal(a.sim[t], b.sim[t])
            assert np.array_equal(a.obs[t], b.obs[t], equal_nan=True)
            assert np.array_equal(a.mask[t], b.mask[t])


def test_load_missing_directory(tmp_path):
    with pytest.raises(FormatError):
        simkit.load_benchmark(tmp_path / "nope")
