"""Synthetic multi-lake benchmark.

Weather drivers, a two-layer toy lake model for temperature and dissolved
oxygen, biased process-model labels and sparse noisy observations.

Every constant of the toy physics lives in ``SimParams`` / ``WeatherParams``;
the tables below are the single place where defaults are set.

SimParams (temperature)
    b0, b1, b2, b3    equilibrium temperature  T_eq = b0 + b1*A + b2*R - b3*u   [degC]
    t_eq_floor        lower clamp on T_eq (no ice model)                          [degC]
    k1_coef           surface relaxation rate k1 = k1_coef / depth                [m/day]
    k2                hypolimnion coupling rate                                   [1/day]
    u_mix             wind speed above which entrainment happens                  [m/s]
    entrain_frac      fraction of the gap to the mixed value closed per event     [-]
    epi_frac          epilimnion thickness as a fraction of depth                 [-]
    epi_min, epi_max  clamps on epilimnion thickness                              [m]

SimParams (oxygen)
    k_atm, c_u        reaeration rate k_atm*(1 + c_u*u), capped at 1              [1/day]
    g_p               gross production per unit shortwave and trophic index      [g/m3/day per W/m2]
    g_r               respiration at 20 degC                                      [g/m3/day]
    theta             Arrhenius temperature coefficient                           [-]
    s_sed             sediment oxygen demand                                      [g/m2/day]
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace, asdict
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, SimulationDiverged, FormatError

DAYS_PER_MONTH = 30
DAYS_PER_YEAR = 360
SUMMER_MONTHS = (6, 7, 8)
TASKS = ("T_epi", "T_hyp", "T_total", "DO_epi", "DO_hyp", "DO_total")
DRIVER_COLUMNS = ("air_temp", "shortwave", "wind", "heatwave")


@dataclass
class LakeMeta:
    lake_id: int
    depth: float
    log_area: float
    latitude: float
    longitude: float
    trophic_index: float
    land_use: tuple
    obs_rate: float
    cluster_id: int = -1

    def static_features(self):
        return np.array(
            [self.depth, self.log_area, self.latitude, self.longitude, self.trophic_index, *self.land_use],
            dtype=np.float64,
        )


STATIC_FEATURE_NAMES = (
    "depth", "log_area", "latitude", "longitude", "trophic_index",
    "land_forest", "land_wetland", "land_agri", "land_urban",
)


@dataclass
class DailyDrivers:
    """Columnar daily weather; ``day`` counts from 0 over the whole record."""

    day: np.ndarray
    air_temp: np.ndarray
    shortwave: np.ndarray
    wind: np.ndarray
    heatwave: np.ndarray

    def __len__(self):
        return len(self.day)

    @property
    def month(self):
        return (self.day % DAYS_PER_YEAR) // DAYS_PER_MONTH + 1

    @property
    def year(self):
        return self.day // DAYS_PER_YEAR + 1


@dataclass
class TruthSeries:
    T_epi: np.ndarray
    T_hyp: np.ndarray
    T_total: np.ndarray
    DO_epi: np.ndarray
    DO_hyp: np.ndarray
    DO_total: np.ndarray
    stratified: np.ndarray

    def task(self, name):
        if name not in TASKS:
            raise InvalidArgument(f"unknown task {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class WeatherParams:
    a1: float = 15.0            # seasonal air temperature amplitude, degC
    phase: float = 110.0        # air temperature peaks at day phase + 90
    ar_rho: float = 0.7
    ar_sd_regional: float = 2.2
    ar_sd_local: float = 1.0
    r0: float = 170.0
    r1: float = 110.0
    phase_r: float = 80.0
    r_sd: float = 40.0
    wind_mean: float = 3.5
    wind_log_sd: float = 0.5
    p_hw: float = 0.08
    dT_hw: float = 6.0
    L_hw: int = 10

    def base_air_temp(self, latitude):
        return 8.0 - 0.8 * (latitude - 44.0)


@dataclass(frozen=True)
class SimParams:
    b0: float = 2.0
    b1: float = 0.75
    b2: float = 0.02
    b3: float = 0.3
    t_eq_floor: float = 0.0
    k1_coef: float = 1.2
    k2: float = 0.005
    u_mix: float = 7.0
    entrain_frac: float = 0.3
    epi_frac: float = 0.4
    epi_min: float = 1.0
    epi_max: float = 6.0
    k_atm: float = 0.15
    c_u: float = 0.05
    g_p: float = 0.002
    g_r: float = 0.2
    theta: float = 1.072
    s_sed: float = 1.0
    summer_months: tuple = SUMMER_MONTHS

    def validate(self):
        for name in ("b1", "k1_coef", "k2", "u_mix", "entrain_frac", "k_atm", "g_r", "theta", "s_sed"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgument(f"SimParams.{name} must be > 0, got {v}")
        if self.entrain_frac > 1:
            raise InvalidArgument("SimParams.entrain_frac must be <= 1")

    def biased(self, k_atm=0.8, s_sed=1.25, b1=0.9):
        return replace(self, k_atm=self.k_atm * k_atm, s_sed=self.s_sed * s_sed, b1=self.b1 * b1)


DEFAULT_BIAS = {"k_atm": 0.8, "s_sed": 1.25, "b1": 0.9}


def do_saturation(T):
    """Oxygen saturation in g/m3 for water temperature T in degC."""
    return 14.62 - 0.3898 * T + 0.006969 * T ** 2 - 0.00005897 * T ** 3


def gen_lakes(n_lakes, seed):
    """Draw lakes from three morphometric groups (shallow, medium, deep)."""
    if n_lakes < 2:
        raise InvalidArgument(f"n_lakes must be >= 2, got {n_lakes}")
    rng = np.random.default_rng(seed)
    groups = [
        # depth, log_area, latitude, trophic, land-use concentration
        dict(depth=(2.5, 6.0), area=(0.0, 1.5), lat=(41.5, 43.5), troph=(0.6, 0.95), alpha=(1, 2, 6, 2)),
        dict(depth=(8.0, 13.0), area=(1.0, 2.5), lat=(43.5, 45.5), troph=(0.3, 0.6), alpha=(3, 3, 3, 1)),
        dict(depth=(18.0, 29.0), area=(2.0, 3.5), lat=(45.5, 47.5), troph=(0.05, 0.3), alpha=(7, 3, 1, 1)),
    ]
    lakes = []
    for i in range(n_lakes):
        g = groups[i % len(groups)]
        land = rng.dirichlet(g["alpha"])
        land = land / land.sum()
        lakes.append(LakeMeta(
            lake_id=i,
            depth=float(rng.uniform(*g["depth"])),
            log_area=float(rng.uniform(*g["area"])),
            latitude=float(rng.uniform(*g["lat"])),
            longitude=float(rng.uniform(-95.0, -85.0)),
            trophic_index=float(rng.uniform(*g["troph"])),
            land_use=tuple(float(v) for v in land),
            obs_rate=float(rng.uniform(0.02, 0.30)),
        ))
    return lakes


def _ar1(rng, n, rho, sd):
    eps = rng.normal(0.0, sd, size=n)
    out = np.empty(n)
    prev = 0.0
    for t in range(n):
        prev = rho * prev + eps[t]
        out[t] = prev
    return out


def gen_weather(lake, n_years, seed, params=WeatherParams()):
    """Daily drivers for one lake.

    Weather shares a regional component (anomalies and heat waves drawn from
    ``seed`` alone) so lakes see the same synoptic events in the same month,
    plus a local anomaly drawn from ``(seed, lake_id)``.
    """
    if n_years < 1:
        raise InvalidArgument(f"n_years must be >= 1, got {n_years}")
    n = DAYS_PER_YEAR * n_years
    day = np.arange(n)
    doy = day % DAYS_PER_YEAR
    regional = np.random.default_rng([seed, 0xA1])
    local = np.random.default_rng([seed, 0xB2, lake.lake_id])

    anomaly = _ar1(regional, n, params.ar_rho, params.ar_sd_regional)
    heatwave = np.zeros(n, dtype=bool)
    hw_draw = regional.random(n // DAYS_PER_MONTH)
    hw_start = regional.integers(0, DAYS_PER_MONTH - params.L_hw + 1, size=n // DAYS_PER_MONTH)
    for mi in range(n // DAYS_PER_MONTH):
        if hw_draw[mi] < params.p_hw:
            s = mi * DAYS_PER_MONTH + hw_start[mi]
            heatwave[s:s + params.L_hw] = True
    r_noise = regional.normal(0.0, params.r_sd, size=n)
    wind_z = regional.normal(size=n)

    anomaly = anomaly + _ar1(local, n, params.ar_rho, params.ar_sd_local)
    wind_z = 0.8 * wind_z + 0.6 * local.normal(size=n)

    air = params.base_air_temp(lake.latitude) + params.a1 * np.sin(2 * np.pi * (doy - params.phase) / 360.0) + anomaly
    air = air + params.dT_hw * heatwave
    sw = np.maximum(0.0, params.r0 + params.r1 * np.sin(2 * np.pi * (doy - params.phase_r) / 360.0) + r_noise)
    s = params.wind_log_sd
    wind = params.wind_mean * np.exp(s * wind_z - 0.5 * s * s)
    return DailyDrivers(day=day, air_temp=air, shortwave=sw, wind=wind, heatwave=heatwave)


def layer_geometry(lake, params):
    """Epilimnion volume fraction and hypolimnion thickness (m)."""
    z_epi = min(max(params.epi_frac * lake.depth, params.epi_min), params.epi_max)
    z_epi = min(z_epi, 0.8 * lake.depth)
    return z_epi / lake.depth, lake.depth - z_epi


def entrain(epi, hyp, f_epi, frac):
    """Move both layers a fraction ``frac`` toward their volume-weighted mean."""
    mean = f_epi * epi + (1.0 - f_epi) * hyp
    return epi + frac * (mean - epi), hyp + frac * (mean - hyp)


def simulate(lake, drivers, params=SimParams()):
    """Run the two-layer toy model with daily explicit Euler steps."""
    if len(drivers) == 0:
        raise InvalidArgument("drivers are empty")
    params.validate()
    p = params
    f_epi, z_hyp = layer_geometry(lake, p)
    k1 = min(p.k1_coef / lake.depth, 1.0)
    summer = set(p.summer_months)

    n = len(drivers)
    out = {name: np.empty(n) for name in TASKS}
    strat = np.zeros(n, dtype=bool)
    A, R, U = drivers.air_temp.tolist(), drivers.shortwave.tolist(), drivers.wind.tolist()
    months = drivers.month.tolist()

    T_epi = T_hyp = 4.0
    DO_epi = DO_hyp = do_saturation(4.0)
    layered = False
    for t in range(n):
        now_layered = months[t] in summer
        if layered and not now_layered:
            T_epi = T_hyp = f_epi * T_epi + (1 - f_epi) * T_hyp
            DO_epi = DO_hyp = f_epi * DO_epi + (1 - f_epi) * DO_hyp
        layered = now_layered

        strat[t] = layered
        out["T_epi"][t], out["T_hyp"][t] = T_epi, T_hyp
        out["DO_epi"][t], out["DO_hyp"][t] = DO_epi, DO_hyp
        out["T_total"][t] = f_epi * T_epi + (1 - f_epi) * T_hyp if layered else T_epi
        out["DO_total"][t] = f_epi * DO_epi + (1 - f_epi) * DO_hyp if layered else DO_epi

        T_eq = max(p.b0 + p.b1 * A[t] + p.b2 * R[t] - p.b3 * U[t], p.t_eq_floor)
        rate = min(p.k_atm * (1 + p.c_u * U[t]), 1.0)
        nep = p.g_p * R[t] * lake.trophic_index - p.g_r * p.theta ** (T_epi - 20)
        new_T_epi = T_epi + k1 * (T_eq - T_epi)
        new_DO_epi = max(0.0, DO_epi + rate * (do_saturation(T_epi) - DO_epi) + nep)
        if layered:
            new_T_hyp = T_hyp + p.k2 * (T_epi - T_hyp)
            new_DO_hyp = max(0.0, DO_hyp - p.s_sed * p.theta ** (T_hyp - 20) / z_hyp)
            if U[t] > p.u_mix:
                new_T_epi, new_T_hyp = entrain(new_T_epi, new_T_hyp, f_epi, p.entrain_frac)
                new_DO_epi, new_DO_hyp = entrain(new_DO_epi, new_DO_hyp, f_epi, p.entrain_frac)
            if new_T_hyp > new_T_epi:
                # convective overturn keeps the column stably stratified
                new_T_epi, new_T_hyp = entrain(new_T_epi, new_T_hyp, f_epi, 1.0)
                new_DO_epi, new_DO_hyp = entrain(new_DO_epi, new_DO_hyp, f_epi, 1.0)
        else:
            new_T_hyp, new_DO_hyp = new_T_epi, new_DO_epi
        T_epi, T_hyp, DO_epi, DO_hyp = new_T_epi, new_T_hyp, new_DO_epi, new_DO_hyp
        if not (math.isfinite(T_epi) and math.isfinite(T_hyp) and math.isfinite(DO_epi) and math.isfinite(DO_hyp)):
            raise SimulationDiverged(t)
    return TruthSeries(stratified=strat, **out)


def simulate_process_labels(lake, drivers, params=SimParams(), bias=None):
    """Process-model labels: the same simulator run with a biased parameter set."""
    factors = dict(DEFAULT_BIAS) if bias is None else dict(bias)
    return simulate(lake, drivers, params.biased(**factors))


def sample_observations(truth, lake, sigma_obs, seed):
    """Sparse noisy observations; returns ``{task: (y, mask)}``, y is NaN where unobserved."""
    if sigma_obs < 0:
        raise InvalidArgument("sigma_obs must be >= 0")
    out = {}
    for ti, task in enumerate(TASKS):
        rng = np.random.default_rng([seed, 0xC3, lake.lake_id, ti])
        series = truth.task(task)
        mask = rng.random(len(series)) < lake.obs_rate
        noise = rng.normal(0.0, 1.0, size=len(series)) * sigma_obs
        y = np.where(mask, series + noise, np.nan)
        out[task] = (y, mask.astype(np.int8))
    return out


@dataclass
class LakeRecord:
    """Everything the benchmark stores for one lake."""

    lake: LakeMeta
    drivers: DailyDrivers
    sim: dict
    obs: dict
    mask: dict
    truth: TruthSeries = field(default=None, repr=False)


def generate_benchmark(n_lakes=24, n_years=12, seed=7, sim_params=SimParams(), weather=WeatherParams(),
                       bias=None, sigma_obs=0.3):
    lakes = gen_lakes(n_lakes, seed)
    records = []
    for lake in lakes:
        drivers = gen_weather(lake, n_years, seed, weather)
        truth = simulate(lake, drivers, sim_params)
        labels = simulate_process_labels(lake, drivers, sim_params, bias)
        obs = sample_observations(truth, lake, sigma_obs, seed)
        records.append(LakeRecord(
            lake=lake, drivers=drivers,
            sim={t: labels.task(t) for t in TASKS},
            obs={t: obs[t][0] for t in TASKS},
            mask={t: obs[t][1] for t in TASKS},
            truth=truth,
        ))
    return records


# --- CSV export / import -------------------------------------------------------

LAKE_COLUMNS = ("lake_id", "depth", "log_area", "latitude", "longitude", "trophic_index",
                "land_use_0", "land_use_1", "land_use_2", "land_use_3", "obs_rate", "cluster_id")


def _fmt(v):
    return repr(float(v))


def _lake_columns():
    cols = ["lake_id", "year", "month", "day", *DRIVER_COLUMNS]
    cols += [f"sim_{t}" for t in TASKS] + [f"obs_{t}" for t in TASKS] + [f"mask_{t}" for t in TASKS]
    return cols


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def export(records, out_dir, header=""):
    """Write ``lakes.csv`` plus one ``lake_<id>.csv`` per lake; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    lakes_path = out_dir / "lakes.csv"
    with open(lakes_path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LAKE_COLUMNS)
        for r in records:
            lk = r.lake
            w.writerow([lk.lake_id, _fmt(lk.depth), _fmt(lk.log_area), _fmt(lk.latitude), _fmt(lk.longitude),
                        _fmt(lk.trophic_index), *map(_fmt, lk.land_use), _fmt(lk.obs_rate), lk.cluster_id])
    paths.append(lakes_path)
    for r in records:
        path = out_dir / f"lake_{r.lake.lake_id:03d}.csv"
        d = r.drivers
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_lake_columns())
            for t in range(len(d)):
                row = [r.lake.lake_id, int(d.year[t]), int(d.month[t]), int(d.day[t]),
                       _fmt(d.air_temp[t]), _fmt(d.shortwave[t]), _fmt(d.wind[t]), int(d.heatwave[t])]
                row += [_fmt(r.sim[k][t]) for k in TASKS]
                row += [_fmt(r.obs[k][t]) for k in TASKS]
                row += [int(r.mask[k][t]) for k in TASKS]
                w.writerow(row)
        paths.append(path)
    return paths


def load_benchmark(in_dir):
    """Inverse of ``export`` (truth series are not stored)."""
    in_dir = Path(in_dir)
    lakes_path = in_dir / "lakes.csv"
    if not lakes_path.exists():
        raise FormatError(f"missing {lakes_path}")
    records = []
    for row in _read_rows(lakes_path):
        lake = LakeMeta(
            lake_id=int(row["lake_id"]), depth=float(row["depth"]), log_area=float(row["log_area"]),
            latitude=float(row["latitude"]), longitude=float(row["longitude"]),
            trophic_index=float(row["trophic_index"]),
            land_use=tuple(float(row[f"land_use_{i}"]) for i in range(4)),
            obs_rate=float(row["obs_rate"]), cluster_id=int(row["cluster_id"]),
        )
        path = in_dir / f"lake_{lake.lake_id:03d}.csv"
        if not path.exists():
            raise FormatError(f"missing {path}")
        rows = _read_rows(path)
        try:
            col = {c: [r[c] for r in rows] for c in _lake_columns()}
        except KeyError as exc:
            raise FormatError(f"{path}: missing column {exc}") from None
        drivers = DailyDrivers(
            day=np.array(col["day"], dtype=np.int64),
            air_temp=np.array(col["air_temp"], dtype=np.float64),
            shortwave=np.array(col["shortwave"], dtype=np.float64),
            wind=np.array(col["wind"], dtype=np.float64),
            heatwave=np.array(col["heatwave"], dtype=np.int64).astype(bool),
        )
        records.append(LakeRecord(
            lake=lake, drivers=drivers,
            sim={t: np.array(col[f"sim_{t}"], dtype=np.float64) for t in TASKS},
            obs={t: np.array(col[f"obs_{t}"], dtype=np.float64) for t in TASKS},
            mask={t: np.array(col[f"mask_{t}"], dtype=np.int8) for t in TASKS},
        ))
    return records


def lake_to_dict(lake):
    return asdict(lake)
