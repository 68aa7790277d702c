"""Configuration-driven Monte-Carlo runs of the estimation and throughput studies.

Randomness
----------
Every trial draws from its own generator,
``default_rng(SeedSequence(seed, spawn_key=(stream, trial, ...)))``, so a
``(config, seed)`` pair fixes every output and trials do not depend on each
other. Inside one trial the geometry, channels, pilots and a unit-variance
noise draw are shared by all estimators, pilot lengths and SNR points: the
pilot book is drawn for the largest ``G`` and truncated, and the noise is
rescaled per SNR.
"""

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .channel_model import (PathLossModel, drop_edge_group, hex_layout,
                            sample_group_supports, synthesize_channels, unitary_dft)
from .errors import ConfigError, UnderdeterminedError
from .estimators import (EstimatorConfig, jmu_omp, jmumc_omp, oracle_ls,
                         per_cell_single_omp)
from .linalg import pinv_solve
from .pilots import (assemble_sensing_matrix, design_pilot_book, group_active_cells,
                     simulate_feedback)
from .precoding import evaluate_throughput, select_serving_sets

__all__ = [
    "ScenarioConfig",
    "ResultRow",
    "ESTIMATORS",
    "parse_config",
    "load_config",
    "apply_overrides",
    "run_mse_experiment",
    "run_throughput_experiment",
    "calibrate_gamma",
    "format_csv",
    "write_csv",
]

log = logging.getLogger(__name__)

ESTIMATORS = ("jmumc_omp", "jmu_omp", "single_cell_joint_omp", "oracle_ls")
GREEDY = ESTIMATORS[:3]
PERFECT = "perfect_csit"
CSV_HEADER = ("experiment", "estimator", "G", "rho_edge_dB", "metric", "value", "trials", "seed")

# substream tags
_MSE, _THROUGHPUT, _CALIBRATION = 0, 1, 2


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario and run parameters. Field names double as config-file keys."""

    L: int = 7
    M: int = 128
    K: int = 10
    N: int = 24
    P: int = 50
    radius_km: float = 1.0
    alpha: float = 3.8
    d_min_km: float = 0.035
    sector_deg: float = 60.0
    s: int = 6
    c_overlap: int = 4
    n_serve: int = 3
    G_list: Tuple[int, ...] = (30, 40, 50, 55, 60, 70, 80)
    G_throughput: int = 55
    rho_edge_list_dB: Tuple[float, ...] = (10.0, 15.0, 20.0, 25.0, 30.0)
    rho_th_schedule: Tuple[float, ...] = (3.0, 5.0, 10.0, 10.0, 10.0)
    rho_th_unit: str = "linear"
    gamma_th_schedule: Tuple[float, ...] = (0.006, 0.004, 0.002, 0.0004, 0.0003)
    gamma_mode: str = "fixed"
    gamma_grid: Tuple[float, ...] = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)
    calibration_trials: int = 10
    trials: int = 100
    seed: int = 0
    f_c: float = 2e9
    f_s: float = 10e6
    tau_max: float = 5e-6
    derive_P: bool = False

    def __post_init__(self):
        if self.derive_P:
            object.__setattr__(self, "P", int(round(self.f_s * self.tau_max)))
        self._validate()

    def _validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(msg, key)

        need(self.L in (1, 7), "L", f"only 1 or 7 cells are supported, got {self.L}")
        for key in ("M", "K", "N", "P", "n_serve", "trials", "calibration_trials", "G_throughput"):
            need(getattr(self, key) >= 1, key, "must be at least 1")
        need(self.radius_km > 0, "radius_km", "must be positive")
        need(self.alpha > 0, "alpha", "must be positive")
        need(self.d_min_km > 0, "d_min_km", "must be positive")
        need(0 < self.sector_deg <= 360, "sector_deg", "must lie in (0, 360]")
        need(1 <= self.s <= self.M, "s", f"need 1 <= s <= M, got {self.s}")
        need(0 <= self.c_overlap <= self.s, "c_overlap", "need 0 <= c_overlap <= s")
        need(len(self.G_list) > 0 and min(self.G_list) >= 1, "G_list",
             "need at least one positive G")
        need(len(self.rho_edge_list_dB) > 0, "rho_edge_list_dB", "need at least one SNR point")
        n_rho = len(self.rho_edge_list_dB)
        need(len(self.rho_th_schedule) == n_rho, "rho_th_schedule",
             f"needs {n_rho} entries to match rho_edge_list_dB")
        need(len(self.gamma_th_schedule) == n_rho, "gamma_th_schedule",
             f"needs {n_rho} entries to match rho_edge_list_dB")
        need(min(self.gamma_th_schedule) >= 0, "gamma_th_schedule", "must be non-negative")
        need(self.rho_th_unit in ("linear", "dB"), "rho_th_unit", "must be 'linear' or 'dB'")
        need(self.gamma_mode in ("fixed", "calibrated"), "gamma_mode",
             "must be 'fixed' or 'calibrated'")
        need(len(self.gamma_grid) > 0 and min(self.gamma_grid) > 0, "gamma_grid",
             "needs positive candidates")
        for rho_db, th in zip(self.rho_edge_list_dB, self.rho_th_thresholds()):
            need(10 ** (rho_db / 10) > th, "rho_th_schedule",
                 f"threshold {th:g} leaves the serving cell inactive at {rho_db:g} dB")
        need(self.N <= min(self.n_serve, self.L) * self.M, "N",
             "more scheduled users than serving antennas")

    def rho_th_thresholds(self) -> List[float]:
        """Linear SNR thresholds, one per SNR point."""
        if self.rho_th_unit == "dB":
            return [10 ** (t / 10) for t in self.rho_th_schedule]
        return [float(t) for t in self.rho_th_schedule]

    @property
    def edge_gain(self) -> float:
        return PathLossModel(self.alpha, self.d_min_km).gain(self.radius_km)

    def noise_var(self, rho_edge_dB: float) -> float:
        """Noise power that puts the cell edge at ``rho_edge_dB`` (unit pilot power)."""
        return self.edge_gain / 10 ** (rho_edge_dB / 10)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    estimator: str
    G: int
    rho_edge_dB: float
    metric: str
    value: float
    trials: int
    seed: int


# ----------------------------------------------------------------------------
# config files

_SCALARS = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def _parse_value(key: str, text: str):
    kind = _SCALARS[key]
    text = text.strip()
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in (bool, "bool"):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind in (str, "str"):
            return text
        elem = int if "int" in str(kind) else float
        items = [t for t in text.replace(",", " ").split() if t]
        return tuple(elem(t) for t in items)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r}", key) from None


def parse_config(text: str, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Read ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    values = {}
    for num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {num} is not 'key = value': {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _SCALARS:
            raise ConfigError("unknown configuration key", key)
        values[key] = _parse_value(key, val)
    return dataclasses.replace(base or ScenarioConfig(), **values)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_overrides(cfg: ScenarioConfig, overrides: Iterable[str]) -> ScenarioConfig:
    """Apply ``key=value`` strings on top of ``cfg``."""
    return parse_config("\n".join(overrides), base=cfg)


# ----------------------------------------------------------------------------
# scenario generation

def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class _Group:
    gains: np.ndarray  # (K, L)
    channels: object  # AngularChannelSet
    signal: np.ndarray  # (P, G, K) noiseless feedback
    noise: np.ndarray  # (P, G, K) unit variance


class _Scenario:
    """Static pieces shared by every trial of one config."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.layout = hex_layout(cfg.L, cfg.radius_km)
        self.F = unitary_dft(cfg.M)
        self.pl = PathLossModel(cfg.alpha, cfg.d_min_km)

    def group(self, rng, book) -> _Group:
        c = self.cfg
        drop = drop_edge_group(self.layout, c.K, rng, c.sector_deg)
        gains = self.pl.gain(drop.distances)
        per_cell = [sample_group_supports(c.M, c.s, c.c_overlap, c.K, rng=rng)
                    for _ in range(c.L)]
        supports = [[per_cell[l][k] for l in range(c.L)] for k in range(c.K)]
        channels = synthesize_channels(supports, gains, c.P, c.M, rng)
        fb = simulate_feedback(channels, book, self.F, 1.0, rng)
        return _Group(gains, channels, fb.R - fb.noise, fb.noise)

    def trial(self, rng, G_max):
        c = self.cfg
        book = design_pilot_book(c.L, c.M, c.P, G_max, rng)
        return book, self.group(rng, book)


def _estimate(name, R, Theta, M, true_supports, gamma):
    cfg = EstimatorConfig(gamma)
    if name == "jmumc_omp":
        return jmumc_omp(R, Theta, cfg).H_hat
    if name == "jmu_omp":
        return jmu_omp(R, Theta, cfg).H_hat
    if name == "single_cell_joint_omp":
        return per_cell_single_omp(R, Theta, M, cfg).H_hat
    if name == "oracle_ls":
        try:
            return oracle_ls(R, Theta, true_supports).H_hat
        except UnderdeterminedError:
            return _min_norm_oracle(R, Theta, true_supports)
    raise ValueError(f"unknown estimator {name!r}")


def _min_norm_oracle(R, Theta, true_supports):
    # short pilots at high SNR: more true bins than measurements
    log.debug("true support exceeds G=%d, oracle falls back to minimum-norm LS",
                R.shape[1])
    P, G, K = R.shape
    H = np.zeros((P, Theta.shape[2], K), dtype=np.complex128)
    for k, sup in enumerate(true_supports):
        cols = np.unique(np.asarray(sup, dtype=int))
        if cols.size:
            H[:, cols, k] = pinv_solve(Theta[:, :, cols], R[:, :, k:k + 1])[0][..., 0]
    return H


def _nmse_linear(H_hat, H_true) -> float:
    return float(np.sum(np.abs(H_hat - H_true) ** 2) / np.sum(np.abs(H_true) ** 2))


class _Point:
    """Everything that depends on one (trial, SNR point) but not on G."""

    def __init__(self, scen: _Scenario, book, grp: _Group, rho_idx: int):
        cfg = scen.cfg
        self.nv = cfg.noise_var(cfg.rho_edge_list_dB[rho_idx])
        th = cfg.rho_th_thresholds()[rho_idx]
        self.pi = group_active_cells(grp.gains * (1.0 / self.nv), th)
        self.theta = assemble_sensing_matrix(book, scen.F, self.pi)
        self.H_true = grp.channels.aggregate(self.pi)
        self.supports = grp.channels.aggregate_supports(self.pi)
        self.grp = grp

    def feedback(self, G):
        return self.grp.signal[:, :G] + math.sqrt(self.nv) * self.grp.noise[:, :G]


# ----------------------------------------------------------------------------
# pruning threshold selection

def calibrate_gamma(cfg: ScenarioConfig, G: int, rho_idx: int,
                    estimators: Sequence[str] = GREEDY) -> Dict[str, float]:
    """Pick ``gamma_th`` per estimator by mean NMSE on calibration drops.

    Calibration drops come from their own substream, disjoint from the
    evaluation trials. Every candidate of ``cfg.gamma_grid`` is scored, then
    the geometric midpoints next to the best candidate; ties keep the larger
    threshold, which is the cheaper run.
    """
    scen = _Scenario(cfg)
    grid = sorted(set(cfg.gamma_grid))
    chosen = {}
    data = []

    def score(name, gammas):
        err = np.zeros(len(gammas))
        for t in range(cfg.calibration_trials):
            if t >= len(data):
                book, grp = scen.trial(_rng(cfg.seed, _CALIBRATION, G, rho_idx, t), G)
                data.append((book, grp))
            book, grp = data[t]
            pt = _Point(scen, book, grp, rho_idx)
            R = pt.feedback(G)
            for j, g in enumerate(gammas):
                err[j] += _nmse_linear(_estimate(name, R, pt.theta, cfg.M, pt.supports, g),
                                       pt.H_true)
        return err / cfg.calibration_trials

    for name in estimators:
        err = score(name, grid)
        best = _last_argmin(err)
        cand = list(grid)
        nbrs = [math.sqrt(grid[best] * grid[j]) for j in (best - 1, best + 1)
                if 0 <= j < len(grid)]
        if nbrs:
            cand += nbrs
            err = np.concatenate([err, score(name, nbrs)])
        order = np.argsort(cand)
        cand = [cand[i] for i in order]
        chosen[name] = float(cand[_last_argmin(err[order])])
        log.info("gamma_th[%s] at G=%d, %g dB -> %g", name, G,
                 cfg.rho_edge_list_dB[rho_idx], chosen[name])
    return chosen


def _last_argmin(x) -> int:
    x = np.asarray(x)
    return int(np.flatnonzero(x == x.min())[-1])


class _Gammas:
    """Threshold per (estimator, G, SNR index), fixed or calibrated on demand."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.cache = {}

    def __call__(self, name: str, G: int, rho_idx: int) -> float:
        if name not in GREEDY:
            return 0.0
        if self.cfg.gamma_mode == "fixed":
            return float(self.cfg.gamma_th_schedule[rho_idx])
        if (G, rho_idx) not in self.cache:
            self.cache[(G, rho_idx)] = calibrate_gamma(self.cfg, G, rho_idx)
        return self.cache[(G, rho_idx)][name]

    def table(self):
        return {key: dict(val) for key, val in sorted(self.cache.items())}


# ----------------------------------------------------------------------------
# experiments

def run_mse_experiment(cfg: ScenarioConfig, return_gammas: bool = False):
    """Mean NMSE of every estimator over ``cfg.trials`` drops.

    One row per (G, SNR point, estimator). The NMSE of a trial is taken over
    the aggregate channel of the group's active cells; trials are averaged
    in linear scale and reported in dB.
    """
    scen = _Scenario(cfg)
    gam = _Gammas(cfg)
    G_list = sorted(set(cfg.G_list))
    n_rho = len(cfg.rho_edge_list_dB)
    for G in G_list:
        for r in range(n_rho):
            for name in GREEDY:
                gam(name, G, r)
    acc = np.zeros((len(G_list), n_rho, len(ESTIMATORS)))
    for t in range(cfg.trials):
        book, grp = scen.trial(_rng(cfg.seed, _MSE, t), max(G_list))
        for r in range(n_rho):
            pt = _Point(scen, book, grp, r)
            for gi, G in enumerate(G_list):
                R = pt.feedback(G)
                theta = pt.theta[:, :G]
                for e, name in enumerate(ESTIMATORS):
                    H = _estimate(name, R, theta, cfg.M, pt.supports, gam(name, G, r))
                    acc[gi, r, e] += _nmse_linear(H, pt.H_true)
        log.info("mse trial %d/%d done", t + 1, cfg.trials)
    acc /= cfg.trials
    rows = []
    for gi, G in enumerate(G_list):
        for r, rho in enumerate(cfg.rho_edge_list_dB):
            for e, name in enumerate(ESTIMATORS):
                rows.append(ResultRow("mse", name, G, float(rho), "nmse_dB",
                                      10 * math.log10(acc[gi, r, e]), cfg.trials, cfg.seed))
    rows = _sorted(rows)
    return (rows, gam.table()) if return_gammas else rows


def _scheduled_rows(H_hat, pi, L, M):
    """User 0's aggregate estimate placed into an all-cell ``(P, L*M)`` row."""
    P = H_hat.shape[0]
    row = np.zeros((P, L, M), dtype=np.complex128)
    row[:, list(pi)] = H_hat[:, :, 0].reshape(P, len(pi), M)
    return row.reshape(P, L * M)


def run_throughput_experiment(cfg: ScenarioConfig, return_gammas: bool = False):
    """Mean per-user throughput of cluster-based joint ZF per SNR point.

    Each drop places ``cfg.N`` groups of ``cfg.K`` users on the edge of the
    central cell and schedules one user from every group. CSIT comes from
    each estimator run on the user's whole group; ``perfect_csit`` uses the
    true channels of every cell. Precoders use a total power of ``N`` per
    subcarrier.
    """
    scen = _Scenario(cfg)
    gam = _Gammas(cfg)
    G = cfg.G_throughput
    names = (PERFECT,) + ESTIMATORS
    n_rho = len(cfg.rho_edge_list_dB)
    for r in range(n_rho):
        for name in GREEDY:
            gam(name, G, r)
    L, M, N, P = cfg.L, cfg.M, cfg.N, cfg.P
    acc = np.zeros((n_rho, len(names)))
    for d in range(cfg.trials):
        book = design_pilot_book(L, M, P, G, _rng(cfg.seed, _THROUGHPUT, d))
        for r in range(n_rho):
            H = {name: np.zeros((P, N, L * M), dtype=np.complex128) for name in names}
            gains = np.zeros((N, L))
            for j in range(N):
                grp = scen.group(_rng(cfg.seed, _THROUGHPUT, d, j + 1), book)
                gains[j] = grp.gains[0]
                H[PERFECT][:, j] = grp.channels.coeffs[0].transpose(1, 0, 2).reshape(P, L * M)
                pt = _Point(scen, book, grp, r)
                R = pt.feedback(G)
                for name in ESTIMATORS:
                    Hh = _estimate(name, R, pt.theta, M, pt.supports, gam(name, G, r))
                    H[name][:, j] = _scheduled_rows(Hh, pt.pi, L, M)
            assignment = select_serving_sets(gains, cfg.n_serve)
            nv = cfg.noise_var(cfg.rho_edge_list_dB[r])
            for e, name in enumerate(names):
                rep = evaluate_throughput(H[PERFECT], H[name], assignment, nv, float(N),
                                          range(N), M)
                acc[r, e] += rep.mean_rate
        log.info("throughput drop %d/%d done", d + 1, cfg.trials)
    acc /= cfg.trials
    rows = [ResultRow("throughput", name, G, float(rho), "throughput_bit_per_user",
                      float(acc[r, e]), cfg.trials, cfg.seed)
            for r, rho in enumerate(cfg.rho_edge_list_dB) for e, name in enumerate(names)]
    rows = _sorted(rows)
    return (rows, gam.table()) if return_gammas else rows


_ORDER = {name: i for i, name in enumerate((PERFECT,) + ESTIMATORS)}


def _sorted(rows: List[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=lambda r: (r.experiment, r.G, r.rho_edge_dB, _ORDER[r.estimator]))


# ----------------------------------------------------------------------------
# output

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6g}"


def format_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        if not math.isfinite(r.value):
            raise ValueError(f"non-finite value in row {r}")
        w.writerow([r.experiment, r.estimator, r.G, _fmt(r.rho_edge_dB), r.metric,
                    _fmt(r.value), r.trials, r.seed])
    return buf.getvalue()


def write_csv(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(rows))
