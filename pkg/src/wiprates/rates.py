"""Rate experiments: empirical ``W_q(W_n, W)`` across ``n`` and power-law fits.

The distance to Brownian motion is estimated two-sample: ``N`` paths of
``W_n`` against ``N`` independent Brownian paths with the system's
variance, matched exactly under the grid sup metric.  Because two
independent ``N``-clouds are never at distance zero, each table also records
the self-distance floor (Brownian against Brownian at the same ``N`` and
grid); only rows well above the floor carry information about ``n``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import rng as streams
from .dynamics import DEFAULT_BURN_IN, SuspensionSystem, make_system, sample_initial_arrays
from .errors import ConfigurationError, FitError, InputError, SizeError
from .process import DEFAULT_GRID, QUADRATURE_STEP, ObservableSpec, estimate_variance, get_observable, wn_paths
from .transport import ASSIGNMENT_CAP, distance_matrix, sample_brownian
from .ulam import build_ulam, cell_average, center, solve_coboundary, suspension_ulam, unit_roof_psi

MIN_VARIANCE = 0.01
FLOOR_FACTOR = 2.0
FIT_MODES = ("free", "fixed", "zero")


@dataclass(frozen=True)
class ExperimentPlan:
    system: str = "doubling"
    beta: float | None = None
    roof: str = "constant"
    observable: str = "cos"
    q: float = 1.0
    n_values: tuple = tuple(2**k for k in range(7, 14))
    samples: int = 256
    grid: int = DEFAULT_GRID
    seed: int = 0
    bootstrap: int = 200
    floor_reps: int = 4
    variance_source: str = "auto"
    ulam_cells: int = 1024
    mean_cells: int | None = None
    variance_time: float = 1e7
    burn_in: int = DEFAULT_BURN_IN
    step: float = QUADRATURE_STEP
    allow_small: bool = False

    def __post_init__(self):
        n = tuple(int(v) for v in self.n_values)
        object.__setattr__(self, "n_values", n)
        if len(set(n)) < 2 or any(b <= a for a, b in zip(n, n[1:])):
            raise ConfigurationError(f"n values must be strictly increasing with >= 2 entries, got {n}")
        if n[0] < 1:
            raise ConfigurationError("n values must be >= 1")
        if self.samples < (1 if self.allow_small else 32):
            raise ConfigurationError(f"samples per n must be >= 32, got {self.samples}")
        if self.samples > ASSIGNMENT_CAP:
            raise SizeError(f"samples per n {self.samples} exceed the assignment cap {ASSIGNMENT_CAP}")
        if not self.q >= 1:
            raise ConfigurationError(f"q must be >= 1, got {self.q}")
        if self.grid < 2:
            raise ConfigurationError(f"path grid must be >= 2, got {self.grid}")
        if self.system != "doubling" and not (self.beta is not None and 0.0 < self.beta < 0.5):
            raise ConfigurationError(f"beta must lie in (0, 1/2) for rate runs, got {self.beta}")
        if self.variance_source not in ("auto", "ulam", "green-kubo"):
            raise ConfigurationError(f"unknown variance source {self.variance_source!r}")


@dataclass
class RateRow:
    n: int
    q: float
    estimate: float
    stderr: float
    N: int
    grid_m: int
    solver: str
    seed: int
    floor: float


@dataclass
class RateTable:
    rows: list = field(default_factory=list)
    sigma2: float = float("nan")
    variance_source: str = ""
    mean: float = 0.0
    mean_source: str = ""

    COLUMNS = ("n", "q", "estimate", "stderr", "N", "grid_m", "solver", "seed", "floor")

    @property
    def n(self):
        return np.array([r.n for r in self.rows], dtype=float)

    @property
    def estimates(self):
        return np.array([r.estimate for r in self.rows])

    @property
    def stderrs(self):
        return np.array([r.stderr for r in self.rows])

    def above_floor(self, factor=FLOOR_FACTOR):
        """Rows whose estimate exceeds ``factor`` times the self-distance floor."""
        return RateTable([r for r in self.rows if r.estimate > factor * r.floor], self.sigma2, self.variance_source, self.mean, self.mean_source)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r.n, repr(r.q), repr(r.estimate), repr(r.stderr), r.N, r.grid_m, r.solver, r.seed, repr(r.floor)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.DictReader(line for line in fh if not line.startswith("#"))
            rows = [
                RateRow(int(d["n"]), float(d["q"]), float(d["estimate"]), float(d["stderr"]), int(d["N"]),
                        int(d["grid_m"]), d["solver"], int(d["seed"]), float(d["floor"]))
                for d in reader
            ]
        return cls(rows)


@dataclass
class RateFit:
    alpha: float
    log_c: float
    gamma: float
    r2: float
    mode: str

    def record(self):
        return {"alpha": self.alpha, "logC": self.log_c, "gamma": self.gamma, "r2": self.r2, "mode": self.mode}

    def to_line(self):
        return ",".join(f"{k}={v!r}" if not isinstance(v, str) else f"{k}={v}" for k, v in self.record().items())


def theoretical_rate(p, n):
    """Shape of the rate bound with unit constant: ``n^{-1/2+1/p} (log n)^{1/2}`` below p=4, ``n^{-1/4} (log n)^{1/2}`` from p=4 on."""
    if not p > 2:
        raise InputError(f"order p must exceed 2, got {p}")
    n = np.asarray(n, dtype=float)
    if np.any(n < 3):
        raise InputError("n must be >= 3")
    exponent = -0.5 + 1.0 / p if p < 4 else -0.25
    out = n**exponent * np.sqrt(np.log(n))
    return float(out) if out.ndim == 0 else out


def fit_rate(table, mode="fixed", floor_factor=FLOOR_FACTOR) -> RateFit:
    """Weighted least squares of ``log W = log C + alpha log n + gamma log log n``.

    ``mode``: ``free`` fits gamma, ``fixed`` holds gamma = 1/2, ``zero``
    drops the log factor.  Only rows above ``floor_factor`` times their
    self-distance floor enter the fit (``floor_factor=0`` keeps all).  Weights are ``(estimate / stderr)^2``, the inverse
    delta-method variance of ``log estimate``; rows are weighted equally if
    any stderr is zero.
    """
    if mode not in FIT_MODES:
        raise InputError(f"fit mode must be one of {FIT_MODES}, got {mode!r}")
    rows = table.rows if isinstance(table, RateTable) else list(table)
    rows = [r for r in rows if r.estimate > floor_factor * r.floor]
    if len(rows) < 3:
        raise FitError(f"need >= 3 rows above {floor_factor:g}x the self-distance floor to fit a rate, got {len(rows)}")
    n = np.array([r.n for r in rows], dtype=float)
    est = np.array([r.estimate for r in rows], dtype=float)
    se = np.array([r.stderr for r in rows], dtype=float)
    if np.any(est <= 0):
        raise FitError("estimates must be positive for a log-log fit")
    if np.any(n <= 1):
        raise FitError("n must exceed 1 for the log log n regressor")
    y = np.log(est)
    ln = np.log(n)
    lln = np.log(ln)
    cols = [np.ones_like(ln), ln]
    gamma = {"fixed": 0.5, "zero": 0.0}.get(mode)
    if mode == "free":
        cols.append(lln)
    else:
        y = y - gamma * lln
    X = np.column_stack(cols)
    w = np.ones_like(y) if np.any(se <= 0) else (est / se) ** 2
    sw = np.sqrt(w / w.sum())
    Xw, yw = X * sw[:, None], y * sw
    if np.linalg.matrix_rank(Xw, tol=1e-10 * np.abs(Xw).max()) < X.shape[1] or np.linalg.cond(Xw) > 1e8:
        raise FitError("collinear regressors: the n range is too narrow to fit gamma; use gamma fixed")
    coef, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    resid = yw - Xw @ coef
    ybar = (w * y).sum() / w.sum()
    sst = float((w * (y - ybar) ** 2).sum() / w.sum())
    ssr = float((resid**2).sum())
    r2 = 1.0 if sst <= 1e-300 or ssr <= 1e-28 * max(sst, 1.0) else min(max(1.0 - ssr / sst, 0.0), 1.0)
    return RateFit(
        alpha=float(coef[1]),
        log_c=float(coef[0]),
        gamma=float(coef[2]) if mode == "free" else gamma,
        r2=r2,
        mode=mode,
    )


# -- the experiment ------------------------------------------------------------------


def _observable_mean(system: SuspensionSystem, obs: ObservableSpec, cells):
    """Mean of ``obs`` under the suspension measure, by quadrature against the
    Ulam invariant density of the base map."""
    base = system.base
    op = build_ulam(base, cells)
    mass = op.stationary
    roof = system.roof
    if obs.base_only:
        num = cell_average(lambda y: obs.raw(y) * roof(y), op.edges)
    else:
        nodes, weights = np.polynomial.legendre.leggauss(16)
        nodes, weights = 0.5 * (nodes + 1.0), 0.5 * weights

        def column(y):
            h = roof(y)
            u = h[..., None] * nodes
            return h * (obs.raw(np.broadcast_to(y[..., None], u.shape), u) * weights).sum(-1)

        num = cell_average(column, op.edges)
    den = cell_average(lambda y: roof(y) + 0.0 * y, op.edges)
    return float(mass @ num / (mass @ den))


def centred_observable(system, obs, cells):
    mean = _observable_mean(system, obs, cells)
    return replace(obs, mean=mean, mean_source=f"quadrature:ulam-{cells}", tolerance=0.0)


def _unit_roof(system):
    return system.constant_roof and system.roof.value == 1.0


def ulam_variance(system: SuspensionSystem, obs: ObservableSpec, cells, height_cells=16):
    """sigma^2 from the martingale-coboundary split (unit-roof systems only)."""
    if not _unit_roof(system):
        raise ConfigurationError("Ulam variance needs the unit constant roof")
    op = build_ulam(system.base, cells)
    if obs.base_only:
        psi = center(cell_average(lambda y: obs.raw(y), op.edges), op)
        return solve_coboundary(psi, op).sigma2
    sop = suspension_ulam(op, height_cells)
    psi = center(unit_roof_psi(lambda y, u: obs.raw(y, u), system.base, op.edges, height_cells), sop)
    return solve_coboundary(psi, sop).sigma2


def reference_variance(plan: ExperimentPlan, system, obs):
    source = plan.variance_source
    if source == "auto":
        source = "ulam" if _unit_roof(system) else "green-kubo"
    if source == "ulam":
        return ulam_variance(system, obs, plan.ulam_cells), f"ulam:{plan.ulam_cells}"
    gens = streams.streams(1000, plan.seed, streams.AUX, 2)
    return estimate_variance(system, obs, plan.variance_time, gens, chains=1000, burn_in=plan.burn_in), f"green-kubo:{plan.variance_time:g}"


def self_distance_floor(sigma, plan: ExperimentPlan):
    """Mean empirical ``W_q`` between two independent Brownian ``N``-clouds."""
    vals = []
    for rep in range(plan.floor_reps):
        a = sample_brownian(sigma, plan.grid, streams.streams(plan.samples, plan.seed, streams.FLOOR, rep, 0))
        b = sample_brownian(sigma, plan.grid, streams.streams(plan.samples, plan.seed, streams.FLOOR, rep, 1))
        vals.append(_assignment_value(distance_matrix(a, b, "sup") ** plan.q, plan.q))
    return float(np.mean(vals))


def _assignment_value(cost, q):
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean() ** (1.0 / q))


def sample_wn(plan: ExperimentPlan, system, obs, n):
    gens = streams.streams(plan.samples, plan.seed, streams.PATHS, n)
    y0, u0 = sample_initial_arrays(system, plan.samples, plan.burn_in, gens)
    return wn_paths(system, obs, n, plan.grid, (y0, u0), gens, step=plan.step)


def mean_cells(plan: ExperimentPlan):
    if plan.mean_cells is not None:
        return plan.mean_cells
    return 2048 if plan.system == "lsv-induced" else 16384


def _row(plan, system, obs, sigma, floor, n):
    W = sample_wn(plan, system, obs, n)
    B = sample_brownian(sigma, plan.grid, streams.streams(plan.samples, plan.seed, streams.BROWNIAN, n))
    cost = distance_matrix(W, B, "sup") ** plan.q
    est = _assignment_value(cost, plan.q)
    stderr = 0.0
    if plan.samples > 1 and plan.bootstrap > 1:
        g = streams.stream(plan.seed, streams.BOOTSTRAP, n)
        boot = []
        for _ in range(plan.bootstrap):
            ia = g.integers(0, plan.samples, plan.samples)
            ib = g.integers(0, plan.samples, plan.samples)
            boot.append(_assignment_value(cost[np.ix_(ia, ib)], plan.q))
        stderr = float(np.std(boot, ddof=1))
    return RateRow(n, float(plan.q), est, stderr, plan.samples, plan.grid, "assignment", plan.seed, floor)


def run_rate_experiment(plan: ExperimentPlan, progress=None, threads=1) -> RateTable:
    """Empirical ``W_q(W_n, W)`` for every ``n`` of the plan, with bootstrap stderr.

    Rows for different ``n`` draw from disjoint keyed streams, so running them
    on ``threads`` workers gives the same table as a serial run.
    """
    system = make_system(plan.system, plan.beta, plan.roof)
    cells = mean_cells(plan)
    obs = centred_observable(system, get_observable(plan.observable), cells)
    sigma2, source = reference_variance(plan, system, obs)
    if not sigma2 > MIN_VARIANCE:
        raise ConfigurationError(f"degenerate variance sigma^2={sigma2:.3g} <= {MIN_VARIANCE}")
    sigma = math.sqrt(sigma2)
    floor = self_distance_floor(sigma, plan) if plan.floor_reps > 0 else 0.0

    table = RateTable(sigma2=sigma2, variance_source=source, mean=obs.mean, mean_source=obs.mean_source)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_row, plan, system, obs, sigma, floor, n) for n in plan.n_values]
            for fut in futures:
                table.rows.append(fut.result())
                if progress:
                    progress(table.rows[-1])
    else:
        for n in plan.n_values:
            table.rows.append(_row(plan, system, obs, sigma, floor, n))
            if progress:
                progress(table.rows[-1])
    return table


def plan_record(plan: ExperimentPlan):
    d = asdict(plan)
    d["n_values"] = ",".join(str(v) for v in plan.n_values)
    return d
