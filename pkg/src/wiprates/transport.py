"""Empirical Wasserstein distances, Brownian paths and the log-modulus ``omega_q``.

Empirical measures here are equal-size, equally weighted atom clouds: real
numbers, or paths on a shared grid compared in the grid sup metric.  For
such pairs the optimal coupling is a permutation, found exactly by sorting
(1D) or by a min-cost assignment (any metric).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import InputError, NumericalError, SizeError

ASSIGNMENT_CAP = 4096
BRUTE_FORCE_CAP = 8
_LOG3 = math.log(3.0)


def ell(t):
    """``-log t`` on ``(0, 1/3]``, ``log 3`` beyond."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(t >= 1.0 / 3.0, _LOG3, -np.log(np.where(t > 0, t, 1.0)))


def omega(q, t):
    """``(t * ell(t))^q`` with ``omega_q(0) = 0``."""
    if not q > 0:
        raise InputError(f"q must be positive, got {q}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InputError("omega is defined for t >= 0 only")
    out = np.where(t_arr > 0, (t_arr * ell(t_arr)) ** q, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class TransportResult:
    distance: float
    pairing: np.ndarray
    solver: str


@dataclass
class EntropicResult:
    """Sinkhorn estimate; the exact distance lies in ``[lower, distance]``."""

    distance: float
    lower: float
    duality_gap: float
    iterations: int


def _atoms(x):
    x = np.asarray(getattr(x, "atoms", x), dtype=float)
    if x.ndim == 0 or x.shape[0] < 1:
        raise InputError("an empirical measure needs at least one atom")
    return x


@dataclass
class EmpiricalMeasure:
    atoms: np.ndarray

    def __post_init__(self):
        self.atoms = _atoms(self.atoms)

    def __len__(self):
        return self.atoms.shape[0]


def _check_pair(a, b):
    a, b = _atoms(a), _atoms(b)
    if a.shape[0] != b.shape[0]:
        raise InputError(f"equal atom counts required, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[1:] != b.shape[1:]:
        raise InputError(f"atom shapes differ: {a.shape[1:]} vs {b.shape[1:]}")
    return a, b


def _check_q(q):
    if not q >= 1:
        raise InputError(f"Wasserstein order q must be >= 1, got {q}")


def wasserstein_1d(a, b, q=1.0) -> TransportResult:
    """Exact ``W_q`` between equal-size 1D samples by coupling order statistics."""
    _check_q(q)
    a, b = _check_pair(a, b)
    if a.ndim != 1:
        raise InputError("wasserstein_1d needs real-valued atoms")
    oa, ob = np.argsort(a, kind="stable"), np.argsort(b, kind="stable")
    pairing = np.empty(a.size, dtype=np.int64)
    pairing[oa] = ob
    value = float(np.mean(np.abs(a[oa] - b[ob]) ** q) ** (1.0 / q))
    return TransportResult(value, pairing, "sorted")


def distance_matrix(a, b, metric="sup"):
    """Pairwise distances: ``abs`` for reals, ``sup`` (grid sup) for paths."""
    a, b = _check_pair(a, b)
    if metric == "abs" or a.ndim == 1:
        if a.ndim != 1:
            raise InputError("metric 'abs' needs real-valued atoms")
        return np.abs(a[:, None] - b[None, :])
    if metric != "sup":
        raise InputError(f"unknown metric {metric!r}")
    out = np.empty((a.shape[0], b.shape[0]))
    rows = max(1, 2_000_000 // max(1, b.size))
    for s in range(0, a.shape[0], rows):
        out[s : s + rows] = np.max(np.abs(a[s : s + rows, None, :] - b[None, :, :]), axis=-1)
    return out


def wasserstein_assignment(a, b, q=1.0, metric="sup") -> TransportResult:
    """Exact empirical ``W_q`` via min-cost perfect matching on ``d^q``."""
    _check_q(q)
    a, b = _check_pair(a, b)
    if a.shape[0] > ASSIGNMENT_CAP:
        raise SizeError(
            f"{a.shape[0]} atoms exceed the assignment cap {ASSIGNMENT_CAP}; use wasserstein_entropic"
        )
    cost = distance_matrix(a, b, metric) ** q
    rows, cols = linear_sum_assignment(cost)
    pairing = np.empty(a.shape[0], dtype=np.int64)
    pairing[rows] = cols
    value = float(cost[rows, cols].mean() ** (1.0 / q))
    return TransportResult(value, pairing, "assignment")


def wasserstein_bruteforce(a, b, q=1.0, metric="sup") -> TransportResult:
    """Minimum over all ``N!`` pairings; only for tiny ``N``."""
    _check_q(q)
    a, b = _check_pair(a, b)
    n = a.shape[0]
    if n > BRUTE_FORCE_CAP:
        raise SizeError(f"brute force limited to {BRUTE_FORCE_CAP} atoms, got {n}")
    cost = distance_matrix(a, b, metric) ** q
    idx = np.arange(n)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = cost[idx, perm].sum()
        if c < best:
            best, best_perm = c, perm
    return TransportResult(float((best / n) ** (1.0 / q)), np.array(best_perm), "brute-force")


def wasserstein_entropic(a, b, q=1.0, metric="sup", epsilon=1e-2, iterations=10_000, tol=1e-6):
    """Log-domain Sinkhorn estimate of ``W_q``.

    The regularisation is annealed from the cost scale down to ``epsilon``
    (potentials warm-started at each stage); ``iterations`` caps the total
    number of Sinkhorn sweeps and ``tol`` is the L1 marginal error at the
    final stage.  The plan is rounded onto the exact marginals, so its cost
    is an upper bound on the optimal cost; a c-transform of the potentials
    gives a feasible dual, hence a lower bound.  ``distance`` is the
    (upper-biased) primal value and ``duality_gap`` the width of that
    bracket in cost units.
    """
    _check_q(q)
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    a, b = _check_pair(a, b)
    C = distance_matrix(a, b, metric) ** q
    n = C.shape[0]
    log_w = -math.log(n)
    f = np.zeros(n)
    g = np.zeros(n)
    stages = [epsilon]
    while stages[-1] < C.max():
        stages.append(stages[-1] * 4.0)
    err = math.inf
    it = 0
    for eps in reversed(stages):
        final = eps == epsilon
        while it < iterations:
            it += 1
            f = eps * (log_w - logsumexp((g[None, :] - C) / eps, axis=1))
            g = eps * (log_w - logsumexp((f[:, None] - C) / eps, axis=0))
            if it % 10 == 0:
                row = np.exp(logsumexp((f[:, None] + g[None, :] - C) / eps, axis=1))
                err = float(np.abs(row - 1.0 / n).sum())
                if err < (tol if final else max(tol, 1e-3)):
                    break
        if it >= iterations and not err < tol:
            raise NumericalError(f"Sinkhorn did not converge in {iterations} iterations (marginal error {err:.3e})")
    plan = _round_to_marginals(np.exp((f[:, None] + g[None, :] - C) / epsilon), n)
    primal = float((plan * C).sum())
    g_feas = np.min(C - f[:, None], axis=0)
    dual = float((f.sum() + g_feas.sum()) / n)
    return EntropicResult(primal ** (1.0 / q), max(dual, 0.0) ** (1.0 / q), primal - dual, it)


def _round_to_marginals(P, n):
    """Altschuler-Weed-Rigollet rounding onto uniform marginals."""
    target = 1.0 / n
    r = P.sum(axis=1)
    P = P * np.minimum(1.0, target / r)[:, None]
    c = P.sum(axis=0)
    P = P * np.minimum(1.0, target / c)[None, :]
    er = target - P.sum(axis=1)
    ec = target - P.sum(axis=0)
    if er.sum() > 0:
        P = P + np.outer(er, ec) / er.sum()
    return P


# -- Brownian paths and the Hölder modulus -------------------------------------------


def sample_brownian(sigma, grid, rng, size=None):
    """Brownian paths with variance ``sigma^2`` on ``grid + 1`` uniform times.

    Returns a :class:`~wiprates.process.PathSample` when ``size`` is None,
    else an array of shape ``(size, grid + 1)``.  ``rng`` may also be a list
    of generators, one per path.
    """
    from .process import PathSample

    if not sigma > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    if grid < 1:
        raise InputError(f"grid must be >= 1, got {grid}")
    scale = sigma / math.sqrt(grid)
    if isinstance(rng, np.random.Generator):
        inc = rng.standard_normal((1 if size is None else size, grid)) * scale
    else:
        inc = np.stack([r.standard_normal(grid) for r in rng]) * scale
    paths = np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)
    return PathSample(paths[0]) if size is None and isinstance(rng, np.random.Generator) else paths


@numba.njit(cache=True)
def _holder_kernel(x, weights):
    m = x.shape[0] - 1
    hi = x.max()
    lo = x.min()
    span = hi - lo
    best = 0.0
    for k in range(1, m + 1):
        w = weights[k - 1]
        if span / w <= best:
            break  # weights increase with k
        top = 0.0
        for s in range(m - k + 1):
            d = abs(x[s + k] - x[s])
            if d > top:
                top = d
        r = top / w
        if r > best:
            best = r
    return best


def holder_modulus_statistic(path):
    """``max_{s<t on grid} |B(t) - B(s)| / omega_{1/2}(t - s)``; one value per path."""
    values = np.asarray(getattr(path, "values", path), dtype=float)
    single = values.ndim == 1
    values = np.atleast_2d(values)
    m = values.shape[1] - 1
    if m < 1:
        raise InputError("path needs at least two grid points")
    weights = np.asarray(omega(0.5, np.arange(1, m + 1) / m), dtype=float)
    out = np.array([_holder_kernel(np.ascontiguousarray(v), weights) for v in values])
    return float(out[0]) if single else out


def write_distance_rows(path, rows, header_lines=()):
    """CSV rows ``n,q,N_samples,grid_m,estimate,solver,seed``."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "q", "N_samples", "grid_m", "estimate", "solver", "seed"])
        for r in rows:
            w.writerow([r["n"], repr(float(r["q"])), r["N_samples"], r["grid_m"], repr(float(r["estimate"])), r["solver"], r["seed"]])
