"""Time integrals along suspension orbits and the rescaled path processes.

A suspension orbit from ``(y0, u0)`` visits base points ``y_0, y_1, ...``;
segment ``k`` occupies flow times ``[start_k, end_k)`` with
``end_k = sum_{i<=k} h(y_i) - u0`` and heights ``u = s - start_k``.
Integrals of an observable are accumulated segment by segment, so roof
crossings are never straddled by a quadrature panel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .dynamics import SuspensionSystem, sample_initial_arrays
from .errors import ConfigurationError, InputError

QUADRATURE_STEP = 0.02
MAX_QUADRATURE_STEP = 0.05
DEFAULT_GRID = 16
MIN_CENTERING_BUDGET = 10_000

_GL2 = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])


@dataclass(frozen=True)
class ObservableSpec:
    """Observable ``v(y, u)`` minus a stored mean.

    ``base_only`` marks observables that ignore the height ``u``; their
    segment integrals are exact products and skip quadrature.
    """

    name: str
    func: Callable
    eta: float = 1.0
    base_only: bool = True
    mean: float = 0.0
    mean_source: str = "none"
    tolerance: float = math.inf

    def __call__(self, y, u=None):
        y = np.asarray(y, dtype=float)
        if u is None:
            u = np.zeros_like(y)
        return np.asarray(self.func(y, u), dtype=float) - self.mean

    def raw(self, y, u=None):
        y = np.asarray(y, dtype=float)
        return np.asarray(self.func(y, np.zeros_like(y) if u is None else u), dtype=float)


def _const(c):
    return lambda y, u: np.full(np.broadcast(y, u).shape, float(c))


OBSERVABLES = {
    "cos": ObservableSpec("cos", lambda y, u: np.cos(2.0 * np.pi * y)),
    "y": ObservableSpec("y", lambda y, u: y + 0.0 * u),
    "one": ObservableSpec("one", _const(1.0)),
    "zero": ObservableSpec("zero", _const(0.0)),
    "cos-height": ObservableSpec(
        "cos-height", lambda y, u: np.cos(2.0 * np.pi * y) * (1.0 + 0.5 * np.sin(np.pi * u)), base_only=False
    ),
}


def constant_observable(c):
    return ObservableSpec(f"const:{c:g}", _const(c))


def get_observable(name):
    try:
        return OBSERVABLES[name]
    except KeyError:
        raise InputError(f"unknown observable {name!r}; choose from {sorted(OBSERVABLES)}") from None


@dataclass
class PathSample:
    """Piecewise-linear path on the uniform grid ``0, 1/m, ..., 1``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise InputError("a path needs at least two grid values")
        if not np.all(np.isfinite(self.values)):
            raise InputError("path values must be finite")

    @property
    def grid(self):
        return self.values.size - 1

    @property
    def times(self):
        return np.linspace(0.0, 1.0, self.grid + 1)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])


def paths_to_csv(paths, path, header_lines=()):
    """Wide format: ``sample_id,t0..tm``, one row per path."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + [f"t{k}" for k in range(paths.shape[1])])
        for i, row in enumerate(paths):
            w.writerow([i] + [repr(float(v)) for v in row])


def paths_from_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header[0] == "t":
            return np.array([[float(r[1]) for r in reader]])
        for r in reader:
            rows.append([float(v) for v in r[1:]])
    return np.array(rows)


# -- flow integrals -----------------------------------------------------------------


def _check_step(step, spacing=math.inf):
    if not 0 < step <= MAX_QUADRATURE_STEP:
        raise ConfigurationError(f"quadrature step must lie in (0, {MAX_QUADRATURE_STEP}], got {step}")
    if step > spacing:
        raise ConfigurationError(f"quadrature step {step} exceeds path grid spacing {spacing} in flow time")


def _height_integral(obs, y, a, b, step):
    """``int_a^b obs(y, u) du`` elementwise, 2-point Gauss panels of width <= step."""
    length = b - a
    panels = max(1, int(math.ceil(float(np.max(length, initial=0.0)) / step)))
    offs = (np.arange(panels)[:, None] + _GL2[None, :]).reshape(-1) / panels  # (2P,)
    u = a[..., None] + length[..., None] * offs
    vals = obs(np.broadcast_to(y[..., None], u.shape), u)
    return vals.mean(axis=-1) * length


def base_steps_needed(horizon):
    """Base points needed to cover ``horizon`` flow time when ``inf h >= 1``."""
    return int(math.floor(horizon)) + 2


def flow_integrals(system: SuspensionSystem, obs, y0, u0, times, rng=None, orbit=None, step=QUADRATURE_STEP):
    """``int_0^s obs(Psi_r (y0, u0)) dr`` for each ``s`` in ``times``.

    ``y0``, ``u0`` have shape ``(N,)``; returns ``(N, len(times))``.  The
    base orbit is generated from ``rng`` unless ``orbit`` (shape ``(N, K)``,
    long enough to reach ``max(times)``) is given.
    """
    _check_step(step)
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    times = np.asarray(times, dtype=float)
    if times.size and (times.min() < 0 or np.any(np.diff(times) < 0)):
        raise InputError("query times must be sorted and non-negative")
    horizon = float(times.max(initial=0.0))
    K = base_steps_needed(horizon)
    if orbit is None:
        orbit = system.base.orbit(y0, K, rng)
    orbit = np.asarray(orbit, dtype=float)
    if orbit.shape[-1] < K:
        raise InputError(f"orbit of length {orbit.shape[-1]} cannot cover flow time {horizon}")
    orbit = orbit[:, :K]
    hs = system.roof(orbit)
    ends = np.cumsum(hs, axis=1) - u0[:, None]
    starts = ends - hs
    u_lo = np.maximum(starts, 0.0) - starts  # u0 on segment 0, else 0
    if obs.base_only:
        vals = obs(orbit)
        seg = vals * (hs - u_lo)
    else:
        seg = np.stack([_height_integral(obs, orbit[r], u_lo[r], hs[r], step) for r in range(orbit.shape[0])])
    before = np.concatenate([np.zeros((orbit.shape[0], 1)), np.cumsum(seg, axis=1)[:, :-1]], axis=1)

    out = np.empty((orbit.shape[0], times.size))
    for r in range(orbit.shape[0]):
        k = np.searchsorted(ends[r], times, side="right")
        k = np.minimum(k, K - 1)
        u_hi = times - starts[r, k]
        if obs.base_only:
            part = vals[r, k] * (u_hi - u_lo[r, k])
        else:
            part = _height_integral(obs, orbit[r, k], u_lo[r, k], u_hi, step)
        out[r] = before[r, k] + part
    return out


def _as_states(states):
    if hasattr(states, "y"):
        return np.array([states.y]), np.array([states.u])
    if isinstance(states, tuple) and len(states) == 2 and not hasattr(states[0], "y"):
        return np.atleast_1d(np.asarray(states[0], dtype=float)), np.atleast_1d(np.asarray(states[1], dtype=float))
    states = list(states)
    return np.array([s.y for s in states]), np.array([s.u for s in states])


def wn_paths(system, obs, n, grid, states, rng=None, orbit=None, step=QUADRATURE_STEP):
    """Grid values of ``W_n(t) = n^{-1/2} int_0^{nt} v(Psi_s x) ds``, one row per state."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if grid < 1:
        raise InputError(f"grid must be >= 1, got {grid}")
    _check_step(step, n / grid)
    y0, u0 = _as_states(states)
    times = n * np.arange(grid + 1) / grid
    return flow_integrals(system, obs, y0, u0, times, rng, orbit, step) / math.sqrt(n)


def wn_path(system, obs, n, grid, state0, rng=None, step=QUADRATURE_STEP) -> PathSample:
    return PathSample(wn_paths(system, obs, n, grid, state0, rng, step=step)[0])


def martingale_paths(m_values, sigma, grid):
    """Polygonal martingale paths from ``m`` evaluated along forward orbits.

    ``m_values[..., k] = m(F_k x)`` for ``k = 0 .. n-1``.  Increments are
    ``zeta_j = m(F_{n-j} x) / (sqrt(n) sigma)``, ``j = 1 .. n``, and
    ``X_n(t) = sum_{j<=[nt]} zeta_j + (nt - [nt]) zeta_{[nt]+1}``.
    """
    m_values = np.asarray(m_values, dtype=float)
    n = m_values.shape[-1]
    if n == 0:
        raise InputError("need at least one increment (n >= 1)")
    if not sigma > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    zeta = m_values[..., ::-1] / (math.sqrt(n) * sigma)
    pad = np.zeros(zeta.shape[:-1] + (1,))
    partial = np.concatenate([pad, np.cumsum(zeta, axis=-1)], axis=-1)  # S_0..S_n
    zeta_next = np.concatenate([zeta, pad], axis=-1)  # zeta_1..zeta_n, 0
    nt = n * np.arange(grid + 1) / grid
    k = np.minimum(np.floor(nt).astype(np.int64), n)
    frac = nt - k
    return partial[..., k] + frac * zeta_next[..., k]


def martingale_path(orbit, m_func, sigma, grid=DEFAULT_GRID) -> PathSample:
    """``X_n`` for one orbit; ``m_func(orbit)`` returns ``m`` at its first ``n`` states."""
    orbit = np.asarray(orbit, dtype=float)
    if orbit.shape[-1] == 0:
        raise InputError("orbit must contain at least one state")
    return PathSample(martingale_paths(np.asarray(m_func(orbit), dtype=float), sigma, grid))


def reverse_transform(u):
    """``g(u)(t) = u(1) - u(1 - t)``; accepts a PathSample or an array of grid values."""
    if isinstance(u, PathSample):
        return PathSample(reverse_transform(u.values))
    u = np.asarray(u, dtype=float)
    return u[..., -1:] - u[..., ::-1]


def sup_distance(a, b):
    """Grid sup distance; exact for piecewise-linear paths on a shared grid."""
    av = a.values if isinstance(a, PathSample) else np.asarray(a, dtype=float)
    bv = b.values if isinstance(b, PathSample) else np.asarray(b, dtype=float)
    if av.shape[-1] != bv.shape[-1]:
        raise InputError(f"grid mismatch: {av.shape[-1]} vs {bv.shape[-1]} points")
    d = np.max(np.abs(av - bv), axis=-1)
    return float(d) if np.ndim(d) == 0 else d


# -- means and variances ----------------------------------------------------------


def center_observable(obs: ObservableSpec, system, budget, rng, chains=64, burn_in=1000) -> ObservableSpec:
    """Subtract a Birkhoff-average estimate of the mean over ``budget`` flow time.

    The budget is split over ``chains`` independent trajectories started
    from :func:`sample_initial_arrays`; the returned tolerance is three
    standard errors of the chain means.
    """
    if budget < MIN_CENTERING_BUDGET:
        raise InputError(f"centering budget must be >= {MIN_CENTERING_BUDGET}, got {budget}")
    length = budget / chains
    y0, u0 = sample_initial_arrays(system, chains, burn_in, rng)
    raw = replace(obs, mean=0.0)
    ints = flow_integrals(system, raw, y0, u0, [length], rng)[:, 0]
    means = ints / length
    mean = float(means.mean())
    stderr = float(means.std(ddof=1) / math.sqrt(chains))
    return replace(obs, mean=mean, mean_source=f"birkhoff:{budget:g}", tolerance=3.0 * stderr)


def green_kubo_variance(series, window_factor=5.0):
    """Sum of autocovariances with Sokal's self-consistent window.

    ``series`` has shape ``(T,)`` or ``(chains, T)``; autocovariances are
    averaged over chains after removing the grand mean.  The window is the
    smallest ``M`` with ``M >= window_factor * tau(M)``.
    """
    x = np.atleast_2d(np.asarray(series, dtype=float))
    x = x - x.mean()
    T = x.shape[1]
    nfft = 1 << int(math.ceil(math.log2(2 * T)))
    f = np.fft.rfft(x, n=nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :T].mean(axis=0) / T
    rho = acov / acov[0] if acov[0] > 0 else acov
    if acov[0] == 0:
        return 0.0
    tau = 2.0 * np.cumsum(rho) - 1.0
    M = np.arange(T)
    ok = M >= window_factor * tau
    window = int(np.argmax(ok)) if np.any(ok) else T - 1
    return float(acov[0] * tau[window])


def unit_time_integrals(system, obs, length, states, rng, step=QUADRATURE_STEP):
    """``int_k^{k+1} v(Psi_s x) ds`` for ``k = 0 .. length-1``; shape ``(N, length)``."""
    y0, u0 = _as_states(states)
    F = flow_integrals(system, obs, y0, u0, np.arange(length + 1, dtype=float), rng, step=step)
    return np.diff(F, axis=1)


def estimate_variance(system, obs, total_time, rng, chains=1000, burn_in=1000, chunk=100):
    """Green-Kubo estimate of the flow variance from ``total_time`` units of orbit."""
    length = max(int(total_time // chains), 16)
    blocks = []
    rngs = [rng] if isinstance(rng, np.random.Generator) else None
    for start in range(0, chains, chunk):
        count = min(chunk, chains - start)
        g = rng if rngs else rng[start : start + count]
        y0, u0 = sample_initial_arrays(system, count, burn_in, g)
        blocks.append(unit_time_integrals(system, obs, length, (y0, u0), g))
    return green_kubo_variance(np.concatenate(blocks, axis=0))
