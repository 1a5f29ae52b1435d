"""Interval maps, the LSV induced map and suspension semiflows.

All maps act on numpy arrays elementwise.  Orbits are generated for a batch
of initial points at once; ``orbit(x0, length, rng)`` returns an array of
shape ``x0.shape + (length,)`` whose first column is ``x0``.

The doubling map cannot be iterated in floating point (every double is a
dyadic rational, so ``2x mod 1`` reaches 0 after at most 53 steps).  Its
orbits are therefore produced by a 53-bit shift register fed with fresh
random bits, which is exact in law for Lebesgue-distributed starting points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InputError, TruncationError

INDUCED_ITERATION_CAP = 10**7
DEFAULT_BURN_IN = 1000

_MANTISSA_BITS = 53
_SCALE = float(2**_MANTISSA_BITS)
_MASK = np.uint64(2**_MANTISSA_BITS - 1)


def _row_generators(rng, count):
    if isinstance(rng, np.random.Generator):
        return [rng] * count
    rngs = list(rng)
    if len(rngs) != count:
        raise InputError(f"expected {count} generators, got {len(rngs)}")
    return rngs


def _check_unit(x, *, closed=True):
    x = np.asarray(x, dtype=float)
    upper_ok = x <= 1.0 if closed else x < 1.0
    if not np.all((x >= 0.0) & upper_ok):
        raise InputError(f"point outside [0, 1{']' if closed else ')'}: {x}")
    return x


def lsv_step(x, beta):
    """One step of the LSV map; ``x = 1/2`` goes to the linear branch."""
    if not beta > 0:
        raise InputError(f"beta must be positive, got {beta}")
    x = _check_unit(x)
    out = np.where(x < 0.5, x * (1.0 + (2.0 * x) ** beta), 2.0 * x - 1.0)
    return float(out) if out.ndim == 0 else out


def doubling_step(x):
    """Fractional part of ``2x`` on [0, 1)."""
    x = _check_unit(x, closed=False)
    out = np.mod(2.0 * x, 1.0)
    return float(out) if out.ndim == 0 else out


def lsv_left_inverse(z, beta, iterations=80):
    """Inverse of the left LSV branch ``[0, 1/2) -> [0, 1)``.

    Newton's method on the convex increasing ``x + 2^b x^(1+b) - z`` started
    above the root converges monotonically from the right.
    """
    z = np.asarray(z, dtype=float)
    x = np.minimum(z, 0.5)
    c = 2.0**beta
    for _ in range(iterations):
        xb = np.power(x, beta)
        f = x + c * x * xb - z
        step = f / (1.0 + (1.0 + beta) * c * xb)
        x_new = np.maximum(x - step, 0.0)
        if np.array_equal(x_new, x):
            break
        x = x_new
    return x


@dataclass(frozen=True)
class Preimage:
    """One monotone branch restricted to a target partition.

    ``points`` are the (increasing) preimages of the target cell edges,
    clipped to the branch image, so ``points[j+1] - points[j]`` is the
    Lebesgue measure of the part of the branch landing in target cell ``j``.
    """

    lo: float
    hi: float
    points: np.ndarray


class DoublingMap:
    name = "doubling"
    domain = (0.0, 1.0)

    def step(self, x):
        return doubling_step(x)

    def preimages(self, edges) -> Iterator[Preimage]:
        e = np.asarray(edges, dtype=float)
        yield Preimage(0.0, 0.5, e / 2.0)
        yield Preimage(0.5, 1.0, (e + 1.0) / 2.0)

    def orbit(self, x0, length, rng):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        rngs = _row_generators(rng, x0.size)
        flat = x0.reshape(-1)
        state = np.floor(flat * _SCALE).astype(np.uint64)
        bits = np.stack([r.integers(0, 2, size=max(length - 1, 0), dtype=np.uint64) for r in rngs])
        out = np.empty((flat.size, length))
        if length > 0:
            out[:, 0] = flat
        one = np.uint64(1)
        for j in range(1, length):
            state = ((state << one) & _MASK) | bits[:, j - 1]
            out[:, j] = state / _SCALE
        return out.reshape(x0.shape + (length,))

    def advance(self, x, k, rng):
        """``T^k x`` in law: shift out ``k`` bits, shift in ``k`` random bits."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if k == 0:
            return x.copy()
        rngs = _row_generators(rng, x.size)
        flat = x.reshape(-1)
        if k >= _MANTISSA_BITS:
            fresh = np.array([r.integers(0, 2**_MANTISSA_BITS, dtype=np.uint64) for r in rngs])
            return (fresh / _SCALE).reshape(x.shape)
        state = np.floor(flat * _SCALE).astype(np.uint64)
        tail = np.array([r.integers(0, 2**k, dtype=np.uint64) for r in rngs])
        state = ((state << np.uint64(k)) & _MASK) | tail
        return (state / _SCALE).reshape(x.shape)

    def sample_uniform(self, rng):
        return float(rng.integers(0, 2**_MANTISSA_BITS, dtype=np.uint64)) / _SCALE

    def __repr__(self):
        return "DoublingMap()"


@dataclass(frozen=True)
class LsvMap:
    """``x(1 + 2^b x^b)`` on [0, 1/2), ``2x - 1`` on [1/2, 1]."""

    beta: float
    name: str = field(default="lsv", init=False)
    domain = (0.0, 1.0)

    def __post_init__(self):
        if not self.beta > 0:
            raise InputError(f"beta must be positive, got {self.beta}")

    @property
    def max_order(self):
        """Return times lie in L^p for every p below this value."""
        return 1.0 / self.beta

    def step(self, x):
        return lsv_step(x, self.beta)

    def _step_unchecked(self, x):
        return np.where(x < 0.5, x * (1.0 + (2.0 * x) ** self.beta), 2.0 * x - 1.0)

    def preimages(self, edges) -> Iterator[Preimage]:
        e = np.asarray(edges, dtype=float)
        yield Preimage(0.0, 0.5, lsv_left_inverse(np.minimum(e, 1.0), self.beta))
        yield Preimage(0.5, 1.0, (e + 1.0) / 2.0)

    def orbit(self, x0, length, rng=None):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        out = np.empty(x0.shape + (length,))
        x = x0.copy()
        for j in range(length):
            out[..., j] = x
            x = self._step_unchecked(x)
        return out

    def advance(self, x, k, rng=None):
        x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
        for _ in range(k):
            x = self._step_unchecked(x)
        return x

    def sample_uniform(self, rng):
        return float(rng.random())


class IdentityMap:
    """Trivial map; only used to sanity-check operator construction."""

    name = "identity"
    domain = (0.0, 1.0)

    def step(self, x):
        return np.asarray(x, dtype=float)

    def preimages(self, edges):
        yield Preimage(0.0, 1.0, np.asarray(edges, dtype=float))


# -- induced map ---------------------------------------------------------------


def induced_step(y, beta, cap=INDUCED_ITERATION_CAP):
    """First return of the LSV map to ``Y = [1/2, 1]``.

    Returns ``(F(y), r(y))``.  Raises :class:`TruncationError` if the orbit
    has not returned after ``cap`` iterations.
    """
    y = float(y)
    if not 0.5 <= y <= 1.0:
        raise InputError(f"induced_step needs y in [1/2, 1], got {y}")
    if not beta > 0:
        raise InputError(f"beta must be positive, got {beta}")
    x = 2.0 * y - 1.0
    r = 1
    c = 2.0**beta
    while x < 0.5:
        if r >= cap:
            raise TruncationError(f"no return to Y from y={y!r} within the iteration cap", cap)
        x = x * (1.0 + c * x**beta)
        r += 1
    return x, r


@dataclass(frozen=True)
class InducedBranch:
    return_time: int
    lo: float
    hi: float


@dataclass
class InducedLsvMap:
    """First-return map of the LSV map to ``Y = [1/2, 1]``.

    Branch ``Y_r`` collects the points with return time ``r``; branches
    accumulate at ``y = 1/2`` (the preimage of the indifferent fixed point).
    ``tail_tol`` bounds the total width of the branches that the Ulam
    construction lumps together instead of resolving one by one.
    """

    beta: float
    tail_tol: float = 1e-13
    max_branches: int = 200_000
    cap: int = INDUCED_ITERATION_CAP
    name: str = field(default="lsv-induced", init=False)
    domain = (0.5, 1.0)

    def __post_init__(self):
        if not self.beta > 0:
            raise InputError(f"beta must be positive, got {self.beta}")
        self.base = LsvMap(self.beta)

    def step(self, y):
        """Vectorised first return; returns ``(F y, r)`` arrays."""
        y = np.asarray(y, dtype=float)
        if not np.all((y >= 0.5) & (y <= 1.0)):
            raise InputError("induced map needs points in [1/2, 1]")
        x = 2.0 * y - 1.0
        r = np.ones(y.shape, dtype=np.int64)
        c = 2.0**self.beta
        active = x < 0.5
        it = 1
        while np.any(active):
            if it >= self.cap:
                raise TruncationError("induced orbit did not return", self.cap)
            xa = x[active]
            x[active] = xa * (1.0 + c * xa**self.beta)
            r[active] += 1
            active = x < 0.5
            it += 1
        return x, r

    def branches(self, count) -> list[InducedBranch]:
        """The first ``count`` branches, ordered by return time."""
        out = [InducedBranch(1, 0.75, 1.0)]
        x = 0.5
        for r in range(2, count + 1):
            x_next = float(lsv_left_inverse(x, self.beta))
            out.append(InducedBranch(r, (x_next + 1.0) / 2.0, (x + 1.0) / 2.0))
            x = x_next
        return out

    def orbit(self, y0, length, rng=None):
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        out = np.empty(y0.shape + (length,))
        y = y0.copy()
        for j in range(length):
            out[..., j] = y
            y, _ = self.step(y)
        return out

    def advance(self, y, k, rng=None):
        y = np.atleast_1d(np.asarray(y, dtype=float)).copy()
        for _ in range(k):
            y, _ = self.step(y)
        return y

    def sample_uniform(self, rng):
        return 0.5 + 0.5 * float(rng.random())

    def preimages(self, edges) -> Iterator[Preimage]:
        """Branch preimages of ``edges`` (a partition of Y), then one lumped tail.

        Branch ``r`` is ``z -> (G^{r-1}(z) + 1)/2`` with ``G`` the inverse left
        branch.  Once the remaining branches cover less than ``tail_tol`` of
        Y they are replaced by one monotone piece that carries the last
        resolved branch's relative partition, rescaled onto the tail.
        """
        z = np.clip(np.asarray(edges, dtype=float), 0.5, 1.0)
        w = z.copy()
        for _ in range(self.max_branches):
            pts = (w + 1.0) / 2.0
            lo, hi = pts[0], pts[-1]
            yield Preimage(lo, hi, pts)
            # branches not yet emitted cover [1/2, lo)
            tail = lo - 0.5
            if tail <= self.tail_tol:
                if tail > 0:
                    scaled = 0.5 + (pts - lo) * (tail / (hi - lo))
                    yield Preimage(0.5, lo, scaled)
                return
            w = lsv_left_inverse(w, self.beta)
        raise TruncationError("induced map branches not resolved to tail tolerance", self.max_branches)


# -- suspensions ----------------------------------------------------------------


@dataclass(frozen=True)
class ConstantRoof:
    value: float = 1.0
    constant = True

    def __post_init__(self):
        if self.value < 1.0:
            raise InputError(f"roof must be >= 1, got {self.value}")

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape, self.value) if y.ndim else self.value

    @property
    def sup(self):
        return self.value

    @property
    def name(self):
        return "constant" if self.value == 1.0 else f"constant:{self.value:g}"


@dataclass(frozen=True)
class AffineRoof:
    """``h(y) = 1 + y``: Hölder, nonconstant, bounded by 2 on [0, 1]."""

    constant = False
    name = "affine"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = 1.0 + y
        return float(out) if out.ndim == 0 else out

    @property
    def sup(self):
        return 2.0


ROOFS = {"constant": ConstantRoof(1.0), "affine": AffineRoof()}


@dataclass(frozen=True)
class FlowState:
    """A point ``(y, u)`` of the suspension, ``0 <= u < h(y)``."""

    y: float
    u: float


@dataclass(frozen=True)
class SuspensionSystem:
    base: object
    roof: object = ConstantRoof(1.0)

    @property
    def constant_roof(self):
        return bool(self.roof.constant)

    @property
    def name(self):
        return f"{self.base.name}/{self.roof.name}"

    def check_state(self, state: FlowState):
        h = float(self.roof(state.y))
        if not (0.0 <= state.u < h):
            raise InputError(f"height {state.u} outside [0, {h})")


def suspension_evolve(state: FlowState, t: float, system: SuspensionSystem) -> FlowState:
    """Flow ``state`` forward by ``t``, re-entering the base at each roof crossing.

    Uses plain floating-point base steps, so it is only meaningful for short
    times on the doubling base (bits are lost at each crossing); long orbits
    go through :mod:`wiprates.process`.
    """
    if t < 0:
        raise InputError(f"flow time must be non-negative, got {t}")
    system.check_state(state)
    y, u = state.y, state.u + t
    h = float(system.roof(y))
    while u >= h:
        u -= h
        y = float(system.base.step(y))
        h = float(system.roof(y))
    return FlowState(y, u)


def sample_initial_states(system, count, burn_in=DEFAULT_BURN_IN, rng=None) -> list[FlowState]:
    """Approximate draws from the suspension measure ``(mu x Leb) / mean roof``.

    Base points start uniform and are pushed forward ``burn_in`` base steps
    (approximating the invariant measure); each is accepted with probability
    ``h(y) / sup h`` and its height is uniform on ``[0, h(y))``.  ``rng`` may
    be one generator or one generator per state.
    """
    ys, us = sample_initial_arrays(system, count, burn_in, rng)
    return [FlowState(float(y), float(u)) for y, u in zip(ys, us)]


def sample_initial_arrays(system, count, burn_in=DEFAULT_BURN_IN, rng=None):
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    if burn_in < 0:
        raise InputError(f"burn_in must be >= 0, got {burn_in}")
    if rng is None:
        raise InputError("an explicit generator is required")
    if isinstance(system, SuspensionSystem):
        base, roof = system.base, system.roof
    else:
        base, roof = system, ConstantRoof(1.0)
    rngs = _row_generators(rng, count)
    ys = np.empty(count)
    pending = np.arange(count)
    while pending.size:
        y0 = np.array([base.sample_uniform(rngs[i]) for i in pending])
        y = base.advance(y0, burn_in, [rngs[i] for i in pending])
        accept = np.array([rngs[i].random() for i in pending]) * roof.sup < roof(y)
        ys[pending[accept]] = y[accept]
        pending = pending[~accept]
    us = np.array([rngs[i].random() for i in range(count)]) * roof(ys)
    return ys, us


def return_times(beta, ys, cap=INDUCED_ITERATION_CAP):
    """Return times of the LSV map to [1/2, 1] for the points ``ys``."""
    return InducedLsvMap(beta, cap=cap).step(np.asarray(ys, dtype=float))[1]


def make_base(name, beta=None):
    if name == "doubling":
        return DoublingMap()
    if name == "lsv":
        return LsvMap(beta)
    if name == "lsv-induced":
        return InducedLsvMap(beta)
    raise InputError(f"unknown map {name!r}")


def make_system(name, beta=None, roof="constant"):
    if roof not in ROOFS:
        raise InputError(f"unknown roof {roof!r}; choose from {sorted(ROOFS)}")
    return SuspensionSystem(make_base(name, beta), ROOFS[roof])
