"""Ulam discretisation of transfer operators and the martingale-coboundary split.

An :class:`UlamOperator` is the row-stochastic matrix ``P`` with
``P[i, j] = Leb(cell_i ∩ T^{-1} cell_j) / Leb(cell_i)``, i.e. a Markov chain
on cells.  With ``pi`` its stationary masses:

* Koopman operator ``U w = P w`` (expected value at the next step),
* transfer operator ``L v = P^T (pi v) / pi`` (adjoint of ``U`` in ``L^2(pi)``).

Composition with the map, ``chi∘F``, depends on the *next* cell, so the
martingale part ``m = psi - chi∘F + chi`` is stored on the transitions
(edges) of the chain.  On edges ``L m = L^{K+1} psi`` exactly, where ``K`` is
the number of Neumann terms kept.  The cell-averaged version ``m_cell`` is
kept as well; its failure to lie in ``ker L`` measures the discretisation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dynamics import IdentityMap
from .errors import DivergenceError, InputError, NumericalError

MIN_CELLS = 16
CACHE_VERSION = 1
QUADRATURE_POINTS = 8

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(QUADRATURE_POINTS)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass
class UlamOperator:
    """Row-stochastic cell-to-cell transition matrix.

    ``edges`` partition the base interval; ``height_cells > 1`` means the
    state space is the unit-roof suspension ``[lo, hi) x [0, 1)`` with
    state index ``i * height_cells + k``.
    """

    matrix: sp.csr_matrix
    edges: np.ndarray
    height_cells: int = 1
    label: str = ""
    coverage_defect: float = 0.0
    _pi: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self):
        return self.matrix.shape[0]

    @property
    def base_cells(self):
        return len(self.edges) - 1

    @property
    def masses_lebesgue(self):
        w = np.diff(self.edges) / (self.edges[-1] - self.edges[0])
        return np.repeat(w, self.height_cells) / self.height_cells

    def cell_index(self, y, u=None):
        y = np.asarray(y, dtype=float)
        i = np.clip(np.searchsorted(self.edges, y, side="right") - 1, 0, self.base_cells - 1)
        if self.height_cells == 1:
            return i
        if u is None:
            raise InputError("suspension grid needs heights")
        k = np.clip(np.floor(np.asarray(u, dtype=float) * self.height_cells).astype(np.int64), 0, self.height_cells - 1)
        return i * self.height_cells + k

    @property
    def stationary(self):
        """Stationary cell masses (computed on first use)."""
        if self._pi is None:
            self._pi = _stationary(self, 1e-13, 100_000)
        return self._pi

    def koopman(self, w):
        return self.matrix @ np.asarray(w, dtype=float)

    def transfer(self, v):
        pi = self.stationary
        out = self.matrix.T @ (pi * np.asarray(v, dtype=float))
        return np.divide(out, pi, out=np.zeros_like(out), where=pi > 0)

    def transfer_edges(self, values):
        """``L`` applied to a function of transitions, ``(i -> j) -> values``."""
        pi = self.stationary
        P = self.matrix
        rows = np.repeat(np.arange(P.shape[0]), np.diff(P.indptr))
        flux = np.bincount(P.indices, weights=pi[rows] * P.data * values, minlength=P.shape[0])
        return np.divide(flux, pi, out=np.zeros_like(flux), where=pi > 0)

    def edge_rows(self):
        P = self.matrix
        return np.repeat(np.arange(P.shape[0]), np.diff(P.indptr))

    def edge_lookup(self, i, j):
        """Positions of transitions ``i -> j`` in ``matrix.data``; -1 if absent."""
        P = self.matrix
        n = P.shape[0]
        keys = self.edge_rows().astype(np.int64) * n + P.indices
        q = np.asarray(i, dtype=np.int64) * n + np.asarray(j, dtype=np.int64)
        pos = np.clip(np.searchsorted(keys, q), 0, len(keys) - 1)
        return np.where(keys[pos] == q, pos, -1)


@dataclass
class GriddedFunction:
    """Cell values on an Ulam grid; evaluation is piecewise constant."""

    values: np.ndarray
    edges: np.ndarray
    height_cells: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("gridded function has non-finite values")

    def __call__(self, y, u=None):
        nb = len(self.edges) - 1
        i = np.clip(np.searchsorted(self.edges, np.asarray(y, dtype=float), side="right") - 1, 0, nb - 1)
        if self.height_cells == 1:
            return self.values[i]
        k = np.clip(np.floor(np.asarray(u, dtype=float) * self.height_cells).astype(np.int64), 0, self.height_cells - 1)
        return self.values[i * self.height_cells + k]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["cell", "value"])
            for i, v in enumerate(self.values):
                writer.writerow([i, repr(float(v))])


def build_ulam(map_, n_cells):
    """Ulam matrix of ``map_`` on ``n_cells`` equal cells of its domain.

    Overlaps come from the exact (or Newton-accurate) inverse branches
    supplied by ``map_.preimages``; for piecewise-linear maps with dyadic
    branch points and dyadic ``n_cells`` every overlap is exact.
    """
    if n_cells < MIN_CELLS:
        raise InputError(f"Ulam grid needs at least {MIN_CELLS} cells, got {n_cells}")
    lo, hi = map_.domain
    edges = np.linspace(lo, hi, n_cells + 1)
    if isinstance(map_, IdentityMap):
        P = sp.identity(n_cells, format="csr")
        return UlamOperator(P, edges, label="identity")

    rows, cols, vals = [], [], []
    lumped_row = {}
    for pre in map_.preimages(edges):
        pts = pre.points
        first = int(np.searchsorted(edges, pre.lo, side="right") - 1)
        last = int(np.searchsorted(edges, pre.hi, side="left") - 1)
        first = min(max(first, 0), n_cells - 1)
        last = min(max(last, first), n_cells - 1)
        if first == last:
            # whole branch inside one cell
            acc = lumped_row.setdefault(first, np.zeros(n_cells))
            acc += np.diff(pts)
            continue
        inner = edges[(edges > pre.lo) & (edges < pre.hi)]
        cuts = np.unique(np.concatenate([pts, inner]))
        lengths = np.diff(cuts)
        keep = lengths > 0
        mids = 0.5 * (cuts[:-1] + cuts[1:])[keep]
        i = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, n_cells - 1)
        j = np.clip(np.searchsorted(pts, mids, side="right") - 1, 0, n_cells - 1)
        rows.append(i)
        cols.append(j)
        vals.append(lengths[keep])
    for i, acc in lumped_row.items():
        nz = np.nonzero(acc > 0)[0]
        rows.append(np.full(nz.size, i))
        cols.append(nz)
        vals.append(acc[nz])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    P = sp.coo_matrix((vals, (rows, cols)), shape=(n_cells, n_cells)).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    row_sums = np.asarray(P.sum(axis=1)).ravel()
    widths = np.diff(edges)
    coverage = float(np.max(np.abs(row_sums - widths) / widths))
    if np.any(row_sums <= 0):
        raise NumericalError("Ulam construction left a cell with no outgoing mass")
    P = sp.diags(1.0 / row_sums) @ P
    P = sp.csr_matrix(P)
    P.sort_indices()
    beta = getattr(map_, "beta", None)
    label = map_.name if beta is None else f"{map_.name}(beta={beta:g})"
    return UlamOperator(P, edges, label=label, coverage_defect=coverage)


def suspension_ulam(base: UlamOperator, height_cells):
    """Time-one operator of the unit-roof suspension: ``(y, u) -> (T y, u)``."""
    if height_cells < 1:
        raise InputError("height_cells must be >= 1")
    P = sp.kron(base.matrix, sp.identity(height_cells), format="csr")
    P.sort_indices()
    return UlamOperator(P, base.edges.copy(), height_cells, label=f"{base.label}/unit-roof", coverage_defect=base.coverage_defect)


def _stationary(op: UlamOperator, tol, max_iter):
    pi = op.masses_lebesgue.copy()
    PT = op.matrix.T.tocsr()
    for _ in range(max_iter):
        nxt = PT @ pi
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


def invariant_density(op: UlamOperator, tol=1e-13, max_iter=100_000) -> GriddedFunction:
    """Stationary density (w.r.t. Lebesgue) by power iteration on ``pi -> pi P``.

    Iterates from the normalised Lebesgue masses until successive iterates
    differ by less than ``tol`` in L1.
    """
    if not tol > 0:
        raise InputError("tol must be positive")
    pi = _stationary(op, tol, max_iter)
    op._pi = pi
    return GriddedFunction(pi / op.masses_lebesgue / (op.edges[-1] - op.edges[0]), op.edges, op.height_cells)


# -- observables on the grid ------------------------------------------------------


def cell_average(func, edges):
    """Cell averages of ``func(y)`` by 8-point Gauss-Legendre per cell."""
    a, b = edges[:-1, None], edges[1:, None]
    y = a + (b - a) * _GL_NODES[None, :]
    return (np.asarray(func(y), dtype=float) * _GL_WEIGHTS[None, :]).sum(axis=1)


def unit_roof_psi(func, base_map, edges, height_cells):
    """Cell averages of ``psi(y, u) = int_0^1 w(F_s(y, u)) ds`` for roof 1.

    ``w = func(y, u)``; the flow moves ``u`` up to 1 then restarts at
    ``(T y, 0)``, so ``psi = int_u^1 w(y, s) ds + int_0^u w(T y, s) ds``.
    """
    nb = len(edges) - 1
    a, b = edges[:-1, None], edges[1:, None]
    ys = (a + (b - a) * _GL_NODES[None, :]).reshape(-1)  # (nb * 8,)
    tys = np.asarray(base_map.step(ys), dtype=float)
    ucuts = np.linspace(0.0, 1.0, height_cells + 1)
    us = (ucuts[:-1, None] + (ucuts[1:, None] - ucuts[:-1, None]) * _GL_NODES[None, :]).reshape(-1)
    # inner integrals over s with Gauss-Legendre on [u, 1] and [0, u]
    s_nodes = _GL_NODES
    Y, U = np.meshgrid(ys, us, indexing="ij")
    TY = np.broadcast_to(tys[:, None], Y.shape)
    upper = (1.0 - U) * (func(Y[..., None], U[..., None] + (1.0 - U)[..., None] * s_nodes) * _GL_WEIGHTS).sum(-1)
    lower = U * (func(TY[..., None], U[..., None] * s_nodes) * _GL_WEIGHTS).sum(-1)
    vals = (upper + lower).reshape(nb, QUADRATURE_POINTS, height_cells, QUADRATURE_POINTS)
    avg = np.einsum("iakb,a,b->ik", vals, _GL_WEIGHTS, _GL_WEIGHTS)
    return avg.reshape(-1)


def center(values, op: UlamOperator):
    pi = op.stationary
    return np.asarray(values, dtype=float) - float(pi @ values)


# -- decomposition ------------------------------------------------------------------


@dataclass
class Decomposition:
    """``psi = m + chi∘F - chi`` on an Ulam chain, with diagnostics.

    ``m_edges`` is aligned with ``operator.matrix.data``; ``m`` holds its cell
    averages.  Residuals are L1 norms w.r.t. the stationary masses.
    """

    operator: UlamOperator
    psi: GriddedFunction
    m: GriddedFunction
    m_edges: np.ndarray
    chi: GriddedFunction
    sigma2: float
    breve_w: GriddedFunction
    terms: int
    term_norms: list
    reconstruction_residual: float
    kernel_residual: float
    breve_mean: float
    projection_defect: float

    def m_along(self, orbit, heights=None):
        """``m`` along an orbit: uses the transition between consecutive states.

        ``orbit`` has shape ``(..., n + 1)``; returns shape ``(..., n)``.
        Transitions missing from the chain (floating-point boundary cases)
        fall back to the cell average.
        """
        orbit = np.asarray(orbit, dtype=float)
        cells = self.operator.cell_index(orbit, None if heights is None else np.broadcast_to(np.asarray(heights)[..., None], orbit.shape))
        i, j = cells[..., :-1], cells[..., 1:]
        pos = self.operator.edge_lookup(i, j)
        return np.where(pos >= 0, self.m_edges[np.maximum(pos, 0)], self.m.values[i])

    def summary(self):
        return {
            "sigma2": self.sigma2,
            "terms": self.terms,
            "reconstruction_residual": self.reconstruction_residual,
            "kernel_residual": self.kernel_residual,
            "breve_mean": self.breve_mean,
            "projection_defect": self.projection_defect,
            "coverage_defect": self.operator.coverage_defect,
        }


def solve_coboundary(psi, op: UlamOperator, tol=1e-9, max_terms=10_000) -> Decomposition:
    """Martingale-coboundary split of a centred grid function.

    ``chi = sum_{k>=1} L^k psi``, stopped once a term's weighted L1 norm
    drops below ``tol``; ``m = psi - chi∘F + chi`` on transitions;
    ``sigma2 = int m^2``; ``breve_w = U L m^2 - sigma2``.
    """
    values = psi.values if isinstance(psi, GriddedFunction) else np.asarray(psi, dtype=float)
    if values.shape != (op.size,):
        raise InputError(f"psi has {values.shape} values, operator has {op.size} cells")
    pi = op.stationary
    mean = float(pi @ values)
    if abs(mean) > 1e-8:
        raise InputError(f"psi must be centred under the invariant density (mean {mean:.3e})")

    chi = np.zeros_like(values)
    term = values.copy()
    norms = []
    for k in range(1, max_terms + 1):
        term = op.transfer(term)
        norms.append(float(pi @ np.abs(term)))
        chi += term
        if norms[-1] < tol:
            break
        if k >= 50 and norms[-1] >= norms[-26] * (1.0 - 1e-12):
            raise DivergenceError("Neumann series for chi is not decaying", norms[-2:])
    else:
        raise DivergenceError(f"Neumann series not below tol={tol:g} after {max_terms} terms", norms[-2:])

    P = op.matrix
    rows = op.edge_rows()
    cols = P.indices
    flow = pi[rows] * P.data  # stationary mass of each transition
    m_edges = values[rows] - chi[cols] + chi[rows]
    m_cell = np.bincount(rows, weights=P.data * m_edges, minlength=op.size)

    recon = float(flow @ np.abs(values[rows] - (m_edges + chi[cols] - chi[rows])))
    kernel = float(pi @ np.abs(op.transfer_edges(m_edges)))
    sigma2 = float(flow @ m_edges**2)
    lm2 = op.transfer_edges(m_edges**2)
    breve = op.koopman(lm2) - sigma2
    breve_mean = float(pi @ breve)
    projection = float(pi @ np.abs(op.transfer(m_cell)))

    g = lambda v: GriddedFunction(v, op.edges, op.height_cells)
    return Decomposition(
        operator=op,
        psi=g(values),
        m=g(m_cell),
        m_edges=m_edges,
        chi=g(chi),
        sigma2=sigma2,
        breve_w=g(breve),
        terms=len(norms),
        term_norms=norms,
        reconstruction_residual=recon,
        kernel_residual=kernel,
        breve_mean=breve_mean,
        projection_defect=projection,
    )


def conditional_variance_profile(orbit, decomposition: Decomposition, heights=None):
    """Conditional variances ``V_{n,k}`` along an orbit and ``max_k |V_{n,k} - k/n|``.

    ``orbit`` holds ``x_0 .. x_{n-1}`` in its last axis.  Uses the identity
    ``V_{n,k} - k/n = (n sigma^2)^{-1} sum_{j<=k} breve_w(x_{n-j})``.
    """
    orbit = np.asarray(orbit, dtype=float)
    n = orbit.shape[-1]
    if n == 0:
        raise InputError("orbit must be non-empty")
    s2 = decomposition.sigma2
    if not s2 > 0:
        raise InputError("conditional variances need sigma^2 > 0")
    hv = None if heights is None else np.broadcast_to(np.asarray(heights)[..., None], orbit.shape)
    bw = decomposition.breve_w(orbit, hv)
    partial = np.cumsum(bw[..., ::-1], axis=-1) / (n * s2)
    k = np.arange(1, n + 1) / n
    V = k + partial
    return V, np.max(np.abs(partial), axis=-1)


# -- persistence -----------------------------------------------------------------------


def operator_to_csv(op: UlamOperator, path, header_lines=()):
    P = op.matrix.tocoo()
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "value"])
        for i, j, v in zip(P.row, P.col, P.data):
            writer.writerow([int(i), int(j), repr(float(v))])


def cache_key(map_name, beta, n_cells, height_cells=1):
    b = "none" if beta is None else f"{float(beta):.12g}"
    return f"ulam-v{CACHE_VERSION}-{map_name}-beta{b}-N{n_cells}-H{height_cells}"


def save_operator(op: UlamOperator, path):
    P = op.matrix
    np.savez(
        path,
        version=CACHE_VERSION,
        data=P.data,
        indices=P.indices,
        indptr=P.indptr,
        shape=np.array(P.shape),
        edges=op.edges,
        height_cells=op.height_cells,
        label=np.array(op.label),
        coverage_defect=op.coverage_defect,
    )


def load_operator(path):
    with np.load(path) as z:
        if int(z["version"]) != CACHE_VERSION:
            raise InputError(f"cache version {int(z['version'])} != {CACHE_VERSION}")
        P = sp.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=tuple(z["shape"]))
        return UlamOperator(P, z["edges"], int(z["height_cells"]), str(z["label"]), float(z["coverage_defect"]))


def cached_ulam(map_, n_cells, cache_dir):
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / (cache_key(map_.name, getattr(map_, "beta", None), n_cells) + ".npz")
    if path.exists():
        return load_operator(path)
    op = build_ulam(map_, n_cells)
    save_operator(op, path)
    return op
