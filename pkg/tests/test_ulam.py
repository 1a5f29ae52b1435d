import dataclasses

import numpy as np
import pytest

from wiprates import rng as streams
from wiprates.dynamics import DoublingMap, IdentityMap, InducedLsvMap, LsvMap
from wiprates.errors import DivergenceError, InputError
from wiprates.ulam import (
    GriddedFunction,
    build_ulam,
    cache_key,
    cached_ulam,
    cell_average,
    center,
    conditional_variance_profile,
    invariant_density,
    load_operator,
    operator_to_csv,
    save_operator,
    solve_coboundary,
    suspension_ulam,
    unit_roof_psi,
)


def cos_psi(op):
    return center(cell_average(lambda y: np.cos(2 * np.pi * y), op.edges), op)


@pytest.fixture(scope="module")
def doubling_1024():
    return build_ulam(DoublingMap(), 1024)


@pytest.fixture(scope="module")
def induced_256():
    return build_ulam(InducedLsvMap(0.25), 256)


def test_doubling_small_grid_two_half_cells():
    op = build_ulam(DoublingMap(), 16)
    P = op.matrix.toarray()
    for i in range(16):
        nz = np.nonzero(P[i])[0]
        assert list(nz) == [(2 * i) % 16, (2 * i + 1) % 16]
        assert P[i, nz] == pytest.approx([0.5, 0.5], abs=0)
    assert invariant_density(op).values == pytest.approx(np.ones(16), abs=1e-10)


def test_min_cells():
    with pytest.raises(InputError):
        build_ulam(DoublingMap(), 4)


@pytest.mark.parametrize("n", [16, 100])
def test_identity_map(n):
    op = build_ulam(IdentityMap(), n)
    assert np.array_equal(op.matrix.toarray(), np.eye(n))
    assert invariant_density(op).values == pytest.approx(np.ones(n), abs=0)


@pytest.mark.parametrize("map_", [DoublingMap(), LsvMap(0.25), LsvMap(0.45), InducedLsvMap(0.25)], ids=str)
def test_row_stochastic(map_):
    op = build_ulam(map_, 1024 if not isinstance(map_, InducedLsvMap) else 128)
    assert np.abs(np.asarray(op.matrix.sum(axis=1)).ravel() - 1).max() < 1e-12
    assert op.matrix.data.min() > 0


def test_lsv_density_peaks_left():
    dens = invariant_density(build_ulam(LsvMap(0.25), 1024))
    assert int(np.argmax(dens.values)) == 0
    assert dens.values[:10].mean() > dens.values[-10:].mean()


def test_doubling_density_uniform(doubling_1024):
    assert np.abs(invariant_density(doubling_1024).values - 1).max() <= 1e-10


def test_duality(induced_256):
    op = induced_256
    pi = op.stationary
    g = streams.stream(13)
    for _ in range(10):
        f, h = g.standard_normal(op.size), g.standard_normal(op.size)
        assert abs(pi @ (op.transfer(f) * h) - pi @ (f * op.koopman(h))) <= 1e-10


def test_doubling_cos_decomposition(doubling_1024):
    dec = solve_coboundary(cos_psi(doubling_1024), doubling_1024)
    assert dec.terms <= 3
    assert np.abs(dec.chi.values).max() < 1e-12
    assert dec.m.values == pytest.approx(dec.psi.values, abs=1e-12)
    assert dec.kernel_residual <= 1e-8
    assert dec.sigma2 == pytest.approx(0.5, abs=1e-2)


def test_zero_psi(doubling_1024):
    dec = solve_coboundary(np.zeros(doubling_1024.size), doubling_1024)
    assert np.all(dec.m.values == 0) and np.all(dec.chi.values == 0) and dec.sigma2 == 0


def test_uncentred_psi_rejected(doubling_1024):
    with pytest.raises(InputError):
        solve_coboundary(np.ones(doubling_1024.size), doubling_1024)


def test_non_decaying_series():
    op = build_ulam(IdentityMap(), 16)
    psi = np.where(np.arange(16) < 8, 1.0, -1.0)
    with pytest.raises(DivergenceError):
        solve_coboundary(psi, op)


def test_induced_decomposition_residuals(induced_256):
    tol = 1e-9
    dec = solve_coboundary(cos_psi(induced_256), induced_256, tol=tol)
    assert dec.reconstruction_residual <= 10 * tol
    assert dec.kernel_residual <= 10 * tol
    assert abs(dec.breve_mean) <= 1e-8
    assert dec.sigma2 > 0


def test_projection_defect_shrinks_with_refinement(induced_256):
    coarse = solve_coboundary(cos_psi(induced_256), induced_256)
    fine_op = build_ulam(InducedLsvMap(0.25), 2048)
    fine = solve_coboundary(cos_psi(fine_op), fine_op)
    assert fine.projection_defect < coarse.projection_defect
    assert abs(fine.breve_mean) <= 1e-8


def test_suspension_unit_roof_decomposition():
    base = build_ulam(DoublingMap(), 64)
    op = suspension_ulam(base, 8)
    psi = center(unit_roof_psi(lambda y, u: np.cos(2 * np.pi * y) + 0.0 * u, DoublingMap(), base.edges, 8), op)
    dec = solve_coboundary(psi, op)
    assert dec.kernel_residual <= 1e-8
    assert abs(dec.breve_mean) <= 1e-8
    # psi(y, u) = (1-u) cos 2 pi y + u cos 4 pi y has the same variance as cos
    assert dec.sigma2 == pytest.approx(0.5, abs=0.02)


# -- conditional variances ------------------------------------------------------------


def test_profile_zero_breve(doubling_1024):
    dec = solve_coboundary(cos_psi(doubling_1024), doubling_1024)
    flat = dataclasses.replace(dec, breve_w=GriddedFunction(np.zeros(doubling_1024.size), doubling_1024.edges))
    V, dev = conditional_variance_profile(np.array([0.1, 0.2, 0.4, 0.8]), flat)
    assert V == pytest.approx([0.25, 0.5, 0.75, 1.0], abs=0)
    assert dev == 0


def test_profile_single_state(doubling_1024):
    dec = solve_coboundary(cos_psi(doubling_1024), doubling_1024)
    x0 = 0.3
    V, dev = conditional_variance_profile(np.array([x0]), dec)
    bw = float(dec.breve_w(np.array([x0]))[0])
    assert V[0] == pytest.approx(1 + bw / dec.sigma2)
    assert dev == pytest.approx(abs(bw) / dec.sigma2)


def test_profile_scaling_doubling(doubling_1024):
    dec = solve_coboundary(cos_psi(doubling_1024), doubling_1024)
    meds = []
    for n in (2**8, 2**9, 2**10):
        y0 = np.array([g.random() for g in streams.streams(1000, 14, n)])
        orbit = DoublingMap().orbit(y0, n, streams.streams(1000, 14, n))
        meds.append(np.median(np.sqrt(n) * conditional_variance_profile(orbit, dec)[1]))
    assert max(meds) / min(meds) <= 2.0


# -- persistence ----------------------------------------------------------------------


def test_save_load_round_trip(tmp_path, induced_256):
    save_operator(induced_256, tmp_path / "op.npz")
    op = load_operator(tmp_path / "op.npz")
    assert (op.matrix != induced_256.matrix).nnz == 0
    assert np.array_equal(op.edges, induced_256.edges)


def test_cached_ulam_reuses_file(tmp_path):
    a = cached_ulam(DoublingMap(), 32, tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and files[0].name.startswith(cache_key("doubling", None, 32))
    b = cached_ulam(DoublingMap(), 32, tmp_path)
    assert (a.matrix != b.matrix).nnz == 0


def test_operator_csv(tmp_path):
    op = build_ulam(DoublingMap(), 16)
    operator_to_csv(op, tmp_path / "op.csv", ["seed = 0"])
    lines = (tmp_path / "op.csv").read_text().splitlines()
    assert lines[:2] == ["# seed = 0", "row,col,value"]
    assert len(lines) == 2 + 32
