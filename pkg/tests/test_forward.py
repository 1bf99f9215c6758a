import numpy as np
import pytest
import scipy.sparse as sp

from bkinv.grid import Grid, ScalarField
from bkinv.forward import (
    Box,
    CoefficientModel,
    MollifiedSource,
    SparseSystem,
    NonConvergenceError,
    PositivityError,
    sparse_solve,
    wave_forward,
    wave_solve,
    wave_energy,
    elliptic_solve,
    elliptic_residual,
    harmonic_solve,
    heat_forward,
)


# ---------------------------------------------------------------------------
# sparse solver


def test_sparse_identity():
    A = sp.identity(30, format="csr")
    b = np.arange(30.0)
    x = sparse_solve(SparseSystem(A, b))
    np.testing.assert_allclose(x, b, atol=1e-12)


def test_sparse_manufactured_laplacian():
    n = 200
    h = 1.0 / (n + 1)
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    A = sp.diags([off, main, off], (-1, 0, 1), format="csr")
    x_nodes = np.linspace(h, 1 - h, n)
    u = np.sin(np.pi * x_nodes)
    b = A @ u
    x = sparse_solve(SparseSystem(A, b, tol=1e-12))
    np.testing.assert_allclose(x, u, atol=1e-9)


def test_sparse_spd_random_residual():
    rng = np.random.default_rng(1)
    n = 100
    A = rng.uniform(-1, 1, (n, n))
    A = 0.5 * (A + A.T)
    A += n * np.eye(n)  # diagonally dominant
    b = rng.uniform(-1, 1, n)
    x = sparse_solve(SparseSystem(sp.csr_matrix(A), b, tol=1e-10))
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10


def test_sparse_nonsymmetric_bicgstab():
    rng = np.random.default_rng(2)
    n = 80
    A = rng.uniform(-1, 1, (n, n)) + n * np.eye(n)
    b = rng.uniform(-1, 1, n)
    sys_ = SparseSystem(sp.csr_matrix(A), b, tol=1e-11)
    assert not sys_.is_symmetric()
    x = sparse_solve(sys_)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-11


def test_sparse_iteration_cap():
    rng = np.random.default_rng(3)
    n = 60
    A = rng.uniform(-1, 1, (n, n)) + n * np.eye(n)
    A = sp.csr_matrix(0.5 * (A + A.T))
    b = rng.uniform(-1, 1, n)
    with pytest.raises(NonConvergenceError) as e:
        sparse_solve(SparseSystem(A, b, tol=1e-14, maxiter=2))
    assert e.value.residual > 0


def test_sparse_rejects_nonsquare():
    with pytest.raises(ValueError):
        SparseSystem(sp.csr_matrix(np.ones((3, 4))), np.ones(3))


# ---------------------------------------------------------------------------
# coefficient / source models


def test_coefficient_model_bounds():
    g = Grid((0.0,), (1.0,), (11,))
    with pytest.raises(ValueError):
        CoefficientModel(ScalarField.full(g, 1.0), d=1.5)  # d must exceed 2
    vals = np.ones(11)
    vals[5] = 6.0
    with pytest.raises(ValueError):
        CoefficientModel(ScalarField(g, vals), d=5.0)
    clamped = CoefficientModel.from_values(g, vals, d=5.0)
    assert clamped.field.values.max() == 5.0


def test_coefficient_boundary_ring_is_one():
    g = Grid((0.0,), (1.0,), (11,))
    vals = np.full(11, 2.0)
    c = CoefficientModel.from_values(g, vals, d=5.0)
    assert c.field.values[0] == 1.0 and c.field.values[-1] == 1.0


def test_source_normalization():
    g = Grid((-1.0,), (1.0,), (401,))
    src = MollifiedSource((0.2,), eps=3 * g.spacing[0])
    from bkinv.grid import integrate

    assert abs(integrate(src.field(g)) - 1.0) <= 1e-6


def test_source_unresolved_rejected():
    g = Grid((-1.0,), (1.0,), (11,))
    with pytest.raises(ValueError):
        MollifiedSource((0.0,), eps=0.01).field(g)


# ---------------------------------------------------------------------------
# wave solver


def _wave_setup(n=1201, d=5.0):
    g = Grid((-6.0,), (6.0,), (n,))
    return g, CoefficientModel.background(g, d)


def test_wave_zero_source_stays_zero():
    g, c = _wave_setup(601)
    src = MollifiedSource((-2.0,), 3 * g.spacing[0])
    zero = ScalarField.zeros(g)
    _, _, frames, _ = wave_solve(c, zero.values, np.zeros(g.shape), 2.0)
    assert np.abs(frames).max() == 0.0


def test_wave_energy_conservation():
    g, c = _wave_setup()
    src = MollifiedSource((-2.0,), 3 * g.spacing[0])
    _, st, frames, _ = wave_solve(c, np.zeros(g.shape), src.field(g).values, 4.0)
    E = wave_energy(frames, st, c)
    k0 = np.searchsorted(st, 0.5)  # after the source support has been passed
    drift = abs(E[-1] - E[k0]) / E[k0]
    assert drift < 0.01


def test_wave_travel_time():
    g, c = _wave_setup()
    src = MollifiedSource((-2.0,), 3 * g.spacing[0])
    omega = Box((-1.0,), (1.0,))
    _, trace = wave_forward(c, src, T=4.0, omega=omega)
    vals = trace.values["x0_hi"][0]
    tt = trace.samples
    arrival = tt[np.argmax(np.gradient(vals, tt))]
    assert abs(arrival - 3.0) <= 2 * g.spacing[0] / 0.9 + 0.05


def test_wave_cfl_rejected():
    g, c = _wave_setup(301)
    src = MollifiedSource((-2.0,), 3 * g.spacing[0])
    with pytest.raises(ValueError):
        wave_forward(c, src, T=1.0, cfl=1.2)


def test_wave_padding_rejected():
    g, c = _wave_setup(301)
    src = MollifiedSource((-2.0,), 3 * g.spacing[0])
    omega = Box((-1.0,), (1.0,))
    # reflection from the wall at -6: |x0-wall| + |wall->omega| = 4 + 5 = 9 < T
    with pytest.raises(ValueError):
        wave_forward(c, src, T=10.0, omega=omega)


def test_wave_trace_deterministic():
    g, c = _wave_setup(601)
    src = MollifiedSource((-2.0,), 3 * g.spacing[0])
    omega = Box((-1.0,), (1.0,))
    _, t1 = wave_forward(c, src, T=3.0, omega=omega)
    _, t2 = wave_forward(c, src, T=3.0, omega=omega)
    np.testing.assert_array_equal(t1.values["x0_hi"], t2.values["x0_hi"])


# ---------------------------------------------------------------------------
# screened-Poisson solver


def test_elliptic_fundamental_solution_1d():
    g = Grid((-4.0,), (4.0,), (4001,))
    c = CoefficientModel.background(g, 5.0)
    src = MollifiedSource((0.0,), 3 * g.spacing[0])
    x = g.axis(0)
    for s in (1.0, 5.0, 10.0):
        w = elliptic_solve(c, s, src)
        exact = np.exp(-s * np.abs(x)) / (2 * s)
        sel = (np.abs(x) > 4 * src.eps) & (s * np.abs(x) < 12)
        rel = np.abs(w.values[sel] - exact[sel]) / exact[sel]
        assert rel.max() < 0.01
        assert w.values.min() > 0


def test_elliptic_linearity():
    g = Grid((-2.0,), (2.0,), (801,))
    c = CoefficientModel.background(g, 5.0)
    src = MollifiedSource((0.0,), 3 * g.spacing[0])
    w1 = elliptic_solve(c, 2.0, src)
    # doubling the source amplitude doubles the field (linear equation);
    # realized by scaling the solution of the unit-mass source
    r = elliptic_residual(c, 2.0, src, w1)
    assert np.abs(r).max() <= 1e-7
    w2 = ScalarField(g, 2.0 * w1.values)
    r2 = (np.abs(2 * r)).max()
    assert r2 <= 2e-7
    assert np.all(w2.values == 2.0 * w1.values)


def test_elliptic_monotone_decay_1d():
    g = Grid((-3.0,), (3.0,), (1201,))
    c = CoefficientModel.background(g, 5.0)
    src = MollifiedSource((0.0,), 3 * g.spacing[0])
    w = elliptic_solve(c, 3.0, src).values
    x = g.axis(0)
    right = w[(x > 4 * src.eps)]
    assert np.all(np.diff(right) < 0)
    left = w[(x < -4 * src.eps)]
    assert np.all(np.diff(left) > 0)


def test_elliptic_discrete_residual():
    g = Grid((-2.0,), (2.0,), (801,))
    vals = 1.0 + 2.0 * np.exp(-((g.axis(0) - 0.5) ** 2) / 0.1)
    c = CoefficientModel.from_values(g, vals, 5.0)
    src = MollifiedSource((-1.5,), 3 * g.spacing[0])
    w = elliptic_solve(c, 4.0, src, tol=1e-12)
    res = elliptic_residual(c, 4.0, src, w)
    assert np.abs(res).max() <= 1e-6


def test_elliptic_positivity_2d_and_failure_mode():
    g = Grid((-1.0, -1.0), (1.0, 1.0), (41, 41))
    c = CoefficientModel.background(g, 5.0)
    src = MollifiedSource((0.0, 0.0), 3 * g.spacing[0])
    w = elliptic_solve(c, 3.0, src)
    assert w.values.min() > 0


def test_elliptic_rejects_bad_s():
    g = Grid((-1.0,), (1.0,), (101,))
    c = CoefficientModel.background(g, 5.0)
    src = MollifiedSource((0.0,), 3 * g.spacing[0])
    with pytest.raises(ValueError):
        elliptic_solve(c, -1.0, src)


# ---------------------------------------------------------------------------
# harmonic solver


def test_harmonic_constant_and_affine():
    g = Grid((0.0, 0.0), (1.0, 1.0), (21, 21))
    bv = np.full(g.shape, 4.2)
    p = harmonic_solve(g, bv)
    np.testing.assert_allclose(p.values, 4.2, atol=1e-9)

    X, _ = g.meshgrid()
    p2 = harmonic_solve(g, X)
    np.testing.assert_allclose(p2.values, X, atol=1e-9)


def test_harmonic_maximum_principle_random():
    g = Grid((0.0, 0.0), (1.0, 1.0), (21, 21))
    rng = np.random.default_rng(7)
    for _ in range(50):
        bv = np.zeros(g.shape)
        bv[0, :] = rng.uniform(-1, 1, 21)
        bv[-1, :] = rng.uniform(-1, 1, 21)
        bv[:, 0] = rng.uniform(-1, 1, 21)
        bv[:, -1] = rng.uniform(-1, 1, 21)
        p = harmonic_solve(g, bv)
        ring = np.concatenate([bv[0, :], bv[-1, :], bv[:, 0], bv[:, -1]])
        inner = p.values[1:-1, 1:-1]
        assert inner.max() <= ring.max() + 1e-10
        assert inner.min() >= ring.min() - 1e-10


# ---------------------------------------------------------------------------
# heat solver


def test_heat_zero_initial():
    g = Grid((0.0,), (1.0,), (51,))
    field, _ = heat_forward(ScalarField.zeros(g), T=0.01, dt=1e-3)
    assert np.abs(field.values).max() == 0.0


def test_heat_separation_of_variables():
    g = Grid((0.0,), (1.0,), (201,))
    f0 = ScalarField.from_function(g, lambda x: np.sin(np.pi * x))
    field, (p, q) = heat_forward(f0, T=0.1, dt=1e-4)
    exact = np.exp(-np.pi**2 * 0.1) * np.sin(np.pi * g.axis(0))
    err = np.abs(field.values[:, -1] - exact).max() / exact.max()
    assert err < 0.01
    # Neumann trace at the left face: outward normal is -x
    want_q = -np.pi * np.exp(-np.pi**2 * 0.1)
    assert q.values["x0_lo"][0, -1] == pytest.approx(want_q, rel=0.01)


def test_heat_max_norm_nonincreasing():
    g = Grid((0.0,), (1.0,), (101,))
    rng = np.random.default_rng(5)
    f0 = ScalarField(g, np.concatenate([[0.0], rng.uniform(0, 1, 99), [0.0]]))
    field, _ = heat_forward(f0, T=0.02, dt=5e-4)
    sup = np.abs(field.values).max(axis=0)
    assert np.all(np.diff(sup) <= 1e-12)


def test_heat_reflection_symmetry():
    g = Grid((0.0,), (1.0,), (101,))
    f0 = ScalarField.from_function(g, lambda x: np.sin(np.pi * x) ** 2 * (x * (1 - x)))
    sym = ScalarField(g, 0.5 * (f0.values + f0.values[::-1]))
    field, _ = heat_forward(sym, T=0.01, dt=2e-4)
    v = field.values
    assert np.abs(v - v[::-1, :]).max() < 1e-12
