"""Quasi-reversibility solvers for over-determined Cauchy problems.

The ill-posed problem ``A u = f`` with both Dirichlet and Neumann traces
prescribed on a data boundary is solved by minimizing

    J(u) = ||A u - f||^2 + gamma * ||u||_pen^2

over the affine space matching the traces.  After homogenization (subtract
an extension field carrying the traces) the minimizer solves the normal
equations ``(A^T A + gamma R) w = A^T f`` which are symmetric positive
definite for gamma > 0 and handled by the in-house conjugate gradient.

Discretization notes
--------------------
* Operator rows live at grid nodes where the full stencil fits and are
  normalized so the largest matrix entry is 1, which keeps the normal
  equations tractable for small gamma on anisotropic space-time grids.
  The gamma values quoted by parameter-choice rules refer to this scaling
  together with the volume-weighted residual and penalty norms.
* Trace constraints are imposed discretely: the homogenized field vanishes
  on the data faces and satisfies the second-order one-sided zero-slope
  relation there (the first interior layer equals one quarter of the
  second).  Manufactured solutions whose traces are extracted with the same
  stencils are then represented exactly, which keeps noiseless floors at
  solver tolerance in rate experiments.
* The penalty is a volume-weighted discrete Sobolev quadratic form with
  axis derivatives up to ``penalty_order`` (2 or 4) plus the identity;
  parabolic problems cap the time axis at first order (the anisotropic
  norm their theory calls for — full time smoothness would price the
  initial transient of the true solution out of reach).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid, ScalarField
from .forward import Box, SparseSystem, sparse_solve

__all__ = [
    "CauchyData",
    "QrmProblem",
    "QrmSolution",
    "homogenize",
    "qrm_solve",
    "solve_cauchy",
    "rate_experiment",
    "tat_qrm",
    "HyperbolicLateralFamily",
    "EllipticCauchyFamily",
    "extract_cauchy_data",
    "multiplicative_noise",
]


# ---------------------------------------------------------------------------
# data containers


@dataclass
class CauchyData:
    """Dirichlet (p) and Neumann (q) values on the data faces of the grid.

    ``sides`` are face names of the problem grid; ``p[side]`` and
    ``q[side]`` are flat arrays over the face nodes (outward normal for q).
    """

    sides: tuple
    p: dict
    q: dict

    def __post_init__(self):
        self.sides = tuple(self.sides)
        for s in self.sides:
            pv = np.asarray(self.p[s], dtype=float).ravel()
            qv = np.asarray(self.q[s], dtype=float).ravel()
            if pv.shape != qv.shape:
                raise ValueError(f"side {s!r}: p and q must have matching sizes")
            if not (np.all(np.isfinite(pv)) and np.all(np.isfinite(qv))):
                raise ValueError(f"side {s!r}: non-finite Cauchy data")
            self.p[s] = pv
            self.q[s] = qv

    def is_zero(self) -> bool:
        return all(
            np.all(self.p[s] == 0.0) and np.all(self.q[s] == 0.0)
            for s in self.sides
        )

    def scaled(self, factor: float) -> "CauchyData":
        return CauchyData(
            self.sides,
            {s: factor * self.p[s] for s in self.sides},
            {s: factor * self.q[s] for s in self.sides},
        )


_KINDS = ("elliptic", "parabolic", "hyperbolic")


@dataclass
class QrmProblem:
    """One over-determined Cauchy problem ready for Tikhonov minimization.

    ``kind`` selects the operator: 'elliptic' (laplacian over all axes),
    'parabolic' (d_t - spatial laplacian) or 'hyperbolic' (d_tt - c^2 *
    spatial laplacian); evolution kinds put time on the last grid axis.
    ``c2`` is the squared wave speed (array over the spatial axes or
    scalar), ``b`` optional advection per axis, ``b0`` an optional zeroth
    order coefficient.  ``source`` is meaningful at operator-row nodes.
    """

    kind: str
    grid: Grid
    data: CauchyData
    gamma: float
    source: np.ndarray | None = None
    c2: object = 1.0
    b: list | None = None
    b0: object = 0.0
    penalty_order: int = 2
    zero_sides: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        if not self.gamma > 0:
            raise ValueError("regularization parameter gamma must be positive")
        if self.penalty_order not in (2, 4):
            raise ValueError("penalty_order must be 2 or 4")
        if self.source is None:
            self.source = np.zeros(self.grid.shape)
        else:
            self.source = np.asarray(self.source, dtype=float)
            if self.source.shape != self.grid.shape:
                raise ValueError("source shape must match the grid")
        axes = {s.split("_")[0] for s in self.data.sides}
        if len(axes) > 1:
            raise ValueError("data faces must lie on a single axis")
        self.zero_sides = tuple(self.zero_sides)
        if set(self.zero_sides) & set(self.data.sides):
            raise ValueError("a face cannot carry Cauchy data and be pinned to zero")

    def with_gamma(self, gamma: float) -> "QrmProblem":
        return QrmProblem(self.kind, self.grid, self.data, gamma, self.source,
                          self.c2, self.b, self.b0, self.penalty_order,
                          self.zero_sides)


@dataclass
class QrmSolution:
    u: ScalarField
    objective: float
    residual: float
    penalty: float
    iterations: int
    gradient_norm: float


# ---------------------------------------------------------------------------
# discrete operator, constraints, penalty


def _row_nodes(grid: Grid) -> np.ndarray:
    """Flat indices of nodes where every stencil leg stays on the grid."""
    interior = np.ones(grid.shape, dtype=bool)
    for a in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        sl[a] = 0
        interior[tuple(sl)] = False
        sl[a] = -1
        interior[tuple(sl)] = False
    return np.arange(grid.num_nodes).reshape(grid.shape)[interior]


def _coeff_flat(grid: Grid, value, spatial_only: bool) -> np.ndarray:
    """Broadcast a scalar/spatial-array coefficient to all grid nodes."""
    if isinstance(value, ScalarField):
        value = value.values
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.num_nodes, float(arr))
    if spatial_only and arr.shape == grid.shape[:-1]:
        arr = np.broadcast_to(arr[..., None], grid.shape)
    if arr.shape != grid.shape:
        raise ValueError(f"coefficient shape {arr.shape} incompatible with grid {grid.shape}")
    return arr.ravel()


def operator_matrix(problem: QrmProblem):
    """(A, rows, scale): sparse operator with one row per stencil-fitting
    node and columns over all grid nodes, normalized so the largest entry
    has unit magnitude (``scale`` is the factor applied to the continuum
    stencil; sources must be multiplied by it too)."""
    grid = problem.grid
    idx = np.arange(grid.num_nodes).reshape(grid.shape)
    rows_flat = _row_nodes(grid)
    nr = rows_flat.size
    r_enum = np.arange(nr)

    entries = {}  # accumulate COO

    def add(cols, vals):
        entries.setdefault("rows", []).append(r_enum)
        entries.setdefault("cols", []).append(cols)
        entries.setdefault("vals", []).append(vals)

    t_ax = grid.ndim - 1
    steps = [idx.strides[a] // idx.itemsize for a in range(grid.ndim)]

    def second_diff(axis, coeff):
        h2 = grid.spacing[axis] ** 2
        st = steps[axis]
        add(rows_flat - st, coeff / h2)
        add(rows_flat, -2.0 * coeff / h2)
        add(rows_flat + st, coeff / h2)

    def first_diff(axis, coeff):
        h = grid.spacing[axis]
        st = steps[axis]
        add(rows_flat + st, coeff / (2.0 * h))
        add(rows_flat - st, -coeff / (2.0 * h))

    ones = np.ones(nr)
    if problem.kind == "elliptic":
        for a in range(grid.ndim):
            second_diff(a, ones)
    elif problem.kind == "hyperbolic":
        c2 = _coeff_flat(grid, problem.c2, spatial_only=True)[rows_flat]
        second_diff(t_ax, ones)
        for a in range(grid.ndim - 1):
            second_diff(a, -c2)
    else:  # parabolic: central time derivative keeps the stencil symmetric in t
        first_diff(t_ax, ones)
        for a in range(grid.ndim - 1):
            second_diff(a, -ones)
    if problem.b is not None:
        for a, ba in enumerate(problem.b):
            if ba is None:
                continue
            first_diff(a, -_coeff_flat(grid, ba, spatial_only=False)[rows_flat])
    b0 = _coeff_flat(grid, problem.b0, spatial_only=False)[rows_flat]
    if np.any(b0 != 0.0):
        add(rows_flat, -b0)

    def _expand(vals):
        return np.broadcast_to(vals, (nr,)) if np.ndim(vals) == 0 else vals

    A = sp.coo_matrix(
        (
            np.concatenate([_expand(v) for v in entries["vals"]]),
            (
                np.concatenate(entries["rows"]),
                np.concatenate(entries["cols"]),
            ),
        ),
        shape=(nr, grid.num_nodes),
    ).tocsr()
    A.sum_duplicates()
    mx = float(np.abs(A.data).max()) if A.nnz else 1.0
    scale = 1.0 / mx
    return (scale * A).tocsr(), rows_flat, scale


def _data_face_layers(grid: Grid, sides) -> list:
    """[(face_flat_idx, layer1_flat_idx, layer2_flat_idx)] per data side."""
    idx = np.arange(grid.num_nodes).reshape(grid.shape)
    out = []
    for s in sides:
        a = int(s.split("_")[0][1:])
        kind = s.split("_")[1]
        if grid.shape[a] < 7:
            raise ValueError(f"axis {a} too short for trace constraints")
        sl = [slice(None)] * grid.ndim

        def take(i):
            sl[a] = i
            return idx[tuple(sl)].ravel()

        if kind == "lo":
            out.append((take(0), take(1), take(2)))
        else:
            n = grid.shape[a]
            out.append((take(n - 1), take(n - 2), take(n - 3)))
    return out


def trace_prolongation(grid: Grid, sides, zero_sides=()) -> sp.csr_matrix:
    """Map from unknowns to full-grid values under the discrete zero-trace
    constraints: face nodes vanish and each first-layer node equals one
    quarter of its second-layer neighbour (one-sided O(h^2) zero slope).
    ``zero_sides`` pin additional faces to zero value only (known
    homogeneous Dirichlet sides of the classical benchmark geometry)."""
    n = grid.num_nodes
    layers = _data_face_layers(grid, sides)
    face = np.concatenate([f for f, _, _ in layers]) if layers else np.array([], dtype=int)
    lay1 = np.concatenate([l1 for _, l1, _ in layers]) if layers else np.array([], dtype=int)
    lay2 = np.concatenate([l2 for _, _, l2 in layers]) if layers else np.array([], dtype=int)
    constrained = np.zeros(n, dtype=bool)
    constrained[face] = True
    if np.any(constrained[lay1]):
        raise ValueError("data faces overlap; domain too thin")
    constrained[lay1] = True
    pinned = np.zeros(n, dtype=bool)
    if zero_sides:
        idx = np.arange(n).reshape(grid.shape)
        for s in zero_sides:
            a = int(s.split("_")[0][1:])
            kind = s.split("_")[1]
            sl = [slice(None)] * grid.ndim
            sl[a] = 0 if kind == "lo" else grid.shape[a] - 1
            pinned[idx[tuple(sl)].ravel()] = True
        constrained |= pinned
    unknown = np.where(~constrained)[0]
    col_of = -np.ones(n, dtype=np.int64)
    col_of[unknown] = np.arange(unknown.size)
    rows = [unknown]
    cols = [col_of[unknown]]
    vals = [np.ones(unknown.size)]
    # slope rows: skip pairs whose first layer is itself pinned to zero and
    # drop the coupling where the second layer is pinned (then w1 = 0 too)
    keep = ~pinned[lay1] & ~pinned[lay2]
    l1k, l2k = lay1[keep], lay2[keep]
    if np.any(col_of[l2k] < 0):
        raise ValueError("second layer hits another constraint; domain too thin")
    rows.append(l1k)
    cols.append(col_of[l2k])
    vals.append(np.full(l1k.size, 0.25))
    P = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, unknown.size),
    ).tocsr()
    return P


def _difference_matrix(grid: Grid, axis: int, order: int) -> sp.csr_matrix:
    """Scaled difference of the given order along one axis (true discrete
    derivative, entries carry 1/h^order)."""
    n = grid.num_nodes
    idx = np.arange(n).reshape(grid.shape)
    st = idx.strides[axis] // idx.itemsize
    m = grid.shape[axis]
    h = grid.spacing[axis]
    stencils = {
        1: ((0, 1), (-1.0, 1.0)),
        2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
        4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
    }
    offs, coefs = stencils[order]
    coefs = tuple(cf / h**order for cf in coefs)
    lo_pad = -min(offs)
    hi_pad = max(offs)
    sl = [slice(None)] * grid.ndim
    sl[axis] = slice(lo_pad, m - hi_pad)
    base = idx[tuple(sl)].ravel()
    nr = base.size
    rows, cols, vals = [], [], []
    for o, cf in zip(offs, coefs):
        rows.append(np.arange(nr))
        cols.append(base + o * st)
        vals.append(np.full(nr, cf))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nr, n),
    ).tocsr()


def penalty_matrix(grid: Grid, order: int = 2, time_axis_order: int | None = None) -> sp.csr_matrix:
    """Discrete Sobolev-type quadratic form: identity plus summed squares of
    axis derivatives up to ``order``, volume-weighted like an L2 integral.

    ``time_axis_order`` caps the derivative order on the last axis — the
    anisotropic norm with two space derivatives but one time derivative
    that parabolic problems call for (full smoothness in time would make
    the initial transient of the true solution prohibitively expensive).
    """
    n = grid.num_nodes
    vol = float(np.prod(grid.spacing))
    R = sp.identity(n, format="csr")
    orders = (1, 2) if order == 2 else (1, 2, 4)
    for o in orders:
        for a in range(grid.ndim):
            if (time_axis_order is not None and a == grid.ndim - 1
                    and o > time_axis_order):
                continue
            D = _difference_matrix(grid, a, o)
            R = R + D.T @ D
    return (vol * R).tocsr()


# ---------------------------------------------------------------------------
# homogenization


def _face_coordinate(grid: Grid, axis: int):
    x = grid.axis(axis)
    return x[0], x[-1]


def extension_field(grid: Grid, data: CauchyData) -> np.ndarray:
    """Field matching the Cauchy traces: values p on the data faces and
    outward-normal slope q there.

    With data on both faces of one axis the extension is the cubic Hermite
    blend along that axis; with one face it is affine in the normal
    coordinate (value plus linear slope correction).
    """
    axis = int(data.sides[0].split("_")[0][1:])
    kinds = sorted(s.split("_")[1] for s in data.sides)
    x = grid.axis(axis)
    x_lo, x_hi = x[0], x[-1]
    L = x_hi - x_lo
    shape_face = grid.shape[:axis] + grid.shape[axis + 1:]

    def face_arr(side):
        return data.p[side].reshape(shape_face), data.q[side].reshape(shape_face)

    xi = (x - x_lo) / L
    sh = [1] * grid.ndim
    sh[axis] = grid.shape[axis]
    xi = xi.reshape(sh)

    def lift(arr):
        return np.expand_dims(arr, axis)

    if kinds == ["hi", "lo"]:
        p_lo, q_lo = face_arr(f"x{axis}_lo")
        p_hi, q_hi = face_arr(f"x{axis}_hi")
        # cubic in the axis coordinate whose *discrete* one-sided slopes
        # reproduce q exactly, so the homogenized field satisfies the
        # solver's trace constraints with no consistency error
        nu = grid.spacing[axis] / L
        a = p_lo
        # unknowns (b, c, d): value at the far face plus the two one-sided
        # second-order stencil slopes
        M = np.array([
            [1.0, 1.0, 1.0],
            [1.0, 0.0, -2.0 * nu**2],
            [1.0, 2.0, 3.0 - 2.0 * nu**2],
        ])
        rhs = np.stack([
            p_hi - a,
            -L * q_lo,
            L * q_hi,
        ])
        coef = np.linalg.solve(M, rhs.reshape(3, -1)).reshape(rhs.shape)
        b, c_, d_ = coef[0], coef[1], coef[2]
        F = lift(a) + xi * lift(b) + xi**2 * lift(c_) + xi**3 * lift(d_)
    elif kinds == ["lo"]:
        p_lo, q_lo = face_arr(f"x{axis}_lo")
        F = lift(p_lo) + (xi * L) * lift(-q_lo)
    elif kinds == ["hi"]:
        p_hi, q_hi = face_arr(f"x{axis}_hi")
        F = lift(p_hi) + ((xi - 1.0) * L) * lift(q_hi)
    else:
        raise ValueError(f"unsupported data side combination {data.sides}")
    return F


def homogenize(problem: QrmProblem):
    """Shift the problem to zero Cauchy data.

    Returns ``(problem0, F)`` where F matches the traces and the new source
    is ``f - A F`` evaluated with the discrete operator at its row nodes.
    """
    if problem.data.is_zero():
        return problem, np.zeros(problem.grid.shape)
    F = extension_field(problem.grid, problem.data)
    if problem.zero_sides:
        faces = Box(problem.grid.lo, problem.grid.hi).face_nodes(problem.grid)
        fmax = float(np.max(np.abs(F)))
        for s in problem.zero_sides:
            fs = np.max(np.abs(F[faces[s]]))
            if fs > 1e-9 * max(fmax, 1.0):
                raise ValueError(
                    f"extension field does not vanish on pinned side {s!r} "
                    f"(max {fs:.3e}); Cauchy data must vanish at shared edges"
                )
    A, rows_flat, scale = operator_matrix(problem)
    new_source = problem.source.copy()
    af = A @ F.ravel()
    new_source.ravel()[rows_flat] -= af / scale
    zero = CauchyData(
        problem.data.sides,
        {s: np.zeros_like(problem.data.p[s]) for s in problem.data.sides},
        {s: np.zeros_like(problem.data.q[s]) for s in problem.data.sides},
    )
    shifted = QrmProblem(problem.kind, problem.grid, zero, problem.gamma,
                         new_source, problem.c2, problem.b, problem.b0,
                         problem.penalty_order, problem.zero_sides)
    return shifted, F


# ---------------------------------------------------------------------------
# solve


def qrm_solve(problem: QrmProblem, x0: np.ndarray | None = None,
              tol: float = 1e-12, maxiter: int | None = None) -> QrmSolution:
    """Minimize the Tikhonov functional for a problem with zero Cauchy data.

    Solves the SPD normal equations with the in-house conjugate gradient.
    ``x0`` seeds the iteration (uniqueness is checked in tests by agreement
    from distinct random seeds).
    """
    if not problem.data.is_zero():
        raise ValueError("Cauchy data must be homogenized first (call homogenize)")
    grid = problem.grid
    A, rows_flat, scale = operator_matrix(problem)
    P = trace_prolongation(grid, problem.data.sides, problem.zero_sides)
    # residual and penalty are both volume-weighted discrete L2 quantities;
    # parabolic problems use the anisotropic norm (one time derivative)
    vol_sqrt = float(np.sqrt(np.prod(grid.spacing)))
    t_order = 1 if problem.kind == "parabolic" else None
    A_eff = (vol_sqrt * (A @ P)).tocsr()
    R_full = penalty_matrix(grid, problem.penalty_order, time_axis_order=t_order)
    R_eff = (P.T @ R_full @ P).tocsr()
    f = vol_sqrt * scale * problem.source.ravel()[rows_flat]
    M = (A_eff.T @ A_eff + problem.gamma * R_eff).tocsr()
    rhs = A_eff.T @ f
    maxiter = maxiter if maxiter is not None else max(200 * M.shape[0], 10000)
    w, info = sparse_solve(
        SparseSystem(M, rhs, tol=tol, maxiter=maxiter, symmetric=True),
        x0=x0, return_info=True,
    )
    res = float(np.linalg.norm(A_eff @ w - f))
    pen = float(np.sqrt(max(w @ (R_eff @ w), 0.0)))
    w_full = (P @ w).reshape(grid.shape)
    return QrmSolution(
        u=ScalarField(grid, w_full),
        objective=res**2 + problem.gamma * pen**2,
        residual=res,
        penalty=pen,
        iterations=info["iterations"],
        gradient_norm=2.0 * info["residual"],
    )


def solve_cauchy(problem: QrmProblem, **kw):
    """Homogenize, minimize, and shift back: returns (u field, QrmSolution)."""
    shifted, F = homogenize(problem)
    sol = qrm_solve(shifted, **kw)
    return ScalarField(problem.grid, sol.u.values + F), sol


def source_misfit_norm(problem_a: QrmProblem, problem_b: QrmProblem) -> float:
    """Distance of two (homogenized) problems' sources in the solver's
    residual norm; used to translate relative data-noise levels into the
    absolute misfit scale that parameter-choice rules refer to."""
    grid = problem_a.grid
    if problem_b.grid != grid:
        raise ValueError("problems must share a grid")
    _, rows_flat, scale = operator_matrix(problem_a)
    vol_sqrt = float(np.sqrt(np.prod(grid.spacing)))
    d = (problem_a.source - problem_b.source).ravel()[rows_flat]
    return float(vol_sqrt * scale * np.linalg.norm(d))


# ---------------------------------------------------------------------------
# data helpers


def extract_cauchy_data(grid: Grid, values: np.ndarray, sides) -> CauchyData:
    """Discrete Cauchy traces of a grid function: face values and one-sided
    O(h^2) outward-normal derivatives (matching the solver's constraints)."""
    v = np.asarray(values, dtype=float)
    p, q = {}, {}
    for s in sides:
        a = int(s.split("_")[0][1:])
        kind = s.split("_")[1]
        h = grid.spacing[a]
        sl = [slice(None)] * grid.ndim

        def take(i):
            sl[a] = i
            return v[tuple(sl)].ravel()

        if kind == "lo":
            p[s] = take(0)
            q[s] = -(-3.0 * take(0) + 4.0 * take(1) - take(2)) / (2.0 * h)
        else:
            n = grid.shape[a]
            p[s] = take(n - 1)
            q[s] = (3.0 * take(n - 1) - 4.0 * take(n - 2) + take(n - 3)) / (2.0 * h)
    return CauchyData(tuple(sides), p, q)


def multiplicative_noise(arr: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform multiplicative noise scaled to unit variance, so ``delta``
    equals the expected relative L2 perturbation."""
    if delta == 0.0:
        return np.asarray(arr, dtype=float).copy()
    theta = rng.uniform(-1.0, 1.0, size=np.shape(arr)) * np.sqrt(3.0)
    return np.asarray(arr, dtype=float) * (1.0 + delta * theta)


def _h1_error(grid: Grid, u: np.ndarray, u_star: np.ndarray, mask=None) -> float:
    """Relative discrete H1 error restricted to ``mask``."""
    from .grid import _first_derivative

    def h1sq(v):
        total = np.where(mask, v, 0.0) if mask is not None else v
        acc = np.sum(total**2)
        for a in range(grid.ndim):
            d = _first_derivative(v, a, grid.spacing[a])
            if mask is not None:
                d = np.where(mask, d, 0.0)
            acc += np.sum(d**2)
        return acc

    denom = np.sqrt(h1sq(u_star))
    if denom == 0.0:
        return np.sqrt(h1sq(u - u_star))
    return float(np.sqrt(h1sq(u - u_star)) / denom)


# ---------------------------------------------------------------------------
# problem families for rate experiments


@dataclass
class HyperbolicLateralFamily:
    """Wave-operator lateral Cauchy problem on a symmetric time cylinder,
    c = 1, manufactured discretely so the noiseless floor sits at solver
    tolerance."""

    R: float = 1.0
    T: float = 1.5
    nx: int = 41
    nt: int = 61
    penalty_order: int = 2

    def grid(self) -> Grid:
        return Grid((-self.R, -self.T), (self.R, self.T), (self.nx, self.nt))

    def exact(self, grid: Grid) -> np.ndarray:
        X, T = grid.meshgrid()
        return np.cos(0.9 * T) * np.sin(0.8 * X + 0.3) + 0.2 * X * T**2

    def make(self, delta: float, rng: np.random.Generator, gamma: float):
        grid = self.grid()
        u_star = self.exact(grid)
        sides = ("x0_lo", "x0_hi")
        data = extract_cauchy_data(grid, u_star, sides)
        for s in sides:
            data.p[s] = multiplicative_noise(data.p[s], delta, rng)
            data.q[s] = multiplicative_noise(data.q[s], delta, rng)
        probe = QrmProblem("hyperbolic", grid, data, gamma,
                           penalty_order=self.penalty_order)
        A, rows_flat, scale = operator_matrix(probe)
        src = np.zeros(grid.shape)
        src.ravel()[rows_flat] = (A @ u_star.ravel()) / scale
        probe.source = src
        region = np.ones(grid.shape, dtype=bool)
        return probe, u_star, region


@dataclass
class EllipticCauchyFamily:
    """Laplace-equation Cauchy problem with data on one side of a rectangle;
    the harmonic continuation grows exponentially away from it.

    The lateral sides carry known homogeneous Dirichlet values (the
    manufactured solution vanishes there), which pins the discrete
    continuation; the continuation depth is kept moderate so the error in
    the near-data half responds to the noise level at desk scale.
    """

    nx: int = 41
    ny: int = 33
    height: float = 0.4
    penalty_order: int = 2
    near_fraction: float = 0.5

    def grid(self) -> Grid:
        return Grid((0.0, 0.0), (1.0, self.height), (self.nx, self.ny))

    def exact(self, grid: Grid) -> np.ndarray:
        # classical harmonic continuation benchmark: O(1) on the data side,
        # exponential growth away from it
        X, Y = grid.meshgrid()
        return np.exp(np.pi * Y) * np.sin(np.pi * X)

    def make(self, delta: float, rng: np.random.Generator, gamma: float):
        grid = self.grid()
        u_star = self.exact(grid)
        sides = ("x1_lo",)
        data = extract_cauchy_data(grid, u_star, sides)
        for s in sides:
            data.p[s] = multiplicative_noise(data.p[s], delta, rng)
            data.q[s] = multiplicative_noise(data.q[s], delta, rng)
        probe = QrmProblem("elliptic", grid, data, gamma,
                           penalty_order=self.penalty_order,
                           zero_sides=("x0_lo", "x0_hi"))
        A, rows_flat, scale = operator_matrix(probe)
        src = np.zeros(grid.shape)
        src.ravel()[rows_flat] = (A @ u_star.ravel()) / scale
        probe.source = src
        _, Y = grid.meshgrid()
        region = Y <= self.near_fraction * self.height + 1e-12
        return probe, u_star, region


def rate_experiment(
    family,
    deltas,
    gamma_rule=None,
    seed: int = 0,
    csv_path: str | None = None,
    tol: float = 1e-12,
    repeats: int = 1,
):
    """Noise-sweep convergence-rate harness.

    For each noise level the family's data are perturbed with independent
    seeded streams (``repeats`` realizations averaged), gamma follows the
    rule (default delta^2), and the relative discrete H1 errors over the
    family's region and the full domain are recorded together with the
    running log-log slope of the region error.  Returns (rows, fitted_slope).
    """
    deltas = list(deltas)
    if len(deltas) < 3:
        raise ValueError("need at least 3 noise levels")
    gamma_rule = gamma_rule or (lambda d: d * d)
    root = np.random.SeedSequence(seed)
    streams = [np.random.default_rng(s) for s in root.spawn(len(deltas) * repeats)]
    rows = []
    for k, delta in enumerate(deltas):
        gamma = float(gamma_rule(delta)) if delta > 0 else 1e-12
        region_errs, full_errs = [], []
        for r in range(repeats):
            rng = streams[k * repeats + r]
            problem, u_star, region = family.make(delta, rng, gamma)
            u, _ = solve_cauchy(problem, tol=tol)
            region_errs.append(_h1_error(problem.grid, u.values, u_star, mask=region))
            full_errs.append(_h1_error(problem.grid, u.values, u_star))
        err_region = float(np.mean(region_errs))
        err_full = float(np.mean(full_errs))
        rows.append([delta, gamma, err_region, err_full, np.nan])
        pos = [(r[0], r[2]) for r in rows if r[0] > 0 and r[2] > 0]
        if len(pos) >= 2:
            ld = np.log([d for d, _ in pos])
            le = np.log([e for _, e in pos])
            rows[-1][4] = float(np.polyfit(ld, le, 1)[0])
    rows = [tuple(r) for r in rows]
    fitted = rows[-1][4]
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fp:
            wr = csv.writer(fp)
            wr.writerow(["delta", "gamma", "error_region", "error_full", "slope_running"])
            for r in rows:
                wr.writerow([f"{v:.17g}" for v in r])
    return rows, fitted


# ---------------------------------------------------------------------------
# thermoacoustic specialization


def tat_qrm(
    x_grid: Grid,
    times: np.ndarray,
    p: dict,
    q: dict,
    gamma: float,
    penalty_order: int = 2,
    tol: float = 1e-12,
    nt: int | None = None,
    return_problem: bool = False,
):
    """Recover the initial field of a wave Cauchy problem from lateral data
    on (0, T) by even time extension and quasi-reversibility.

    ``p[side]`` and ``q[side]`` have shape (face_nodes, nt) on the faces of
    the spatial grid.  Data are linearly resampled onto ``nt`` uniform
    samples (default: time step matching the spatial spacing) and extended
    evenly to (-T, T) (the true field has zero initial velocity); the
    wave-operator problem is minimized on the extended cylinder and the
    t = 0 slice is returned.  Requires T > R, the waves' exit time from
    the spatial domain's half-width.
    """
    times = np.asarray(times, dtype=float)
    T = times[-1]
    R = max(h - l for l, h in zip(x_grid.lo, x_grid.hi)) / 2.0
    if not T > R:
        raise ValueError(f"need T > R for unique recovery, got T={T}, R={R}")
    if nt is None:
        nt = int(np.ceil(T / min(x_grid.spacing))) + 1
    t_half = np.linspace(0.0, T, nt)
    st_grid = Grid(x_grid.lo + (-T,), x_grid.hi + (T,), x_grid.shape + (2 * nt - 1,))

    sides = tuple(sorted(p))
    p_ext, q_ext = {}, {}
    for s in sides:
        pv = np.asarray(p[s], dtype=float)
        qv = np.asarray(q[s], dtype=float)
        pr = np.stack([np.interp(t_half, times, row) for row in pv])
        qr = np.stack([np.interp(t_half, times, row) for row in qv])
        ext = np.concatenate([pr[:, ::-1], pr[:, 1:]], axis=1)
        exq = np.concatenate([qr[:, ::-1], qr[:, 1:]], axis=1)
        p_ext[s] = ext.ravel()
        q_ext[s] = exq.ravel()
    data = CauchyData(sides, p_ext, q_ext)
    problem = QrmProblem("hyperbolic", st_grid, data, gamma,
                         penalty_order=penalty_order)
    if return_problem:
        shifted, _ = homogenize(problem)
        return shifted
    u, sol = solve_cauchy(problem, tol=tol)
    k0 = nt - 1  # index of t = 0 in the extended axis
    f_rec = u.values[..., k0]
    return ScalarField(x_grid, f_rec), sol
