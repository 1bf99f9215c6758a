"""Forward PDE solvers on uniform grids.

Contains an explicit leapfrog solver for the wave equation
``c(x) u_tt = laplace(u)``, an unconditionally stable implicit heat solver,
a screened-Poisson solver in pseudo-frequency (``laplace(w) - s^2 c w =
-source``), a harmonic (Laplace) solver, and the in-house conjugate-gradient
/ BiCGStab iteration used by every implicit step.

Wave speed is ``1/sqrt(c) <= 1`` because ``c >= 1`` everywhere, so unit
distance per unit time bounds all travel times; padding checks rely on this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import (
    Grid,
    ScalarField,
    BoundaryTrace,
    trapezoid_weights,
    _first_derivative,
)

__all__ = [
    "Box",
    "CoefficientModel",
    "MollifiedSource",
    "SparseSystem",
    "NonConvergenceError",
    "PositivityError",
    "InstabilityError",
    "sparse_solve",
    "wave_forward",
    "wave_solve",
    "elliptic_solve",
    "harmonic_solve",
    "heat_forward",
]


class NonConvergenceError(RuntimeError):
    def __init__(self, residual, iterations, message="iterative solver did not converge"):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message}: residual {residual:.3e} after {iterations} iterations")


class PositivityError(RuntimeError):
    pass


class InstabilityError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# geometry helpers


@dataclass(frozen=True)
class Box:
    """Axis-aligned sub-box of a grid (the measurement region)."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi length mismatch")

    @property
    def ndim(self):
        return len(self.lo)

    def contains(self, point, margin=0.0) -> bool:
        p = np.atleast_1d(point)
        return all(
            self.lo[a] - margin <= p[a] <= self.hi[a] + margin
            for a in range(self.ndim)
        )

    def interior_mask(self, grid: Grid, spatial_axes=None) -> np.ndarray:
        """Boolean mask of grid nodes inside the box (closed)."""
        axes = range(self.ndim) if spatial_axes is None else spatial_axes
        mask = np.ones(grid.shape, dtype=bool)
        eps = 1e-9
        for a, ga in zip(range(self.ndim), axes):
            x = grid.axis(ga)
            m1 = (x >= self.lo[a] - eps) & (x <= self.hi[a] + eps)
            shape = [1] * grid.ndim
            shape[ga] = grid.shape[ga]
            mask &= m1.reshape(shape)
        return mask

    def face_nodes(self, grid: Grid) -> dict:
        """Index arrays of grid nodes on each face of the box.

        Box faces must align with grid nodes.  Returns a dict keyed by the
        side names of ``grid.side_names`` restricted to this box.
        """
        out = {}
        for a in range(self.ndim):
            x = grid.axis(a)
            h = grid.spacing[a]
            for kind, pos in (("lo", self.lo[a]), ("hi", self.hi[a])):
                i = int(round((pos - grid.lo[a]) / h))
                if not (0 <= i < grid.shape[a]) or abs(x[i] - pos) > 1e-9 * max(1.0, abs(pos)) + 1e-12:
                    raise ValueError(f"box face x{a}={pos} does not align with grid nodes")
                idx = []
                for b in range(self.ndim):
                    if b == a:
                        idx.append(np.array([i]))
                    else:
                        xb = grid.axis(b)
                        sel = np.where((xb >= self.lo[b] - 1e-9) & (xb <= self.hi[b] + 1e-9))[0]
                        idx.append(sel)
                mesh = np.meshgrid(*idx, indexing="ij")
                out[f"x{a}_{kind}"] = tuple(m.ravel() for m in mesh)
        return out


# ---------------------------------------------------------------------------
# coefficient and source models


@dataclass
class CoefficientModel:
    """Wave-equation coefficient ``c(x)`` with the box constraint 1 <= c <= d.

    ``c`` equals 1 on all boundary-adjacent nodes of its grid, modelling a
    scatterer embedded in a homogeneous background.
    """

    field: ScalarField
    d: float

    def __post_init__(self):
        if not self.d > 2.0:
            raise ValueError("upper bound d must exceed 2")
        v = self.field.values
        if v.min() < 1.0 - 1e-12 or v.max() > self.d + 1e-12:
            raise ValueError(
                f"coefficient out of [1, {self.d}]: range [{v.min()}, {v.max()}]"
            )
        ring = _boundary_ring_mask(self.field.grid)
        if np.max(np.abs(v[ring] - 1.0)) > 1e-12:
            raise ValueError("coefficient must equal 1 on boundary-adjacent nodes")

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @classmethod
    def background(cls, grid: Grid, d: float) -> "CoefficientModel":
        return cls(ScalarField.full(grid, 1.0), d)

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray, d: float) -> "CoefficientModel":
        """Clamp values into [1, d], reset the boundary ring to 1, and wrap."""
        v = np.clip(np.asarray(values, dtype=float), 1.0, d)
        ring = _boundary_ring_mask(grid)
        v[ring] = 1.0
        return cls(ScalarField(grid, v), d)


def _boundary_ring_mask(grid: Grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    for a in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        sl[a] = 0
        mask[tuple(sl)] = True
        sl[a] = grid.shape[a] - 1
        mask[tuple(sl)] = True
    return mask


@dataclass(frozen=True)
class MollifiedSource:
    """Narrow normalized Gaussian standing in for a point impulse.

    ``exp(-|x - x0|^2 / eps^2)`` scaled so the discrete trapezoid integral
    over the grid equals one.
    """

    x0: tuple
    eps: float

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not self.eps > 0:
            raise ValueError("source width eps must be positive")

    def field(self, grid: Grid) -> ScalarField:
        if self.eps < 1.5 * max(grid.spacing):
            raise ValueError(
                f"source width {self.eps} unresolved on grid spacing {grid.spacing}"
            )
        mesh = grid.meshgrid()
        r2 = np.zeros(grid.shape)
        for a in range(grid.ndim):
            r2 += (mesh[a] - self.x0[a]) ** 2
        raw = np.exp(-r2 / self.eps**2)
        mass = float(np.sum(trapezoid_weights(grid) * raw))
        if mass <= 0:
            raise ValueError("source has zero discrete mass on this grid")
        return ScalarField(grid, raw / mass)


# ---------------------------------------------------------------------------
# in-house iterative linear solvers


@dataclass
class SparseSystem:
    """A sparse linear system in compressed-row storage.

    ``symmetric=None`` triggers structural detection; set it explicitly for
    large matrices where the transpose comparison is worth skipping.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    tol: float = 1e-10
    maxiter: int | None = None
    symmetric: bool | None = None
    miniter: int = 0

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        n, m = self.matrix.shape
        if n != m:
            raise ValueError(f"matrix must be square, got {n}x{m}")
        if self.rhs.size != n:
            raise ValueError("rhs size does not match matrix")
        if self.maxiter is None:
            self.maxiter = max(10 * n, 1000)

    def is_symmetric(self) -> bool:
        if self.symmetric is not None:
            return self.symmetric
        d = self.matrix - self.matrix.T
        scale = max(abs(self.matrix.max()), abs(self.matrix.min()), 1e-300)
        sym = d.nnz == 0 or abs(d).max() <= 1e-12 * scale
        self.symmetric = bool(sym)
        return self.symmetric


def _jacobi_diag(A: sp.csr_matrix) -> np.ndarray:
    d = A.diagonal().copy()
    d[d == 0.0] = 1.0
    return 1.0 / d


def _cg(A, b, x0, tol_abs, maxiter, minv, miniter=0, history=None):
    x = x0.copy()
    r = b - A @ x
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    res = float(np.linalg.norm(r))
    it = 0
    while (res > tol_abs or it < miniter) and it < maxiter:
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            # loss of positive definiteness at round-off level: bail out
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r))
        if history is not None:
            # quadratic energy 1/2 x'Ax - b'x; decreases monotonically for CG
            history.append(0.5 * float(x @ (A @ x)) - float(b @ x))
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, res, it


def _bicgstab(A, b, x0, tol_abs, maxiter, minv):
    x = x0.copy()
    r = b - A @ x
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    res = float(np.linalg.norm(r))
    it = 0
    while res > tol_abs and it < maxiter:
        rho_new = float(rhat @ r)
        if abs(rho_new) < 1e-300:
            break
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = minv * p
        v = A @ phat
        denom = float(rhat @ v)
        if abs(denom) < 1e-300:
            break
        alpha = rho_new / denom
        s = r - alpha * v
        if float(np.linalg.norm(s)) <= tol_abs:
            x += alpha * phat
            res = float(np.linalg.norm(b - A @ x))
            it += 1
            break
        shat = minv * s
        t = A @ shat
        tt = float(t @ t)
        if tt < 1e-300:
            break
        omega = float(t @ s) / tt
        x += alpha * phat + omega * shat
        r = s - omega * t
        res = float(np.linalg.norm(r))
        rho = rho_new
        it += 1
    return x, res, it


def sparse_solve(system: SparseSystem, x0: np.ndarray | None = None,
                 return_info: bool = False, energy_history: list | None = None):
    """Solve a sparse system: CG when symmetric positive definite, BiCGStab
    otherwise, both Jacobi-preconditioned.

    Raises `NonConvergenceError` with the final residual when the iteration
    cap is reached before the residual norm drops below tolerance.  With
    ``return_info`` the result is ``(x, {"residual", "iterations"})``; an
    ``energy_history`` list collects the CG quadratic energy per iteration.
    """
    A = system.matrix
    b = system.rhs
    x0 = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0 and np.linalg.norm(A @ x0) == 0.0:
        x = np.zeros_like(b)
        return (x, {"residual": 0.0, "iterations": 0}) if return_info else x
    tol_abs = system.tol * max(bnorm, 1e-300)
    minv = _jacobi_diag(A)
    if system.is_symmetric():
        x, res, it = _cg(A, b, x0, tol_abs, system.maxiter, minv,
                         miniter=system.miniter, history=energy_history)
    else:
        x, res, it = _bicgstab(A, b, x0, tol_abs, system.maxiter, minv)
    if res > tol_abs:
        raise NonConvergenceError(res / max(bnorm, 1e-300), it)
    return (x, {"residual": res, "iterations": it}) if return_info else x


# ---------------------------------------------------------------------------
# stencil assembly


def _flat_index(grid: Grid):
    return np.arange(grid.num_nodes).reshape(grid.shape)


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Second-order Laplacian over all grid axes; rows on the grid boundary
    are identity placeholders meant to be overwritten or eliminated."""
    n = grid.num_nodes
    idx = _flat_index(grid)
    rows, cols, vals = [], [], []
    interior = np.ones(grid.shape, dtype=bool)
    for a in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        sl[a] = 0
        interior[tuple(sl)] = False
        sl[a] = -1
        interior[tuple(sl)] = False
    ii = idx[interior]
    for a in range(grid.ndim):
        h2 = grid.spacing[a] ** 2
        step = idx.strides[a] // idx.itemsize
        rows.extend([ii, ii, ii])
        cols.extend([ii - step, ii, ii + step])
        vals.extend([
            np.full(ii.size, 1.0 / h2),
            np.full(ii.size, -2.0 / h2),
            np.full(ii.size, 1.0 / h2),
        ])
    bb = idx[~interior]
    rows.append(bb)
    cols.append(bb)
    vals.append(np.ones(bb.size))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return A.tocsr()


def _interior_boundary_split(grid: Grid):
    interior = np.ones(grid.shape, dtype=bool)
    for a in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        sl[a] = 0
        interior[tuple(sl)] = False
        sl[a] = -1
        interior[tuple(sl)] = False
    return interior


def dirichlet_elliptic(
    grid: Grid,
    diag_field: np.ndarray,
    rhs_field: np.ndarray,
    boundary_values: np.ndarray,
    advect: list | None = None,
    tol: float = 1e-11,
    x0: np.ndarray | None = None,
    miniter: int = 0,
) -> np.ndarray:
    """Solve ``-laplace(u) - advect . grad(u) + diag * u = rhs`` with Dirichlet
    data on the whole grid boundary, eliminating boundary unknowns.

    ``advect`` is a list of per-axis coefficient arrays (or None).  Returns
    the full grid solution including the prescribed boundary values.
    """
    interior = _interior_boundary_split(grid)
    idx = _flat_index(grid)
    n_int = int(interior.sum())
    renum = -np.ones(grid.num_nodes, dtype=np.int64)
    renum[idx[interior]] = np.arange(n_int)

    full = np.where(interior, 0.0, boundary_values)
    rows, cols, vals = [], [], []
    rhs = rhs_field[interior].astype(float).copy()
    ii_flat = idx[interior]
    ri = renum[ii_flat]

    rows.append(ri)
    cols.append(ri)
    vals.append(diag_field[interior].astype(float))

    for a in range(grid.ndim):
        h = grid.spacing[a]
        step = idx.strides[a] // idx.itemsize
        for sgn, shift in ((1, step), (-1, -step)):
            nb = ii_flat + shift
            coeff = np.full(n_int, -1.0 / h**2)
            if advect is not None and advect[a] is not None:
                coeff = coeff - sgn * advect[a][interior] / (2.0 * h)
            nb_int = renum[nb] >= 0
            rows.append(ri[nb_int])
            cols.append(renum[nb[nb_int]])
            vals.append(coeff[nb_int])
            # neighbours on the boundary move to the right-hand side
            rhs[~nb_int] -= coeff[~nb_int] * full.ravel()[nb[~nb_int]]
        diag_add = np.full(n_int, 2.0 / h**2)
        rows.append(ri)
        cols.append(ri)
        vals.append(diag_add)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_int, n_int),
    ).tocsr()
    symmetric = advect is None or all(v is None for v in (advect or []))
    guess = None
    if x0 is not None:
        guess = np.asarray(x0, dtype=float).ravel()[ii_flat]
    sol = sparse_solve(
        SparseSystem(A, rhs, tol=tol, symmetric=symmetric, miniter=miniter),
        x0=guess,
    )
    full_flat = full.ravel().copy()
    full_flat[ii_flat] = sol
    return full_flat.reshape(grid.shape)


# ---------------------------------------------------------------------------
# wave solver


def _check_padding(grid: Grid, omega: Box, x0, T: float):
    """Reject runs where a wall reflection could reach the measurement
    boundary before time T (speed <= 1 everywhere)."""
    x0 = np.atleast_1d(x0)
    for a in range(omega.ndim):
        for wall in (grid.lo[a], grid.hi[a]):
            d_src = abs(x0[a] - wall)
            d_back = min(abs(omega.lo[a] - wall), abs(omega.hi[a] - wall))
            if d_src + d_back <= T:
                raise ValueError(
                    f"padding too small on axis {a}: reflection from wall at "
                    f"{wall} can reach the measurement boundary at time "
                    f"{d_src + d_back:.3g} <= T={T}"
                )


def wave_solve(
    c: CoefficientModel,
    u0: np.ndarray,
    v0: np.ndarray,
    T: float,
    cfl: float = 0.9,
    omega: Box | None = None,
    store_every: int = 1,
    check_padding_from=None,
    bc_values: dict | None = None,
):
    """Leapfrog integration of ``c u_tt = laplace(u)`` with hard walls.

    Returns ``(times, stored_times, stored_frames, trace)`` where ``trace``
    is a BoundaryTrace on the faces of ``omega`` (None if omega is None).
    Initial data: ``u(.,0) = u0``, ``u_t(.,0) = v0``.  ``bc_values`` maps
    grid side names to ``(data_times, values(nodes, nt_data))`` Dirichlet
    histories, linearly resampled onto the solver's steps; other boundary
    nodes are hard walls.
    """
    grid = c.grid
    if not 0 < cfl <= 0.9:
        raise ValueError(f"cfl must lie in (0, 0.9], got {cfl}")
    if T <= 0:
        raise ValueError("T must be positive")
    if check_padding_from is not None and omega is not None:
        _check_padding(grid, omega, check_padding_from, T)

    hmin = min(grid.spacing)
    dt_target = cfl * hmin / np.sqrt(grid.ndim)
    nt = int(np.ceil(T / dt_target)) + 1
    dt = T / (nt - 1)
    times = np.linspace(0.0, T, nt)

    cv = c.field.values
    lap = laplacian_matrix(grid)
    shape = grid.shape
    ring = _boundary_ring_mask(grid)

    bc_faces = {}
    if bc_values:
        grid_faces = Box(grid.lo, grid.hi).face_nodes(grid)
        for s, (bt, bv) in bc_values.items():
            bt = np.asarray(bt, dtype=float)
            bv = np.asarray(bv, dtype=float)
            resampled = np.empty((bv.shape[0], nt))
            for j in range(bv.shape[0]):
                resampled[j] = np.interp(times, bt, bv[j], left=bv[j, 0], right=bv[j, -1])
            bc_faces[s] = (grid_faces[s], resampled)

    def apply_bc(u, k):
        u[ring] = 0.0
        for s, (nodes, vals) in bc_faces.items():
            u[nodes] = vals[:, k]

    u_prev = np.asarray(u0, dtype=float).copy()
    apply_bc(u_prev, 0)
    lap_u0 = (lap @ u_prev.ravel()).reshape(shape)
    u_cur = u_prev + dt * np.asarray(v0, dtype=float) + 0.5 * dt**2 * lap_u0 / cv
    apply_bc(u_cur, 1)

    face_nodes = omega.face_nodes(grid) if omega is not None else None
    trace_vals = None
    if face_nodes is not None:
        trace_vals = {s: np.empty((len(nd[0]), nt)) for s, nd in face_nodes.items()}
        for s, nd in face_nodes.items():
            trace_vals[s][:, 0] = u_prev[nd]
            trace_vals[s][:, 1] = u_cur[nd]

    stored = [u_prev.copy()]
    stored_t = [0.0]
    if store_every == 1 or (1 % store_every == 0):
        stored.append(u_cur.copy())
        stored_t.append(times[1])

    for k in range(2, nt):
        lap_u = (lap @ u_cur.ravel()).reshape(shape)
        u_next = 2.0 * u_cur - u_prev + dt**2 * lap_u / cv
        apply_bc(u_next, k)
        if not np.all(np.isfinite(u_next)):
            raise InstabilityError(f"non-finite wave field at step {k} (t={times[k]:.4g})")
        u_prev, u_cur = u_cur, u_next
        if face_nodes is not None:
            for s, nd in face_nodes.items():
                trace_vals[s][:, k] = u_cur[nd]
        if k % store_every == 0:
            stored.append(u_cur.copy())
            stored_t.append(times[k])

    trace = None
    if face_nodes is not None:
        trace = BoundaryTrace(grid, tuple(sorted(face_nodes)), times, trace_vals)
    return times, np.array(stored_t), np.array(stored), trace


def wave_forward(
    c: CoefficientModel,
    src: MollifiedSource,
    T: float,
    cfl: float = 0.9,
    omega: Box | None = None,
    store_every: int = 1,
):
    """Wave solve with zero displacement and an impulsive velocity source.

    Returns the space-time field (time is the trailing grid axis) and the
    Dirichlet trace on the faces of ``omega``.  The padding precondition is
    enforced: reflections from the outer walls must not reach the
    measurement boundary before T.
    """
    grid = c.grid
    v0 = src.field(grid).values
    check_from = src.x0 if omega is not None else None
    times, stored_t, frames, trace = wave_solve(
        c, np.zeros(grid.shape), v0, T, cfl=cfl, omega=omega,
        store_every=store_every, check_padding_from=check_from,
    )
    st_grid = Grid(
        grid.lo + (float(stored_t[0]),),
        grid.hi + (float(stored_t[-1]),),
        grid.shape + (len(stored_t),),
    )
    field = ScalarField(st_grid, np.moveaxis(frames, 0, -1))
    return field, trace


def wave_energy(frames: np.ndarray, times: np.ndarray, c: CoefficientModel) -> np.ndarray:
    """Discrete energy (1/2) integral(c u_t^2 + |grad u|^2) per stored frame.

    Uses centered u_t between consecutive frames; returns one value per
    interior frame pair midpoint.
    """
    grid = c.grid
    w = trapezoid_weights(grid)
    cv = c.field.values
    energies = []
    for k in range(1, len(times)):
        dt = times[k] - times[k - 1]
        ut = (frames[k] - frames[k - 1]) / dt
        umid = 0.5 * (frames[k] + frames[k - 1])
        g2 = np.zeros(grid.shape)
        for a in range(grid.ndim):
            g2 += _first_derivative(umid, a, grid.spacing[a]) ** 2
        energies.append(0.5 * float(np.sum(w * (cv * ut**2 + g2))))
    return np.array(energies)


# ---------------------------------------------------------------------------
# screened-Poisson (pseudo-frequency) solver


def _tridiag_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                   rhs: np.ndarray) -> np.ndarray:
    """Direct elimination for tridiagonal systems.

    For M-matrices (positive diagonal, nonpositive off-diagonals) with
    nonnegative right-hand side every arithmetic step combines same-signed
    numbers, so the solution is componentwise accurate and nonnegative even
    where it decays to the underflow threshold; an iterative solver's
    additive error floor would destroy that tail.
    """
    n = diag.size
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        piv = diag[i] - lower[i - 1] * cp[i - 1]
        cp[i] = upper[i] / piv if i < n - 1 else 0.0
        dp[i] = (rhs[i] - lower[i - 1] * dp[i - 1]) / piv
    x = np.empty(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def _absorbing_ratio(s: float, h: float) -> float:
    """Decay ratio of the discrete outgoing mode of w'' = s^2 w (c = 1)."""
    q = 2.0 + (s * h) ** 2
    return (q - np.sqrt(q * q - 4.0)) / 2.0


def elliptic_solve(
    c: CoefficientModel,
    s: float,
    src: MollifiedSource,
    tol: float = 1e-12,
    x0: np.ndarray | None = None,
) -> ScalarField:
    """Solve ``laplace(w) - s^2 c(x) w = -source`` with decay at infinity.

    In 1D the outer rows impose the exact discrete decaying-mode ratio and
    the tridiagonal elimination keeps the solution positive down to the
    underflow threshold.  In 2D the grid is assumed pre-padded,
    homogeneous Dirichlet is applied on the outer layer and the system is
    solved by conjugate gradient (``x0`` warm-starts sweeps over s); sign
    violations within the solver's algebraic noise floor are lifted to the
    floor, anything larger raises `PositivityError` (discretization too
    coarse for this pseudo-frequency).
    """
    if not s > 0:
        raise ValueError("pseudo-frequency s must be positive")
    grid = c.grid
    f = src.field(grid).values

    if grid.ndim == 1:
        h = grid.spacing[0]
        n = grid.shape[0]
        cv = c.field.values
        rho = _absorbing_ratio(s, h)
        # interior rows of (-w'' + s^2 c w = f); end unknowns eliminated via
        # w_0 = rho w_1 and w_{n-1} = rho w_{n-2}
        m = n - 2
        main = 2.0 / h**2 + s**2 * cv[1:-1]
        main[0] -= rho / h**2
        main[-1] -= rho / h**2
        off = np.full(m - 1, -1.0 / h**2)
        sol = _tridiag_solve(off, main, off, f[1:-1])
        w = np.empty(n)
        w[1:-1] = sol
        w[0] = rho * w[1]
        w[-1] = rho * w[-2]
    else:
        w = dirichlet_elliptic(
            grid,
            diag_field=s**2 * c.field.values,
            rhs_field=f,
            boundary_values=np.zeros(grid.shape),
            tol=tol,
            x0=x0,
            miniter=max(grid.shape),
        )
        # the exact discrete solution of this M-matrix system is positive;
        # sign flips inside the algebraic error band are solver noise
        floor = 100.0 * tol * float(w.max())
        bad = w <= 0.0
        if bad.any():
            if float(np.min(w[bad])) < -floor:
                raise PositivityError(
                    f"screened-Poisson solution non-positive (min {w.min():.3e} "
                    f"below the solver noise floor {floor:.3e}) at s={s}; "
                    f"refine the grid or enlarge the padding"
                )
            w = np.where(bad, floor, w)

    if w.min() <= 0.0:
        raise PositivityError(
            f"screened-Poisson solution non-positive (min {w.min():.3e}) at "
            f"s={s}; refine the grid or enlarge the padding"
        )
    return ScalarField(grid, w)


def elliptic_residual(c: CoefficientModel, s: float, src: MollifiedSource,
                      w: ScalarField) -> np.ndarray:
    """Interior residual of the discrete screened-Poisson equation."""
    grid = c.grid
    lap = laplacian_matrix(grid)
    res = (lap @ w.values.ravel()).reshape(grid.shape)
    res -= s**2 * c.field.values * w.values
    res += src.field(grid).values
    res[_boundary_ring_mask(grid)] = 0.0
    return res


# ---------------------------------------------------------------------------
# harmonic solver


def harmonic_solve(grid: Grid, boundary_values: np.ndarray, tol: float = 1e-11) -> ScalarField:
    """Solve ``laplace(p) = 0`` with Dirichlet data given on the grid boundary.

    ``boundary_values`` is a full grid-shaped array whose boundary-ring
    entries hold the Dirichlet data (interior entries are ignored).
    """
    bv = np.asarray(boundary_values, dtype=float)
    if not np.all(np.isfinite(bv[_boundary_ring_mask(grid)])):
        raise ValueError("non-finite boundary values")
    sol = dirichlet_elliptic(
        grid,
        diag_field=np.zeros(grid.shape),
        rhs_field=np.zeros(grid.shape),
        boundary_values=bv,
        tol=tol,
    )
    return ScalarField(grid, sol)


# ---------------------------------------------------------------------------
# heat solver


def heat_forward(
    f0: ScalarField,
    T: float,
    dt: float,
    diffusivity: ScalarField | None = None,
    bc_values: dict | None = None,
    trace_box: Box | None = None,
    tol: float = 1e-12,
):
    """Implicit-Euler integration of ``v_t = a(x) laplace(v)`` (a = 1 default).

    Dirichlet data on the grid boundary may be supplied per side as arrays
    of shape (side_nodes, nt); the default is homogeneous.  Implicit Euler
    is used for its discrete maximum principle.  Returns the space-time
    field plus Dirichlet and Neumann traces on ``trace_box`` (the grid
    boundary when omitted).
    """
    grid = f0.grid
    nt = int(np.ceil(T / dt)) + 1
    dt = T / (nt - 1)
    times = np.linspace(0.0, T, nt)
    a = np.ones(grid.shape) if diffusivity is None else diffusivity.values
    if a.min() <= 0:
        raise ValueError("diffusivity must be positive")

    interior = _interior_boundary_split(grid)
    idx = _flat_index(grid)
    n_int = int(interior.sum())
    renum = -np.ones(grid.num_nodes, dtype=np.int64)
    renum[idx[interior]] = np.arange(n_int)
    ii_flat = idx[interior]
    ri = renum[ii_flat]

    # symmetrized form: (1/(a dt)) v_new - laplace(v_new) = v_old/(a dt)
    rows = [ri]
    cols = [ri]
    vals = [1.0 / (a[interior] * dt)]
    bdry_cols = []  # (row, flat boundary col, coeff)
    for ax in range(grid.ndim):
        h = grid.spacing[ax]
        step = idx.strides[ax] // idx.itemsize
        for shift in (step, -step):
            nb = ii_flat + shift
            nb_int = renum[nb] >= 0
            rows.append(ri[nb_int])
            cols.append(renum[nb[nb_int]])
            vals.append(np.full(int(nb_int.sum()), -1.0 / h**2))
            bdry_cols.append((ri[~nb_int], nb[~nb_int], np.full(int((~nb_int).sum()), 1.0 / h**2)))
        rows.append(ri)
        cols.append(ri)
        vals.append(np.full(n_int, 2.0 / h**2))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_int, n_int),
    ).tocsr()

    full_box = Box(grid.lo, grid.hi)
    grid_faces = full_box.face_nodes(grid)
    if bc_values is not None:
        for s, arr in bc_values.items():
            arr = np.asarray(arr, dtype=float)
            want = (len(grid_faces[s][0]), nt)
            if arr.shape != want:
                raise ValueError(f"bc side {s!r}: expected shape {want}, got {arr.shape}")

    def boundary_frame(k):
        bf = np.zeros(grid.shape)
        if bc_values is not None:
            for s, arr in bc_values.items():
                bf[grid_faces[s]] = arr[:, k]
        return bf

    tb = trace_box if trace_box is not None else full_box
    tb_faces = tb.face_nodes(grid)
    p_vals = {s: np.empty((len(nd[0]), nt)) for s, nd in tb_faces.items()}
    q_vals = {s: np.empty((len(nd[0]), nt)) for s, nd in tb_faces.items()}

    frames = np.empty((nt,) + grid.shape)
    v = f0.values.copy()
    bf = boundary_frame(0)
    v = np.where(interior, v, bf)
    frames[0] = v

    def record(k, vfield):
        for s, nd in tb_faces.items():
            p_vals[s][:, k] = vfield[nd]
            axn = int(s.split("_")[0][1:])
            kind = s.split("_")[1]
            d = _first_derivative(vfield, axn, grid.spacing[axn])
            sign = -1.0 if kind == "lo" else 1.0  # outward normal
            q_vals[s][:, k] = sign * d[nd]

    record(0, v)
    x_guess = v[interior].ravel()
    for k in range(1, nt):
        bf = boundary_frame(k)
        rhs = (v[interior] / (a[interior] * dt)).ravel().copy()
        for rr, bcol, coeff in bdry_cols:
            rhs[rr] += coeff * bf.ravel()[bcol]
        sol = sparse_solve(SparseSystem(A, rhs, tol=tol, symmetric=True), x0=x_guess)
        x_guess = sol
        v = bf.copy()
        v.ravel()[ii_flat] = sol
        frames[k] = v
        record(k, v)

    st_grid = Grid(grid.lo + (0.0,), grid.hi + (T,), grid.shape + (nt,))
    field = ScalarField(st_grid, np.moveaxis(frames, 0, -1))
    p = BoundaryTrace(grid, tuple(sorted(tb_faces)), times, p_vals)
    q = BoundaryTrace(grid, tuple(sorted(tb_faces)), times, q_vals)
    return field, (p, q)
