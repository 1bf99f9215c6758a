"""Initial-condition reconstruction from boundary wave measurements.

Two routes are implemented.  The hyperbolic route (acoustic source
imaging): the Dirichlet trace of a wave field with unknown initial
displacement is complemented by a Neumann trace recovered from an exterior
solve, the data are extended evenly in time (the initial velocity is
zero), and the quasi-reversibility minimizer's t = 0 slice is the source.
The parabolic route for one-sided data: the hyperbolic trace is mapped to
the companion heat problem by the Gaussian-kernel transform, the Neumann
companion is recovered by an exterior heat solve, and a space-time
quasi-reversibility problem on a short, densely sampled cylinder returns
the initial condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, ScalarField, BoundaryTrace, _first_derivative
from .forward import CoefficientModel, heat_forward, wave_solve
from .transforms import reznickaya
from . import qrm

__all__ = [
    "TatProblem",
    "exterior_neumann_recovery",
    "tat_reconstruct",
    "parabolic_route_reconstruct",
]


@dataclass
class TatProblem:
    """Boundary pressure trace of a wave field with unknown initial
    displacement; the coefficient equals 1 outside (and here inside) the
    measurement region, so waves leave the domain after time R."""

    grid: Grid  # spatial grid of the measurement region
    p: BoundaryTrace  # Dirichlet trace on (0, T)
    T: float

    def __post_init__(self):
        R = max(h - l for l, h in zip(self.grid.lo, self.grid.hi)) / 2.0
        if not self.T > R:
            raise ValueError(f"need T > R (T={self.T}, R={R})")
        self.R = R


def exterior_neumann_recovery(
    problem: TatProblem,
    cfl: float = 0.9,
    pad: float | None = None,
    monitor_tol: float = 1e-9,
    h_ext: float | None = None,
) -> dict:
    """Outward-normal derivative of the wave field on the measurement
    boundary, from exterior solves with zero initial data.

    The exterior of each face is modelled as a padded segment driven by
    the Dirichlet trace at the shared face; the far wall is a hard wall,
    and an amplitude monitor rejects runs where a reflection could travel
    back to the measurement boundary before T.  ``h_ext`` should match the
    lattice that produced the trace so numerical dispersion cancels in the
    closed loop; the default infers it from the trace's time step assuming
    the standard step ratio.  Returns q[side] of shape (face_nodes, nt) on
    the trace's time samples.
    """
    grid = problem.grid
    if grid.ndim != 1:
        raise NotImplementedError("exterior recovery is implemented in 1D")
    times = problem.p.samples
    T = times[-1]
    h = h_ext if h_ext is not None else float(times[1] - times[0]) / cfl
    if pad is None:
        pad = 0.5 * T + 10 * h
    n_pad = int(np.ceil(pad / h)) + 1
    q = {}
    for side in problem.p.sides:
        kind = side.split("_")[1]
        x_face = grid.lo[0] if kind == "lo" else grid.hi[0]
        if kind == "lo":
            ext = Grid((x_face - (n_pad - 1) * h,), (x_face,), (n_pad,))
            drive_side, wall_side = "x0_hi", "x0_lo"
        else:
            ext = Grid((x_face,), (x_face + (n_pad - 1) * h,), (n_pad,))
            drive_side, wall_side = "x0_lo", "x0_hi"
        c_ext = CoefficientModel.background(ext, 3.0)
        bc = {drive_side: (times, problem.p.values[side])}
        _, st, frames, _ = wave_solve(
            c_ext, np.zeros(ext.shape), np.zeros(ext.shape), T,
            cfl=cfl, bc_values=bc,
        )
        # reflection monitor: once the wall neighbourhood is touched,
        # anything reflected needs dist(wall, face) more time to contaminate
        # the face (the wall node itself is pinned at zero)
        wall_idx = 1 if wall_side.endswith("lo") else ext.shape[0] - 2
        wall_hist = np.abs(frames[:, wall_idx])
        peak = float(np.max(np.abs(frames)))
        hits = np.where(wall_hist > monitor_tol * max(peak, 1e-300))[0]
        if hits.size:
            t_hit = st[hits[0]]
            if t_hit + (n_pad - 1) * h <= T:
                raise ValueError(
                    f"exterior padding too small: wall touched at t={t_hit:.3g}, "
                    f"reflection reaches the face by {t_hit + (n_pad - 1) * h:.3g} <= T={T}"
                )
        # outward normal derivative at the face, one-sided into the exterior
        deriv = _first_derivative(frames.T, 0, h)  # frames.T: (nx, nt_solver)
        face_row = -1 if kind == "lo" else 0
        sign = -1.0 if kind == "lo" else 1.0
        q_solver = sign * deriv[face_row]
        # resample onto the trace's time samples
        q[side] = np.interp(times, st, q_solver)[None, :]
    return q


def tat_reconstruct(problem: TatProblem, gamma: float, penalty_order: int = 2,
                    tol: float = 1e-12, h_ext: float | None = None,
                    return_problem: bool = False):
    """Initial displacement from the Dirichlet trace alone: recover the
    Neumann companion, extend evenly in time, minimize, slice at t = 0."""
    q = exterior_neumann_recovery(problem, h_ext=h_ext)
    p = {s: problem.p.values[s] for s in problem.p.sides}
    if return_problem:
        return qrm.tat_qrm(problem.grid, problem.p.samples, p, q, gamma,
                           penalty_order=penalty_order, return_problem=True)
    f_rec, sol = qrm.tat_qrm(
        problem.grid, problem.p.samples, p, q, gamma,
        penalty_order=penalty_order, tol=tol,
    )
    return f_rec, sol


# ---------------------------------------------------------------------------
# parabolic route for one-sided data


@dataclass
class ParabolicRouteConfig:
    """Geometry of the one-sided reconstruction cylinder: data live on the
    face x = 0, the source is supported in (0, depth).

    The time horizon is short and densely sampled: the source's fine
    structure diffuses away within roughly its squared radius, so all the
    recoverable information concentrates near t = 0, while the window must
    still exceed roughly depth^2/4 for the far content to reach the face.
    """

    nx: int = 61
    nt: int = 201
    depth: float = 0.6  # spatial extent of the reconstruction cylinder
    t_final: float = 0.08
    exterior_pad: float = 2.0
    heat_dt: float = 2e-4
    penalty_order: int = 2


def parabolic_route_reconstruct(
    wave_times: np.ndarray,
    wave_trace: np.ndarray,
    gamma: float,
    config: ParabolicRouteConfig | None = None,
    tol: float = 1e-12,
):
    """Initial condition from a one-face hyperbolic trace.

    Steps: map the trace to heat time by the Gaussian-kernel transform;
    recover the companion Neumann trace by an exterior heat solve with
    zero initial data; subtract the affine-in-depth carrier r(x, t) =
    trace + x * slope; minimize the heat-operator residual over fields
    vanishing (with slope) on the data face; undo the carrier at t = 0.

    The source must be supported away from the data face, so both traces
    vanish at t = 0 and the cylinder can include the t = 0 layer, whose
    slice is the reconstruction.  Returns (f field on the depth axis,
    QrmSolution, diagnostics dict).
    """
    config = config or ParabolicRouteConfig()
    heat_times = np.linspace(0.0, config.t_final, config.nt)
    # transformed Dirichlet data on the face; the kernel limit at t -> 0+
    # is the trace's own initial value, zero for sources off the face
    phi_bar = np.concatenate(
        [[0.0], [reznickaya(wave_trace, wave_times, t) for t in heat_times[1:]]]
    )

    # exterior heat solve on x < 0 recovers the face slope
    h = config.depth / (config.nx - 1)
    n_ext = int(np.ceil(config.exterior_pad / h)) + 1
    ext = Grid((-(n_ext - 1) * h,), (0.0,), (n_ext,))
    f0 = ScalarField.zeros(ext)
    nt_solver = int(np.ceil(config.t_final / config.heat_dt)) + 1
    solver_times = np.linspace(0.0, config.t_final, nt_solver)
    bc = {"x0_hi": np.interp(solver_times, heat_times, phi_bar)[None, :]}
    field, _ = heat_forward(f0, config.t_final, config.heat_dt, bc_values=bc)
    # slope at the face from the exterior side (the field is C^1 across it)
    vals = field.values  # (nx_ext, nt_solver)
    solver_times = np.linspace(0.0, config.t_final, vals.shape[1])
    dx = _first_derivative(vals, 0, h)[-1]
    psi_bar = np.interp(heat_times, solver_times, dx)
    psi_bar[0] = 0.0

    # carrier affine in depth matching both traces on the face
    st_grid = Grid((0.0, 0.0), (config.depth, config.t_final),
                   (config.nx, heat_times.size))
    X, Tm = st_grid.meshgrid()
    phi_t = np.interp(Tm, heat_times, phi_bar)
    psi_t = np.interp(Tm, heat_times, psi_bar)
    r = phi_t + X * psi_t

    # heat-operator residual source: -(r_t - r_xx); r is affine in x
    r_t = _first_derivative(r, 1, st_grid.spacing[1])
    p_src = -r_t

    data = qrm.CauchyData(
        ("x0_lo",),
        {"x0_lo": np.zeros(heat_times.size)},
        {"x0_lo": np.zeros(heat_times.size)},
    )
    problem = qrm.QrmProblem(
        "parabolic", st_grid, data, gamma, source=p_src,
        penalty_order=config.penalty_order,
    )
    sol = qrm.qrm_solve(problem, tol=tol)
    v_hat = sol.u.values
    f_vals = v_hat[:, 0] + r[:, 0]
    x_grid = Grid((0.0,), (config.depth,), (config.nx,))
    diag = {"phi_bar": phi_bar, "psi_bar": psi_bar, "heat_times": heat_times}
    return ScalarField(x_grid, f_vals), sol, diag
