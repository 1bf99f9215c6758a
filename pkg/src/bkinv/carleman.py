"""Carleman weight families and numerical verification of weighted
coercivity inequalities.

Each verifier evaluates both sides of an integrated inequality of the form

    integral (L u)^2 W  >=  C * (weighted norms of u and its derivatives)

for compactly supported test functions, where W is the squared exponential
weight.  The constants are existential, so the check calibrates C on a
training sample of random bumps and validates on held-out bumps; the
empirical threshold in the large parameter is reported alongside.

Weights are evaluated relative to their maximum over the support of the
test function, which removes overflow without changing ratios; the log of
the removed factor is reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from .grid import Grid, ScalarField, trapezoid, trapezoid_weights, _first_derivative, _second_derivative

__all__ = [
    "ParabolicCWF",
    "HyperbolicCWF",
    "PseudoFreqCWF",
    "EstimateReport",
    "VolterraReport",
    "poly_bump",
    "random_bump_in_mask",
    "random_piecewise_signal",
    "verify_parabolic_estimate",
    "verify_hyperbolic_estimate",
    "calibrate_constant",
    "volterra_weight_check",
]


# ---------------------------------------------------------------------------
# weight families (time is always the last grid axis)


@dataclass(frozen=True)
class ParabolicCWF:
    """Weight exp(lam * psi^(-nu)) with psi = x1 + |y|^2/(2 Y^2) + t^2/(2 T^2) + alpha,
    admissible on {psi < eta, x1 > 0}."""

    lam: float
    nu: float
    alpha: float
    eta: float
    Y: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if not self.lam > 1:
            raise ValueError("lam must exceed 1")
        if not self.nu > 2:
            raise ValueError("nu must exceed 2")
        if not (0 < self.alpha < self.eta < 1):
            raise ValueError("need 0 < alpha < eta < 1")
        if self.Y <= 0 or self.T <= 0:
            raise ValueError("Y and T must be positive")

    def psi(self, grid: Grid) -> np.ndarray:
        mesh = grid.meshgrid()
        p = mesh[0] + mesh[-1] ** 2 / (2.0 * self.T**2) + self.alpha
        for y in mesh[1:-1]:
            p = p + y**2 / (2.0 * self.Y**2)
        return p

    def domain_mask(self, grid: Grid) -> np.ndarray:
        mesh = grid.meshgrid()
        return (self.psi(grid) < self.eta) & (mesh[0] > 0.0)

    def log_weight(self, grid: Grid) -> np.ndarray:
        """log of the weight, i.e. lam * psi^(-nu)."""
        return self.lam * self.psi(grid) ** (-self.nu)

    def with_lam(self, lam: float) -> "ParabolicCWF":
        return ParabolicCWF(lam, self.nu, self.alpha, self.eta, self.Y, self.T)


@dataclass(frozen=True)
class HyperbolicCWF:
    """Weight exp(lam * xi) with xi = |x - x0|^2 - eta t^2, admissible on
    {xi > gamma}."""

    lam: float
    eta: float
    x0: tuple
    gamma: float

    def __post_init__(self):
        if not self.lam > 1:
            raise ValueError("lam must exceed 1")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))

    def xi(self, grid: Grid) -> np.ndarray:
        mesh = grid.meshgrid()
        r2 = np.zeros(grid.shape)
        for a, x in enumerate(mesh[:-1]):
            r2 += (x - self.x0[a]) ** 2
        return r2 - self.eta * mesh[-1] ** 2

    def domain_mask(self, grid: Grid) -> np.ndarray:
        mask = self.xi(grid) > self.gamma
        if not mask.any():
            raise ValueError("admissible region {xi > gamma} is empty on this grid")
        return mask

    def log_weight(self, grid: Grid) -> np.ndarray:
        return self.lam * self.xi(grid)

    def with_lam(self, lam: float) -> "HyperbolicCWF":
        return HyperbolicCWF(lam, self.eta, self.x0, self.gamma)


@dataclass(frozen=True)
class PseudoFreqCWF:
    """Weight exp(lam (s - s_hi)) on the pseudo-frequency subinterval
    (s_lo, s_hi); decreases from 1 down to exp(-lam h)."""

    lam: float
    s_lo: float
    s_hi: float

    def __post_init__(self):
        if not self.lam >= 1:
            raise ValueError("lam must be >= 1")
        if not self.s_hi > self.s_lo:
            raise ValueError("empty subinterval")

    def weight(self, s) -> np.ndarray:
        return np.exp(self.lam * (np.asarray(s, dtype=float) - self.s_hi))


# ---------------------------------------------------------------------------
# test functions


def poly_bump(grid: Grid, center, radii, amplitude: float = 1.0) -> ScalarField:
    """C^2 compactly supported tensor bump: prod_a max(0, 1-((z-c)/r)^2)^3."""
    center = np.atleast_1d(center)
    radii = np.atleast_1d(radii)
    vals = np.full(grid.shape, float(amplitude))
    for a, x in enumerate(grid.meshgrid()):
        z = (x - center[a]) / radii[a]
        vals = vals * np.clip(1.0 - z**2, 0.0, None) ** 3
    return ScalarField(grid, vals)


def _eroded(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    return ndimage.binary_erosion(mask, iterations=iterations, border_value=0)


def random_bump_in_mask(
    grid: Grid,
    mask: np.ndarray,
    rng: np.random.Generator,
    radius_range=(0.08, 0.2),
    amp_range=(0.5, 2.0),
    max_tries: int = 500,
) -> ScalarField:
    """A random tensor bump whose support lies strictly inside ``mask``."""
    inner = _eroded(mask, iterations=2)
    candidates = np.argwhere(inner)
    if candidates.size == 0:
        raise ValueError("mask too thin to host a bump")
    mesh = grid.meshgrid()
    for _ in range(max_tries):
        node = candidates[rng.integers(len(candidates))]
        center = [mesh[a][tuple(node)] for a in range(grid.ndim)]
        radii = rng.uniform(*radius_range, size=grid.ndim)
        amp = rng.uniform(*amp_range) * rng.choice([-1.0, 1.0])
        bump = poly_bump(grid, center, radii, amp)
        if np.all(inner[bump.values != 0.0]):
            return bump
    raise RuntimeError("could not place a bump inside the mask; shrink radius_range")


def random_piecewise_signal(
    times: np.ndarray, rng: np.random.Generator, n_knots: int = 12, scale: float = 1.0
) -> np.ndarray:
    """Random piecewise-linear signal interpolating seeded knot values."""
    times = np.asarray(times, dtype=float)
    knots_t = np.linspace(times[0], times[-1], n_knots)
    knots_v = rng.uniform(-scale, scale, size=n_knots)
    return np.interp(times, knots_t, knots_v)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EstimateReport:
    lam: float
    lhs: float
    rhs: float
    ratio: float
    holds: bool
    constant: float
    scale_log: float

    def to_json(self) -> str:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return json.dumps(d, sort_keys=True)


@dataclass
class VolterraReport:
    lam: float
    b: float
    lhs: float
    rhs: float
    ratio: float
    holds: bool

    def to_json(self) -> str:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------------------
# shared machinery


def _check_compact_support(u: ScalarField, mask: np.ndarray):
    inner = _eroded(mask, iterations=1)
    if np.any((u.values != 0.0) & ~inner):
        raise ValueError(
            "test function is not compactly supported inside the admissible "
            "region; boundary terms would invalidate the check"
        )


def _masked_weighted_integrals(grid, mask, log_w, integrands):
    """Integrals of each integrand times exp(2 log_w - scale) over the mask.

    The scale is the max of 2 log_w over the union support of the
    integrands, so the returned values are finite; returns (values, scale).
    """
    support = np.zeros(grid.shape, dtype=bool)
    for f in integrands:
        support |= f != 0.0
    support &= mask
    if not support.any():
        return [0.0] * len(integrands), 0.0
    scale = float(np.max(2.0 * log_w[support]))
    w2 = np.where(mask, np.exp(np.minimum(2.0 * log_w - scale, 0.0)), 0.0)
    qw = trapezoid_weights(grid)
    return [float(np.sum(qw * w2 * f)) for f in integrands], scale


def _spatial_gradient_sq(u: ScalarField) -> np.ndarray:
    g2 = np.zeros(u.grid.shape)
    for a in range(u.grid.ndim - 1):
        g2 += _first_derivative(u.values, a, u.grid.spacing[a]) ** 2
    return g2


def _spatial_laplacian(u: ScalarField) -> np.ndarray:
    lap = np.zeros(u.grid.shape)
    for a in range(u.grid.ndim - 1):
        lap += _second_derivative(u.values, a, u.grid.spacing[a])
    return lap


# ---------------------------------------------------------------------------
# verifiers


def verify_parabolic_estimate(
    a, u: ScalarField, cwf: ParabolicCWF, C: float = 1.0
) -> EstimateReport:
    """Check the weighted coercivity of the heat operator u_t - a laplace(u)
    on {psi < eta, x1 > 0} for a compactly supported test function.

    lhs = integral (Lu)^2 W,
    rhs = C * [lam nu integral |grad_x u|^2 W
               + lam^3 nu^4 integral psi^(-2 nu - 2) u^2 W].
    """
    grid = u.grid
    if grid.ndim < 2:
        raise ValueError("need a space-time grid (time axis last)")
    av = a.values if isinstance(a, ScalarField) else np.full(grid.shape[:-1], float(a))
    if av.min() <= 0:
        raise ValueError("coefficient must be bounded below by a positive constant")
    mask = cwf.domain_mask(grid)
    _check_compact_support(u, mask)

    a_st = av[..., None]
    lu = _first_derivative(u.values, grid.ndim - 1, grid.spacing[-1]) - a_st * _spatial_laplacian(u)
    psi = cwf.psi(grid)
    log_w = cwf.log_weight(grid)
    lam, nu = cwf.lam, cwf.nu
    (lhs, grad_term, zero_term), scale = _masked_weighted_integrals(
        grid, mask, log_w,
        [lu**2, _spatial_gradient_sq(u), psi ** (-2.0 * nu - 2.0) * u.values**2],
    )
    rhs0 = lam * nu * grad_term + lam**3 * nu**4 * zero_term
    rhs = C * rhs0
    ratio = lhs / rhs0 if rhs0 > 0 else np.inf
    return EstimateReport(lam, lhs, rhs, ratio, bool(lhs >= rhs * (1 - 1e-12)), C, scale)


def check_radial_monotonicity(c_speed: ScalarField, x0, d: float):
    """Nodal admissibility of a wave speed: 1 <= c^(-2) <= d and
    (x - x0) . grad(c^(-2)) >= 0; raises with offending-node details."""
    grid = c_speed.grid
    x0 = np.atleast_1d(x0)
    inv2 = c_speed.values ** (-2.0)
    if inv2.min() < 1.0 - 1e-9 or inv2.max() > d + 1e-9:
        raise ValueError(
            f"c^-2 out of [1, {d}]: range [{inv2.min():.6g}, {inv2.max():.6g}]"
        )
    mesh = grid.meshgrid()
    dot = np.zeros(grid.shape)
    for a in range(grid.ndim):
        dot += (mesh[a] - x0[a]) * _first_derivative(inv2, a, grid.spacing[a])
    bad = dot < -1e-12
    if bad.any():
        worst = float(dot.min())
        idx = np.unravel_index(int(np.argmin(dot)), grid.shape)
        raise ValueError(
            f"radial monotonicity of c^-2 about x0 violated at {int(bad.sum())} "
            f"nodes (worst {worst:.3e} at index {idx})"
        )


def verify_hyperbolic_estimate(
    c_speed, u: ScalarField, cwf: HyperbolicCWF, d: float = 10.0, C: float = 1.0
) -> EstimateReport:
    """Check the weighted coercivity of the wave operator u_tt - c^2 laplace(u)
    on {xi > gamma} for a compactly supported test function.

    lhs = integral (Lu)^2 W,
    rhs = C lam integral (|grad_x u|^2 + u_t^2) W + lam^3 integral u^2 W.

    ``c_speed`` is the wave speed; admissibility (bounds on c^(-2) and its
    radial monotonicity about x0) is checked nodally.
    """
    grid = u.grid
    if grid.ndim < 2:
        raise ValueError("need a space-time grid (time axis last)")
    if isinstance(c_speed, ScalarField):
        cs = c_speed
    else:
        sp_grid = Grid(grid.lo[:-1], grid.hi[:-1], grid.shape[:-1]) if grid.ndim > 1 else grid
        cs = ScalarField(sp_grid, np.full(grid.shape[:-1], float(c_speed)))
    check_radial_monotonicity(cs, cwf.x0, d)
    mask = cwf.domain_mask(grid)
    _check_compact_support(u, mask)

    t_ax = grid.ndim - 1
    utt = _second_derivative(u.values, t_ax, grid.spacing[-1])
    lu = utt - (cs.values**2)[..., None] * _spatial_laplacian(u)
    ut2 = _first_derivative(u.values, t_ax, grid.spacing[-1]) ** 2
    log_w = cwf.log_weight(grid)
    lam = cwf.lam
    (lhs, grad_term, zero_term), scale = _masked_weighted_integrals(
        grid, mask, log_w, [lu**2, _spatial_gradient_sq(u) + ut2, u.values**2]
    )
    rhs0 = lam * grad_term + lam**3 * zero_term
    rhs = C * rhs0
    ratio = lhs / rhs0 if rhs0 > 0 else np.inf
    return EstimateReport(lam, lhs, rhs, ratio, bool(lhs >= rhs * (1 - 1e-12)), C, scale)


def calibrate_constant(ratio_fn, lam_values):
    """Empirical (lam*, C): lam* is the first sweep value from which the
    worst-case ratio over the training sample stops decreasing, C is that
    worst-case ratio at lam*.

    ``ratio_fn(lam)`` returns the ratios of all training bumps at ``lam``.
    """
    lam_values = list(lam_values)
    if len(lam_values) < 2:
        raise ValueError("need at least two sweep values")
    worst = [float(np.min(ratio_fn(lam))) for lam in lam_values]
    lam_star = lam_values[-1]
    for j in range(len(lam_values) - 1):
        if worst[j + 1] >= worst[j]:
            lam_star = lam_values[j]
            break
    C = worst[lam_values.index(lam_star)]
    if C <= 0:
        raise RuntimeError("calibration failed: nonpositive worst-case ratio")
    return lam_star, C, dict(zip(lam_values, worst))


# ---------------------------------------------------------------------------
# weighted Volterra inequality


def volterra_weight_check(
    g: np.ndarray, times: np.ndarray, phi, lam: float, b: float
) -> VolterraReport:
    """Check that the weighted square of the running integral of g is bounded
    by 1/(4 lam b) times the weighted square of g itself.

    The weight is exp(2 lam phi(t^2)) on a time grid symmetric about zero;
    ``phi`` must be C^1 with phi' <= -b < 0 (verified by finite differences).
    The reported ``ratio`` is lhs divided by the weighted integral of g^2,
    which decays like 1/(4 lam b).
    """
    times = np.asarray(times, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape != times.shape:
        raise ValueError("g and times must have matching shapes")
    if not lam > 0 or not b > 0:
        raise ValueError("lam and b must be positive")
    a = max(abs(times[0]), abs(times[-1]))
    i0 = int(np.argmin(np.abs(times)))
    if abs(times[i0]) > 1e-9 * max(a, 1.0):
        raise ValueError("time grid must contain t = 0")

    zmax = max(a, a * a)
    zs = np.linspace(0.0, zmax, 2001)
    dz = zs[1] - zs[0]
    pv = np.asarray([phi(z) for z in zs], dtype=float)
    dphi = np.gradient(pv, dz)
    if np.max(dphi) > -b + 1e-9:
        zbad = float(zs[int(np.argmax(dphi))])
        raise ValueError(
            f"weight slope condition violated: phi'({zbad:.4g}) = "
            f"{np.max(dphi):.4g} > -b = {-b}"
        )

    # running integral from 0, both directions
    G = np.empty_like(g)
    G[i0] = 0.0
    for i in range(i0 + 1, len(times)):
        G[i] = G[i - 1] + 0.5 * (g[i] + g[i - 1]) * (times[i] - times[i - 1])
    for i in range(i0 - 1, -1, -1):
        G[i] = G[i + 1] - 0.5 * (g[i] + g[i + 1]) * (times[i + 1] - times[i])

    w = np.exp(2.0 * lam * np.asarray([phi(t * t) for t in times]))
    lhs = float(trapezoid(G**2 * w, times))
    S = float(trapezoid(g**2 * w, times))
    rhs = S / (4.0 * lam * b)
    ratio = lhs / S if S > 0 else 0.0
    return VolterraReport(lam, b, lhs, rhs, ratio, bool(lhs <= rhs * (1 + 1e-12)))
