"""Transforms between time domain, pseudo-frequency and parabolic time.

The pseudo-frequency transform is a truncated Laplace integral; its kernel
decay bounds the truncation error and a warning carries the estimated tail
when the bound is violated.  The Gaussian-kernel transforms map solutions
of wave Cauchy problems to solutions of the companion heat problems and are
used only in the forward direction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import Grid, ScalarField, trapezoid

__all__ = [
    "PseudoFreqPartition",
    "PseudoFreqField",
    "TruncationWarning",
    "laplace_transform",
    "reznickaya",
    "reznickaya_velocity",
    "compute_v",
    "compute_q",
    "boundary_psi",
]


class TruncationWarning(UserWarning):
    """Raised when a truncated infinite integral may carry a visible tail."""


@dataclass(frozen=True)
class PseudoFreqPartition:
    """Partition of the pseudo-frequency interval [s_min, s_max] into N
    subintervals of width h, numbered from the top: s_n = s_max - n h."""

    s_min: float
    s_max: float
    N: int

    def __post_init__(self):
        if not self.s_min > 0:
            raise ValueError("s_min must be positive")
        if not self.s_max > self.s_min:
            raise ValueError("s_max must exceed s_min")
        if self.N < 1:
            raise ValueError("need at least one subinterval")

    @property
    def h(self) -> float:
        return (self.s_max - self.s_min) / self.N

    def s(self, n: int) -> float:
        """n-th partition node, counted downward from s_max (s(0) = s_max)."""
        if not 0 <= n <= self.N:
            raise ValueError(f"index {n} outside 0..{self.N}")
        if n == self.N:
            return self.s_min
        return self.s_max - n * self.h

    def nodes(self) -> np.ndarray:
        return np.array([self.s(n) for n in range(self.N + 1)])

    def subinterval(self, n: int) -> tuple:
        """(s_n, s_{n-1}) for layer n in 1..N."""
        if not 1 <= n <= self.N:
            raise ValueError(f"layer index {n} outside 1..{self.N}")
        return self.s(n), self.s(n - 1)


@dataclass
class PseudoFreqField:
    """One scalar field per sample of an s-grid, all sharing one grid."""

    s_values: np.ndarray
    fields: list

    def __post_init__(self):
        self.s_values = np.asarray(self.s_values, dtype=float)
        if self.s_values.size != len(self.fields):
            raise ValueError("one field per s sample required")
        if len(self.fields) == 0:
            raise ValueError("empty pseudo-frequency field")
        g = self.fields[0].grid
        for f in self.fields:
            if f.grid is not g and f.grid != g:
                raise ValueError("all fields must share one grid")

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def stack(self) -> np.ndarray:
        """(ns, *grid.shape) array of the field values."""
        return np.stack([f.values for f in self.fields])


def laplace_transform(
    values: np.ndarray,
    times: np.ndarray,
    s: float,
    tail_tol: float = 1e-12,
) -> np.ndarray:
    """Trapezoid quadrature of ``integral_0^T u(t) exp(-s t) dt``.

    ``values`` has the time axis last.  When ``exp(-s T)`` exceeds
    ``tail_tol`` a `TruncationWarning` is emitted carrying the estimated
    tail bound ``max|u(T)| exp(-s T)/s`` (valid for bounded signals).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != times.size:
        raise ValueError("time axis length mismatch")
    t_max = times[-1]
    kernel_end = np.exp(-s * t_max)
    if kernel_end > tail_tol:
        tail = float(np.max(np.abs(values[..., -1]))) * kernel_end / s
        warnings.warn(
            f"Laplace truncation at T={t_max} with s={s}: kernel {kernel_end:.3e} "
            f"> {tail_tol:.1e}, estimated tail bound {tail:.3e}",
            TruncationWarning,
        )
    kernel = np.exp(-s * times)
    return trapezoid(values * kernel, times, axis=-1)


def _check_kernel_resolved(taus: np.ndarray, t: float):
    if t <= 0:
        raise ValueError("transform time t must be positive")
    dtau = float(np.max(np.diff(taus)))
    if dtau > np.sqrt(t):
        raise ValueError(
            f"kernel of width ~2 sqrt(t) = {2*np.sqrt(t):.3g} unresolved by "
            f"sampling step {dtau:.3g}"
        )


def reznickaya(g: np.ndarray, taus: np.ndarray, t: float) -> np.ndarray:
    """Gaussian-kernel transform ``(pi t)^(-1/2) integral_0^inf
    exp(-tau^2/(4t)) g(tau) dtau`` by trapezoid quadrature.

    Maps a wave trace with displacement initial data to the matching heat
    trace; the kernel integrates to one, so constants are preserved.  The
    time axis of ``g`` is last.
    """
    taus = np.asarray(taus, dtype=float)
    _check_kernel_resolved(taus, t)
    kernel = np.exp(-(taus**2) / (4.0 * t)) / np.sqrt(np.pi * t)
    return trapezoid(np.asarray(g, dtype=float) * kernel, taus, axis=-1)


def reznickaya_velocity(g: np.ndarray, taus: np.ndarray, t: float) -> np.ndarray:
    """Variant ``(2 t sqrt(pi t))^(-1) integral_0^inf exp(-tau^2/(4t)) tau
    g(tau) dtau`` mapping wave traces with velocity initial data (zero
    displacement) to the matching heat trace."""
    taus = np.asarray(taus, dtype=float)
    _check_kernel_resolved(taus, t)
    kernel = taus * np.exp(-(taus**2) / (4.0 * t)) / (2.0 * t * np.sqrt(np.pi * t))
    return trapezoid(np.asarray(g, dtype=float) * kernel, taus, axis=-1)


def compute_v(w: ScalarField, s: float) -> ScalarField:
    """Logarithmic rescaling ``v = ln(w)/s^2`` of a pseudo-frequency field."""
    if w.values.min() <= 0.0:
        raise ValueError(
            f"field must be strictly positive for the log rescaling "
            f"(min {w.values.min():.3e})"
        )
    return ScalarField(w.grid, np.log(w.values) / s**2)


def compute_q(v_minus: ScalarField, v_plus: ScalarField, ds: float) -> ScalarField:
    """Central pseudo-frequency derivative from samples at s - ds and s + ds."""
    if v_minus.grid != v_plus.grid:
        raise ValueError("fields must share one grid")
    if not ds > 0:
        raise ValueError("ds must be positive")
    return ScalarField(v_minus.grid, (v_plus.values - v_minus.values) / (2.0 * ds))


def boundary_psi(phi: np.ndarray, s_values: np.ndarray) -> np.ndarray:
    """Boundary data for the pseudo-frequency derivative field.

    Given transformed boundary values ``phi(x, s) > 0`` sampled on an s-grid
    (s axis last), returns ``s^(-2) d_s ln(phi) - 2 s^(-3) ln(phi)`` with
    the s-derivative by central differences (one-sided at the ends).
    """
    phi = np.asarray(phi, dtype=float)
    s_values = np.asarray(s_values, dtype=float)
    if phi.shape[-1] != s_values.size:
        raise ValueError("s axis length mismatch")
    if s_values.size < 3:
        raise ValueError("need at least 3 s samples for the derivative")
    if phi.min() <= 0.0:
        raise ValueError(
            f"transformed boundary values must be positive (min {phi.min():.3e})"
        )
    ds = float(s_values[1] - s_values[0])
    if np.max(np.abs(np.diff(s_values) - ds)) > 1e-9 * ds:
        raise ValueError("s grid must be uniform")
    lnphi = np.log(phi)
    dln = np.empty_like(lnphi)
    dln[..., 1:-1] = (lnphi[..., 2:] - lnphi[..., :-2]) / (2.0 * ds)
    dln[..., 0] = (-3.0 * lnphi[..., 0] + 4.0 * lnphi[..., 1] - lnphi[..., 2]) / (2.0 * ds)
    dln[..., -1] = (3.0 * lnphi[..., -1] - 4.0 * lnphi[..., -2] + lnphi[..., -3]) / (2.0 * ds)
    return dln / s_values**2 - 2.0 * lnphi / s_values**3
