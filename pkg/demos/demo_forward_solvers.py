"""Tour of the forward solvers.

Each block solves a problem with a known answer and prints the measured
agreement: the screened-Poisson solver against the 1D fundamental solution,
the wave solver's energy conservation and travel times, the heat solver
against separation of variables, and the harmonic solver's maximum
principle.
"""

import numpy as np

from bkinv.grid import Grid, ScalarField
from bkinv.forward import (
    Box, CoefficientModel, MollifiedSource,
    elliptic_solve, harmonic_solve, heat_forward, wave_forward, wave_solve, wave_energy,
)

print("=" * 70)
print("screened-Poisson solver vs the fundamental solution exp(-s|x|)/(2s)")
g = Grid((-4.0,), (4.0,), (8001,))
c = CoefficientModel.background(g, d=5.0)
src = MollifiedSource((0.0,), eps=3 * g.spacing[0])
x = g.axis(0)
for s in (1.0, 5.0, 10.0):
    w = elliptic_solve(c, s, src)
    exact = np.exp(-s * np.abs(x)) / (2 * s)
    sel = (np.abs(x) > 4 * src.eps) & (s * np.abs(x) < 12)
    rel = np.abs(w.values[sel] - exact[sel]) / exact[sel]
    print(f"  s = {s:5.1f}: max relative error {rel.max():.2e}, min w = {w.values.min():.1e} > 0")

print("=" * 70)
print("wave solver: unit-speed travel time and discrete energy drift")
gw = Grid((-6.0,), (6.0,), (1201,))
cw = CoefficientModel.background(gw, d=5.0)
pulse = MollifiedSource((-2.0,), eps=3 * gw.spacing[0])
field, trace = wave_forward(cw, pulse, T=4.0, omega=Box((-1.0,), (1.0,)))
tt = trace.samples
arrival = tt[np.argmax(np.gradient(trace.values["x0_hi"][0], tt))]
print(f"  wavefront from x0=-2 reaches x=+1 at t = {arrival:.3f} (distance 3.0)")
_, st, frames, _ = wave_solve(cw, np.zeros(gw.shape), pulse.field(gw).values, 4.0)
E = wave_energy(frames, st, cw)
k0 = np.searchsorted(st, 0.5)
print(f"  energy drift after the source window: {abs(E[-1]-E[k0])/E[k0]:.2e}")

print("=" * 70)
print("heat solver vs separation of variables")
gh = Grid((0.0,), (1.0,), (201,))
f0 = ScalarField.from_function(gh, lambda z: np.sin(np.pi * z))
fh, (p, q) = heat_forward(f0, T=0.1, dt=1e-4)
exact = np.exp(-np.pi**2 * 0.1) * np.sin(np.pi * gh.axis(0))
print(f"  relative error at t=0.1: {np.abs(fh.values[:, -1] - exact).max()/exact.max():.2e}")
print(f"  Neumann trace at the left face: {q.values['x0_lo'][0, -1]:+.4f} "
      f"(analytic {-np.pi*np.exp(-np.pi**2*0.1):+.4f})")

print("=" * 70)
print("harmonic solver: discrete maximum principle on random boundary data")
g2 = Grid((0.0, 0.0), (1.0, 1.0), (41, 41))
rng = np.random.default_rng(0)
violations = 0
for _ in range(50):
    bv = np.zeros(g2.shape)
    bv[0, :], bv[-1, :] = rng.uniform(-1, 1, 41), rng.uniform(-1, 1, 41)
    bv[:, 0], bv[:, -1] = rng.uniform(-1, 1, 41), rng.uniform(-1, 1, 41)
    ph = harmonic_solve(g2, bv)
    ring = np.concatenate([bv[0, :], bv[-1, :], bv[:, 0], bv[:, -1]])
    inner = ph.values[1:-1, 1:-1]
    if inner.max() > ring.max() + 1e-10 or inner.min() < ring.min() - 1e-10:
        violations += 1
print(f"  max-principle violations over 50 random data sets: {violations}")
