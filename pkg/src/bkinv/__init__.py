"""Solvers for ill-posed PDE inverse problems built on weighted coercivity
estimates: quasi-reversibility for over-determined Cauchy problems,
layer stripping in pseudo-frequency for wave-speed coefficients, and
initial-condition recovery from boundary wave measurements."""

__version__ = "0.1.0"
