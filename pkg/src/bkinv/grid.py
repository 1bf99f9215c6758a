"""Uniform rectilinear grids, nodal scalar fields, finite differences, quadrature.

Grids are axis-aligned boxes with equispaced nodes.  One to three axes are
supported; solvers use one or two spatial axes, optionally extended by a
time or pseudo-frequency axis.  All derivative stencils are second order,
including the one-sided variants applied on the boundary, so that Neumann
traces extracted from solver output do not carry first-order bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# numpy renamed trapz to trapezoid in 2.0
trapezoid = getattr(np, "trapezoid", np.trapz)

__all__ = [
    "Grid",
    "ScalarField",
    "BoundaryTrace",
    "laplacian",
    "gradient",
    "integrate",
    "write_field",
    "read_field",
]


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid over an axis-aligned box.

    Parameters
    ----------
    lo, hi : tuple of float
        Lower and upper corner of the box, one entry per axis.
    shape : tuple of int
        Node count per axis, each >= 3 so second-difference stencils fit.
    """

    lo: tuple
    hi: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)
        if not (len(lo) == len(hi) == len(shape)):
            raise ValueError("lo, hi and shape must have the same length")
        if len(shape) not in (1, 2, 3):
            raise ValueError("only 1 to 3 axes are supported")
        for a, (l, h, n) in enumerate(zip(lo, hi, shape)):
            if n < 3:
                raise ValueError(f"axis {a}: need at least 3 nodes, got {n}")
            if not h > l:
                raise ValueError(f"axis {a}: empty extent [{l}, {h}]")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple:
        return tuple(
            (h - l) / (n - 1) for l, h, n in zip(self.lo, self.hi, self.shape)
        )

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, a: int) -> np.ndarray:
        """Node coordinates along axis ``a``."""
        return np.linspace(self.lo[a], self.hi[a], self.shape[a])

    def axes(self) -> list:
        return [self.axis(a) for a in range(self.ndim)]

    def meshgrid(self) -> list:
        """Coordinate arrays of shape ``self.shape`` (ij indexing)."""
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def nearest_index(self, point) -> tuple:
        """Index of the grid node closest to ``point``."""
        idx = []
        for a, p in enumerate(np.atleast_1d(point)):
            i = int(round((p - self.lo[a]) / self.spacing[a]))
            idx.append(min(max(i, 0), self.shape[a] - 1))
        return tuple(idx)


@dataclass
class ScalarField:
    """Real values sampled at every node of a grid.

    The value array is frozen after construction; operations return new
    fields, so instances can be shared across threads.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values = values.copy()
        values.flags.writeable = False
        self.values = values

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, fn(*grid.meshgrid()))

    @classmethod
    def full(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls.full(grid, 0.0)


#: side identifiers per axis, e.g. ("x0_lo", "x0_hi", "x1_lo", "x1_hi")
def side_names(ndim: int) -> tuple:
    names = []
    for a in range(ndim):
        names.extend([f"x{a}_lo", f"x{a}_hi"])
    return tuple(names)


@dataclass
class BoundaryTrace:
    """Values on selected box faces, one column per time/frequency sample.

    ``values[side]`` has shape (n_boundary_nodes_on_side, n_samples); a
    single-point side in 1D still carries a leading axis of length 1.
    """

    grid: Grid
    sides: tuple
    samples: np.ndarray
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        valid = side_names(self.grid.ndim)
        for s in self.sides:
            if s not in valid:
                raise ValueError(f"unknown side {s!r}; valid sides: {valid}")
            v = np.asarray(self.values[s], dtype=float)
            if v.ndim != 2 or v.shape[1] != self.samples.size:
                raise ValueError(
                    f"side {s!r}: expected (nodes, {self.samples.size}) array, got {v.shape}"
                )
            if not np.all(np.isfinite(v)):
                raise ValueError(f"side {s!r}: non-finite trace values")
            self.values[s] = v

    def stack(self) -> np.ndarray:
        """All sides concatenated along the node axis, in ``self.sides`` order."""
        return np.concatenate([self.values[s] for s in self.sides], axis=0)


def _second_derivative(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second derivative along one axis: central interior, one-sided O(h^2) ends."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def _first_derivative(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """First derivative along one axis: central interior, one-sided O(h^2) ends."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _require_min_nodes(grid: Grid, n: int = 4):
    # the one-sided O(h^2) second-difference stencil spans 4 nodes
    for a, cnt in enumerate(grid.shape):
        if cnt < n:
            raise ValueError(f"axis {a}: need >= {n} nodes for boundary stencils")


def laplacian(f: ScalarField, axes=None) -> ScalarField:
    """Sum of second derivatives along the given axes (all axes by default)."""
    _require_min_nodes(f.grid)
    axes = range(f.grid.ndim) if axes is None else axes
    out = np.zeros(f.grid.shape)
    for a in axes:
        out += _second_derivative(f.values, a, f.grid.spacing[a])
    return ScalarField(f.grid, out)


def gradient(f: ScalarField, axes=None) -> list:
    """One first-derivative field per axis."""
    _require_min_nodes(f.grid)
    axes = range(f.grid.ndim) if axes is None else axes
    return [
        ScalarField(f.grid, _first_derivative(f.values, a, f.grid.spacing[a]))
        for a in axes
    ]


def derivative(f: ScalarField, axis: int) -> ScalarField:
    """First derivative along a single axis."""
    _require_min_nodes(f.grid)
    return ScalarField(
        f.grid, _first_derivative(f.values, axis, f.grid.spacing[axis])
    )


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Composite-trapezoid quadrature weights, shape ``grid.shape``."""
    w = np.ones(())
    for a in range(grid.ndim):
        wa = np.full(grid.shape[a], grid.spacing[a])
        wa[0] *= 0.5
        wa[-1] *= 0.5
        w = np.multiply.outer(w, wa)
    return w


def integrate(f: ScalarField, mask: np.ndarray | None = None) -> float:
    """Composite trapezoid of the field over the whole grid.

    ``mask`` (boolean, grid-shaped) zeroes out nodes outside a region of
    interest; the trapezoid weights themselves are unchanged.
    """
    w = trapezoid_weights(f.grid)
    v = f.values
    if mask is not None:
        v = np.where(mask, v, 0.0)
    return float(np.sum(w * v))


def l2_norm(f: ScalarField, mask: np.ndarray | None = None) -> float:
    return float(
        np.sqrt(integrate(ScalarField(f.grid, f.values**2), mask=mask))
    )


def write_field(f: ScalarField, basepath: str):
    """Write a field as <basepath>.csv (coordinates + value, 17 significant
    digits) plus a <basepath>.json grid header."""
    coords = [m.ravel() for m in f.grid.meshgrid()]
    cols = coords + [f.values.ravel()]
    header = ",".join([f"x{a}" for a in range(f.grid.ndim)] + ["value"])
    data = np.column_stack(cols)
    np.savetxt(basepath + ".csv", data, fmt="%.17g", delimiter=",",
               header=header, comments="")
    meta = {
        "ndim": f.grid.ndim,
        "lo": list(f.grid.lo),
        "hi": list(f.grid.hi),
        "shape": list(f.grid.shape),
        "spacing": list(f.grid.spacing),
    }
    with open(basepath + ".json", "w") as fp:
        json.dump(meta, fp, indent=2, sort_keys=True)
        fp.write("\n")


def read_field(basepath: str) -> ScalarField:
    with open(basepath + ".json") as fp:
        meta = json.load(fp)
    grid = Grid(tuple(meta["lo"]), tuple(meta["hi"]), tuple(meta["shape"]))
    data = np.loadtxt(basepath + ".csv", delimiter=",", skiprows=1)
    values = np.atleast_2d(data)[:, -1].reshape(grid.shape)
    return ScalarField(grid, values)
