"""Regular grids and dense finite-difference stencils.

Fields are plain 1-D numpy arrays holding the unknown nodes of a grid in
row-major order (axis 0 varies slowest).  On periodic grids node ``i`` of an
axis sits at ``i*h`` with ``h = length/size``.  On Dirichlet grids ``sizes``
counts boundary nodes too, so ``h = length/(size-1)`` and only the
``size-2`` interior nodes are unknowns; boundary values are zero unless a
problem supplies them explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import ShapeMismatch, ValidationError

TOPOLOGIES = ("periodic", "dirichlet")


@dataclass(frozen=True)
class Grid:
    sizes: tuple
    topology: str = "periodic"
    length: float = 1.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in np.atleast_1d(self.sizes))
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) not in (1, 2):
            raise ValidationError(f"grids are 1-D or 2-D, got {len(sizes)} axes")
        if min(sizes) < 3:
            raise ValidationError(f"every axis needs at least 3 points, got {sizes}")
        if self.topology not in TOPOLOGIES:
            raise ValidationError(f"unknown topology {self.topology!r}")
        if not self.length > 0:
            raise ValidationError("domain length must be positive")

    @property
    def dims(self) -> int:
        return len(self.sizes)

    @property
    def spacing(self) -> tuple:
        if self.topology == "periodic":
            return tuple(self.length / s for s in self.sizes)
        return tuple(self.length / (s - 1) for s in self.sizes)

    @property
    def h(self) -> float:
        """Spacing of the first axis (all axes share it on square grids)."""
        return self.spacing[0]

    @property
    def shape(self) -> tuple:
        """Shape of the unknown-node array."""
        if self.topology == "periodic":
            return self.sizes
        return tuple(s - 2 for s in self.sizes)

    @property
    def n(self) -> int:
        return int(np.prod(self.shape))

    def axis_coords(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        if self.topology == "periodic":
            return np.arange(self.sizes[axis]) * h
        return np.arange(1, self.sizes[axis] - 1) * h

    def nodes(self) -> np.ndarray:
        """Coordinates of the unknown nodes, shape ``(n, dims)``."""
        axes = [self.axis_coords(a) for a in range(self.dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def check(self, values, name: str = "field") -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1 or arr.size != self.n:
            raise ShapeMismatch(f"{name} has shape {arr.shape}, grid expects ({self.n},)")
        return arr

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "topology": self.topology, "length": self.length}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["sizes"]), d.get("topology", "periodic"), float(d.get("length", 1.0)))


def _second_difference_1d(m: int, h: float, periodic: bool) -> np.ndarray:
    T = -2.0 * np.eye(m) + np.eye(m, k=1) + np.eye(m, k=-1)
    if periodic:
        T[0, -1] += 1.0
        T[-1, 0] += 1.0
    return T / h**2


def _first_difference_1d(m: int, h: float, periodic: bool) -> np.ndarray:
    D = np.eye(m, k=1) - np.eye(m, k=-1)
    if periodic:
        D[0, -1] -= 1.0
        D[-1, 0] += 1.0
    return D / (2.0 * h)


def _lift(grid: Grid, axis: int, T: np.ndarray) -> np.ndarray:
    mats = [np.eye(m) for m in grid.shape]
    mats[axis] = T
    return reduce(np.kron, mats)


def laplacian(grid: Grid) -> np.ndarray:
    """Dense second-order Laplacian on the unknown nodes."""
    periodic = grid.topology == "periodic"
    out = np.zeros((grid.n, grid.n))
    for a, (m, h) in enumerate(zip(grid.shape, grid.spacing)):
        out += _lift(grid, a, _second_difference_1d(m, h, periodic))
    return out


def gradient(grid: Grid, axis: int = 0) -> np.ndarray:
    """Dense central first difference along ``axis``."""
    periodic = grid.topology == "periodic"
    m, h = grid.shape[axis], grid.spacing[axis]
    return _lift(grid, axis, _first_difference_1d(m, h, periodic))


def forward_difference(grid: Grid) -> np.ndarray:
    """Forward-difference matrix ``G`` of a 1-D grid with ``-laplacian = G.T @ G``.

    On Dirichlet grids ``G`` maps the interior values (zero extended) to the
    ``size-1`` cell differences; on periodic grids it is square.
    """
    if grid.dims != 1:
        raise ValidationError("forward_difference is defined for 1-D grids")
    m, h = grid.shape[0], grid.h
    if grid.topology == "periodic":
        G = (np.roll(np.eye(m), 1, axis=1) - np.eye(m)) / h
    else:
        G = (np.eye(m + 1, m) - np.eye(m + 1, m, k=-1)) / h
    return G
