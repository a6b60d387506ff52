"""Random fields: Gaussian-process draws and sum-of-sines initial conditions.

Randomness comes from numpy's counter-based Philox generator.  Draw ``i`` of
a batch with seed ``s`` uses the stream ``Philox(key=s).jumped(i)``, so any
subset of a batch can be regenerated independently.  Standard normals are
produced by the Box-Muller transform from 53-bit uniforms on ``(0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from .errors import UnsupportedFamilyForGrid, ValidationError
from .grid import Grid, laplacian
from .linalg import cholesky_lower

RNG_ALGORITHM = "philox4x64-jumped/box-muller"
FAMILIES = ("periodic", "matern52", "gaussian", "inv_laplacian")
GP_JITTER = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    lengthscale: float = 1.0
    period: float = 1.0
    scale: float = 1.0
    shift: float = 0.01  # inv_laplacian only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown kernel family {self.family!r}")
        if not (self.lengthscale > 0 and self.period > 0 and self.scale > 0):
            raise ValidationError("lengthscale, period and scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)


def periodic_kernel(lengthscale: float = 10.0, period: float = 0.5, scale: float = 1.0) -> KernelSpec:
    return KernelSpec("periodic", lengthscale, period, scale)


def inv_laplacian_kernel(scale: float = 5.0, shift: float = 0.01) -> KernelSpec:
    return KernelSpec("inv_laplacian", 1.0, 1.0, scale, shift)


# -- Gram matrices ---------------------------------------------------------

def sq_distances(X, Y) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    d2 = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * (X @ Y.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def stationary_from_sqdist(spec: KernelSpec, d2: np.ndarray) -> np.ndarray:
    """Isotropic Gaussian or Matern-5/2 values from squared distances (in place)."""
    ell = spec.lengthscale
    if spec.family == "gaussian":
        d2 *= -0.5 / ell**2
        np.exp(d2, out=d2)
    elif spec.family == "matern52":
        r = np.sqrt(d2, out=d2)
        r *= np.sqrt(5.0) / ell
        out = np.exp(-r)
        out *= 1.0 + r + r * r / 3.0
        d2 = out
    else:
        raise UnsupportedFamilyForGrid(f"{spec.family} is not an isotropic point kernel")
    if spec.scale != 1.0:
        d2 *= spec.scale
    return d2


def kernel_gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Kernel matrix between point sets ``X`` and ``Y`` (rows are points)."""
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    Y = X if Y is None else (np.asarray(Y, float)[:, None] if np.ndim(Y) == 1 else np.asarray(Y, float))
    if spec.family == "periodic":
        if X.shape[1] != 1:
            raise UnsupportedFamilyForGrid("the periodic kernel is one-dimensional")
        s = np.sin(np.pi / spec.period * (X[:, 0][:, None] - Y[:, 0][None, :]))
        return spec.scale * np.exp(-2.0 / spec.lengthscale * s * s)
    if spec.family == "inv_laplacian":
        raise UnsupportedFamilyForGrid("inv_laplacian is defined on grids, not point sets")
    return stationary_from_sqdist(spec, sq_distances(X, Y))


def kernel_matrix(spec: KernelSpec, grid: Grid) -> np.ndarray:
    """Gram matrix of ``spec`` on the unknown nodes of ``grid``."""
    if spec.family == "inv_laplacian":
        M = -laplacian(grid) + spec.shift * np.eye(grid.n)
        Minv = np.linalg.inv(M)
        K = spec.scale * (Minv @ Minv)
        return 0.5 * (K + K.T)
    if spec.family == "periodic" and grid.dims != 1:
        raise UnsupportedFamilyForGrid("the periodic kernel needs a 1-D grid")
    return kernel_gram(spec, grid.nodes())


# -- random numbers ----------------------------------------------------------

def _stream(seed: int, index: int) -> np.random.Philox:
    bg = np.random.Philox(key=int(seed))
    return bg.jumped(int(index)) if index else bg


def uniforms(seed: int, index: int, count: int) -> np.ndarray:
    """``count`` uniforms on ``(0, 1]`` from stream ``(seed, index)``."""
    raw = _stream(seed, index).random_raw(count)
    return ((raw >> np.uint64(11)).astype(float) + 1.0) * 2.0**-53


def standard_normals(seed: int, index: int, count: int) -> np.ndarray:
    """Box-Muller normals from stream ``(seed, index)``."""
    m = (count + 1) // 2
    u = uniforms(seed, index, 2 * m)
    r = np.sqrt(-2.0 * np.log(u[:m]))
    t = 2.0 * np.pi * u[m:]
    return np.concatenate([r * np.cos(t), r * np.sin(t)])[:count]


# -- samplers ----------------------------------------------------------------

@dataclass
class SampleBatch:
    fields: np.ndarray            # (count, n)
    seed: int
    kernel: KernelSpec
    grid: Grid
    start: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.fields.shape[0]

    def __getitem__(self, i):
        return self.fields[i]


def gp_factor(spec: KernelSpec, grid: Grid) -> np.ndarray:
    K = kernel_matrix(spec, grid)
    jitter = GP_JITTER * np.max(np.diag(K))
    return cholesky_lower(K + jitter * np.eye(grid.n))


def sample_gp(spec: KernelSpec, grid: Grid, count: int, seed: int, start: int = 0) -> SampleBatch:
    """Draws ``start .. start+count-1`` of the zero-mean GP with kernel ``spec``.

    The relative jitter ``1e-10 * max(diag K)`` keeps nearly low-rank kernels
    factorizable.
    """
    L = gp_factor(spec, grid)
    Z = np.stack([standard_normals(seed, start + i, grid.n) for i in range(count)]) if count else np.zeros((0, grid.n))
    return SampleBatch(Z @ L.T, int(seed), spec, grid, int(start))


def sum_of_sines(grid: Grid, coeffs) -> np.ndarray:
    x = grid.axis_coords(0)
    a = np.asarray(coeffs, dtype=float)
    k = np.arange(1, a.size + 1)
    return np.sin(np.pi * np.outer(x, k)) @ a


def sample_sum_of_sines(grid: Grid, seed: int, index: int = 0, terms: int = 3) -> np.ndarray:
    """``sum_k a_k sin(pi k x)`` with standard-normal ``a_k``, k = 1..terms."""
    if grid.dims != 1:
        raise ValidationError("sum-of-sines fields are one-dimensional")
    return sum_of_sines(grid, standard_normals(seed, index, terms))
