"""Kernel-ridge emulator of inverse Cholesky factors and expert aggregation.

A :class:`SurrogateModel` regresses packed lower triangles ``vec(R)`` on
inputs ``z`` (optionally augmented with ``log10(lambda)``).  One Cholesky
factorization of ``K(Z, Z) + sigma2 I`` serves every output coordinate.

:class:`ExpertEnsemble` combines several models sharing a kernel through the
nested-Kriging weights

    alpha = K_M^{-1} (k_M - 1 (1^T K_M^{-1} k_M - 1) / (1^T K_M^{-1} 1)),

where ``k_M`` and ``K_M`` are the covariances between the experts' kriging
predictors and the target, computed from the shared kernel.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .errors import (DimensionMismatch, EmptyDataset, LengthMismatch,
                     SingularKM, ValidationError)
from .linalg import cho_solve_lower, cholesky_lower
from .nk import Dataset, packed_size
from .sampling import KernelSpec, kernel_gram, sq_distances

DIAG_FLOOR = 1e-8
MEDIAN_SUBSAMPLE = 2000


# -- packing -----------------------------------------------------------------

def vectorize_factor(R) -> np.ndarray:
    """Row-major packing of the lower triangle."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionMismatch("factor must be square")
    return R[np.tril_indices(R.shape[0])].copy()


def devectorize(vec, n: int, floor: float = DIAG_FLOOR) -> np.ndarray:
    """Inverse of :func:`vectorize_factor` with diagonal entries clamped to ``floor``."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or vec.size != packed_size(n):
        raise LengthMismatch(f"packed factor of size {n} needs {packed_size(n)} entries, got {vec.size}")
    R = np.zeros((n, n))
    R[np.tril_indices(n)] = vec
    d = np.diag_indices(n)
    R[d] = np.maximum(R[d], floor)
    return R


def _diag_positions(n: int) -> np.ndarray:
    i = np.arange(n)
    return i * (i + 1) // 2 + i


# -- lengthscales --------------------------------------------------------------

def median_lengthscale(Z) -> float:
    """Median pairwise distance among distinct inputs (strided subsample)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Zu = np.unique(Z, axis=0)
    if Zu.shape[0] > MEDIAN_SUBSAMPLE:
        Zu = Zu[:: int(np.ceil(Zu.shape[0] / MEDIAN_SUBSAMPLE))]
    if Zu.shape[0] < 2:
        return 1.0
    d2 = sq_distances(Zu, Zu)
    iu = np.triu_indices(Zu.shape[0], 1)
    med = float(np.sqrt(np.median(d2[iu])))
    return med if med > 0 else 1.0


# -- model -------------------------------------------------------------------

def _lambda_column(lams) -> np.ndarray:
    lams = np.asarray(lams, dtype=float)
    if np.any(lams <= 0):
        raise ValidationError("lambda-aware models need strictly positive lambdas")
    return np.log10(lams)


@dataclass
class SurrogateModel:
    """Fitted kernel-ridge model.

    ``X`` holds the training inputs as seen by the kernel: ``z`` plus the
    ``log10 lambda`` column when ``lambda_aware``, divided coordinatewise by
    ``x_scale``.  ``W`` holds the ridge weights ``(K + sigma2 I)^{-1} Y`` and
    ``chol`` the lower factor of that matrix.
    """

    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    chol: np.ndarray
    kernel: KernelSpec
    sigma2: float
    n: int
    lambda_aware: bool = False
    lambda_train: tuple = ()
    mode: str = "chonknoris"
    kind: str = ""
    perm: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def lengthscale(self) -> float:
        return self.kernel.lengthscale

    @property
    def input_dim(self) -> int:
        return self.X.shape[1] - (1 if self.lambda_aware else 0)

    def _input(self, z, lam) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.input_dim:
            raise DimensionMismatch(f"model expects inputs of size {self.input_dim}, got {z.size}")
        if self.lambda_aware:
            z = np.append(z, _lambda_column([lam]))
        return z if self.x_scale is None else z / self.x_scale

    def kvec(self, x) -> np.ndarray:
        return kernel_gram(self.kernel, np.atleast_2d(x), self.X)[0]

    def predict_packed(self, z, lam: float | None = None) -> np.ndarray:
        """Raw kernel-ridge mean of the packed factor (no projection)."""
        return self.kvec(self._input(z, lam)) @ self.W

    def predict(self, z, lam: float | None = None) -> np.ndarray:
        return devectorize(self.predict_packed(z, lam), self.n)

    def predict_factor(self, z, lam, J=None):
        """Inference interface: factor and its unknown ordering."""
        return self.predict(z, lam), self.perm

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.X, self.W):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        h.update(repr((self.kernel, self.sigma2, self.n, self.lambda_aware)).encode())
        return h.hexdigest()


def input_scale(X) -> np.ndarray:
    """Per-coordinate standard deviation, with constant coordinates left unscaled."""
    s = np.std(X, axis=0)
    s[~(s > 0)] = 1.0
    return s


def pooled_scale(datasets) -> np.ndarray:
    """One coordinate scale for several datasets, so their experts share an input space."""
    return input_scale(np.vstack([d.Z for d in datasets]))


def fit_arrays(Z, lambdas, Y, n: int, kernel: KernelSpec | None = None, sigma2: float = 1e-10,
               lambda_aware: bool | None = None, lengthscale_factor: float = 1.0,
               standardize: bool | np.ndarray = True, **meta) -> SurrogateModel:
    """Fit from raw record blocks (see :func:`fit`).

    ``standardize`` may be a boolean or an explicit coordinate scale.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if Z.shape[0] == 0:
        raise EmptyDataset("cannot fit a model without records")
    if not sigma2 > 0:
        raise ValidationError("sigma2 must be positive")
    if Y.shape[1] != packed_size(n):
        raise LengthMismatch("output width does not match the factor size")
    lam_set = tuple(sorted(set(lambdas.tolist())))
    if lambda_aware is None:
        lambda_aware = len(lam_set) > 1
    X = np.column_stack([Z, _lambda_column(lambdas)]) if lambda_aware else Z
    if isinstance(standardize, bool):
        x_scale = input_scale(X) if standardize else None
    else:
        x_scale = np.asarray(standardize, dtype=float)
    if x_scale is not None:
        X = X / x_scale
    # C order keeps BLAS reductions identical for in-memory and reloaded models
    X, Y = np.ascontiguousarray(X), np.ascontiguousarray(Y)
    if kernel is None:
        kernel = KernelSpec("gaussian", lengthscale_factor * median_lengthscale(X))
    K = kernel_gram(kernel, X)
    K[np.diag_indices_from(K)] += sigma2
    L = cholesky_lower(K)
    del K
    W = np.ascontiguousarray(cho_solve_lower(L, Y))
    perm = meta.pop("perm", None)
    return SurrogateModel(X, Y, W, L, kernel, float(sigma2), int(n), bool(lambda_aware),
                          lam_set, meta.pop("mode", "chonknoris"), meta.pop("kind", ""),
                          None if perm is None else np.asarray(perm, dtype=int), x_scale, meta)


def fit(dataset: Dataset, kernel: KernelSpec | None = None, sigma2: float = 1e-10,
        lengthscale_factor: float = 1.0, standardize: bool | np.ndarray = True) -> SurrogateModel:
    """Exact kernel-ridge fit of ``dataset``.

    Inputs are divided by their per-coordinate standard deviation unless
    ``standardize`` is false.  ``kernel=None`` picks a Gaussian kernel whose
    lengthscale is ``lengthscale_factor`` times the median pairwise distance
    of the (scaled) inputs.
    """
    if len(dataset) == 0:
        raise EmptyDataset("dataset has no records")
    m = dataset.manifest
    return fit_arrays(dataset.Z, dataset.lambdas, dataset.factors, dataset.n, kernel, sigma2,
                      lengthscale_factor=lengthscale_factor, standardize=standardize,
                      mode=m.get("mode", "chonknoris"),
                      kind=m.get("kind", ""), perm=m.get("permutation"))


def refit(model: SurrogateModel, lengthscale: float) -> SurrogateModel:
    """Same data, same family, new lengthscale."""
    kernel = replace(model.kernel, lengthscale=float(lengthscale))
    K = kernel_gram(kernel, model.X)
    K[np.diag_indices_from(K)] += model.sigma2
    L = cholesky_lower(K)
    del K
    return replace(model, kernel=kernel, chol=L, W=np.ascontiguousarray(cho_solve_lower(L, model.Y)))


def cv_lengthscale(dataset: Dataset, factors=(0.25, 0.5, 1.0, 2.0), folds: int = 5,
                   sigma2: float = 1e-10, family: str = "gaussian",
                   standardize: bool = True) -> float:
    """Grid-search k-fold cross-validation over multiples of the median heuristic.

    Returns the lengthscale in the (scaled) input space used by :func:`fit`.
    """
    Z = dataset.Z
    lam_aware = len(set(dataset.lambdas.tolist())) > 1
    X = np.column_stack([Z, _lambda_column(dataset.lambdas)]) if lam_aware else Z
    scale = input_scale(X) if standardize else np.ones(X.shape[1])
    Xs = X / scale
    base = median_lengthscale(Xs)
    idx = np.arange(len(dataset))
    best, best_err = base, np.inf
    for f in factors:
        err = 0.0
        for k in range(folds):
            te = idx[k::folds]
            tr = np.setdiff1d(idx, te)
            if tr.size == 0 or te.size == 0:
                continue
            m = fit_arrays(Z[tr], dataset.lambdas[tr], dataset.factors[tr], dataset.n,
                           KernelSpec(family, f * base), sigma2, lambda_aware=lam_aware,
                           standardize=scale)
            pred = kernel_gram(m.kernel, Xs[te], m.X) @ m.W
            err += float(np.sum((pred - dataset.factors[te]) ** 2))
        if err < best_err:
            best, best_err = f * base, err
    return best


def training_error(model: SurrogateModel, dataset: Dataset) -> np.ndarray:
    """Frobenius error of the projected prediction at every training record."""
    errs = np.empty(len(dataset))
    for i in range(len(dataset)):
        R = model.predict(dataset.Z[i], dataset.lambdas[i])
        errs[i] = np.linalg.norm(R - devectorize(dataset.factors[i], dataset.n, -np.inf))
    return errs


# -- ensembles ----------------------------------------------------------------

@dataclass
class AggregationWeights:
    alpha: np.ndarray
    K_M: np.ndarray
    k_M: np.ndarray


class ExpertEnsemble:
    """Experts refit on the shared lengthscale ``ell_A`` (mean of theirs)."""

    def __init__(self, experts, lengthscale: float | None = None):
        experts = list(experts)
        if not experts:
            raise ValidationError("an ensemble needs at least one expert")
        fam = {e.kernel.family for e in experts}
        if len(fam) != 1:
            raise ValidationError("experts must share a kernel family")
        if len({e.n for e in experts}) != 1 or len({e.X.shape[1] for e in experts}) != 1:
            raise ValidationError("experts must share input and output dimensions")
        scales = [e.x_scale for e in experts]
        same = all((a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
                   for a, b in zip(scales, scales[1:]))
        if not same:
            raise ValidationError("experts must share one input scale (see pooled_scale)")
        self.source_lengthscales = [e.lengthscale for e in experts]
        ell = float(np.mean(self.source_lengthscales)) if lengthscale is None else float(lengthscale)
        self.lengthscale = ell
        self.experts = [e if np.isclose(e.lengthscale, ell, rtol=0, atol=0) else refit(e, ell)
                        for e in experts]
        self.kernel = self.experts[0].kernel
        p = len(self.experts)
        self._cross = {}
        for i in range(p):
            for j in range(i + 1, p):
                self._cross[i, j] = kernel_gram(self.kernel, self.experts[i].X, self.experts[j].X)
        e0 = self.experts[0]
        self.n, self.mode, self.lambda_aware = e0.n, e0.mode, e0.lambda_aware
        self.perm = e0.perm
        self.lambda_train = e0.lambda_train

    def __len__(self):
        return len(self.experts)

    def predict_factor(self, z, lam, J=None):
        return aggregate_predict(self, z, lam), self.perm


def constrained_weights(K_M, k_M) -> np.ndarray:
    """Minimizer of ``a^T K_M a - 2 a^T k_M`` subject to ``sum(a) = 1``.

    Solved through the bordered (KKT) system.  When ``K_M`` is rank deficient,
    e.g. two experts that coincide, the minimum-norm minimizer is returned.
    """
    K_M = np.asarray(K_M, dtype=float)
    k_M = np.asarray(k_M, dtype=float)
    p = k_M.size
    if not (np.all(np.isfinite(K_M)) and np.all(np.isfinite(k_M))):
        raise SingularKM("expert covariance matrix is not finite")
    A = np.zeros((p + 1, p + 1))
    A[:p, :p] = 0.5 * (K_M + K_M.T)
    A[:p, p] = A[p, :p] = 1.0
    sol, *_ = sla.lstsq(A, np.append(k_M, 1.0), cond=1e-13, check_finite=False)
    alpha = sol[:p]
    total = alpha.sum()
    if not np.isfinite(total) or abs(total - 1.0) > 1e-6:
        raise SingularKM("expert covariance matrix is singular")
    return alpha / total


def aggregate_weights(ensemble, x) -> AggregationWeights:
    """Nested-Kriging weights at kernel input ``x`` (``z`` plus any lambda column)."""
    experts = ensemble.experts if isinstance(ensemble, ExpertEnsemble) else list(ensemble)
    cross = ensemble._cross if isinstance(ensemble, ExpertEnsemble) else None
    p = len(experts)
    if p == 1:
        return AggregationWeights(np.ones(1), np.ones((1, 1)), np.ones(1))
    kernel = experts[0].kernel
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ws, k_M = [], np.empty(p)
    K_M = np.empty((p, p))
    for i, e in enumerate(experts):
        k = kernel_gram(kernel, x, e.X)[0]
        w = cho_solve_lower(e.chol, k)
        ws.append(w)
        k_M[i] = k @ w
        K_M[i, i] = k @ w - e.sigma2 * (w @ w)
    for i in range(p):
        for j in range(i + 1, p):
            Kij = cross[i, j] if cross is not None else kernel_gram(kernel, experts[i].X, experts[j].X)
            K_M[i, j] = K_M[j, i] = ws[i] @ (Kij @ ws[j])
    return AggregationWeights(constrained_weights(K_M, k_M), K_M, k_M)


def aggregate_predict(ensemble: ExpertEnsemble, z, lam=None, alpha=None) -> np.ndarray:
    """Weighted combination of the experts' packed means, then diagonal projection."""
    experts = ensemble.experts
    x = experts[0]._input(z, lam)
    if alpha is None:
        alpha = aggregate_weights(ensemble, x).alpha
    packed = sum(a * e.kvec(x) @ e.W for a, e in zip(alpha, experts))
    return devectorize(packed, experts[0].n)
