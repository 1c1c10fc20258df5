"""Centering, whitening and symmetric FastICA.

The estimated model is ``s = W (x - mean)`` with ``A = W^-1`` the mixing
matrix. Components are scaled to unit variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SingularCovariance

SINGULAR_EPS = 1e-9


@dataclass(frozen=True)
class IcaTransform:
    mean: np.ndarray
    unmixing: np.ndarray
    mixing: np.ndarray
    log_abs_det_unmixing: float
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        for name in ("mean", "unmixing", "mixing"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.isfinite(self.log_abs_det_unmixing):
            raise SingularCovariance("unmixing matrix is singular")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_unmixing(cls, mean, unmixing, converged=True, n_iter=0) -> "IcaTransform":
        unmixing = np.asarray(unmixing, dtype=float)
        sign, logdet = np.linalg.slogdet(unmixing)
        if sign == 0:
            raise SingularCovariance("unmixing matrix is singular")
        return cls(mean, unmixing, np.linalg.inv(unmixing), float(logdet), converged, n_iter)

    @classmethod
    def identity(cls, mean) -> "IcaTransform":
        mean = np.asarray(mean, dtype=float)
        eye = np.eye(mean.shape[0])
        return cls(mean, eye, eye, 0.0)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "unmixing": self.unmixing.tolist(),
            "mixing": self.mixing.tolist(),
            "log_abs_det_unmixing": self.log_abs_det_unmixing,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IcaTransform":
        m = len(d["mean"])
        return cls(
            np.asarray(d["mean"], dtype=float).reshape(m),
            np.asarray(d["unmixing"], dtype=float).reshape(m, m),
            np.asarray(d["mixing"], dtype=float).reshape(m, m),
            float(d["log_abs_det_unmixing"]),
            bool(d.get("converged", True)),
            int(d.get("n_iter", 0)),
        )


def _apply(matrix: np.ndarray, block: np.ndarray) -> np.ndarray:
    # Accumulate column by column so that one row and a batch of rows produce
    # bit-identical results (BLAS kernels differ with the batch size).
    out = np.zeros((block.shape[0], matrix.shape[0]))
    for j in range(matrix.shape[1]):
        out += block[:, j : j + 1] * matrix[:, j]
    return out


def transform(x, t: IcaTransform) -> np.ndarray:
    """Map original coordinates to component coordinates, ``W (x - mean)``.

    Accepts one vector or an (n, m) block.
    """
    x = np.asarray(x, dtype=float)
    block = np.atleast_2d(x)
    out = _apply(t.unmixing, block - t.mean)
    return out[0] if x.ndim == 1 else out


def inverse_transform(s, t: IcaTransform) -> np.ndarray:
    """Map component coordinates back, ``A s + mean``."""
    s = np.asarray(s, dtype=float)
    block = np.atleast_2d(s)
    out = _apply(t.mixing, block) + t.mean
    return out[0] if s.ndim == 1 else out


def center(block) -> tuple[np.ndarray, np.ndarray]:
    block = np.asarray(block, dtype=float)
    if block.shape[0] < 1:
        raise ValueError("cannot center an empty block")
    mean = block.mean(axis=0)
    return block - mean, mean


def whiten(centered, eps: float = SINGULAR_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Z, K)`` with ``Z = centered @ K.T`` having identity covariance.

    ``K = diag(eigval^-1/2) E^T`` from the eigendecomposition of the empirical
    covariance (divisor n).
    """
    centered = np.asarray(centered, dtype=float)
    n = centered.shape[0]
    if n < 2:
        raise SingularCovariance("whitening needs at least two rows")
    cov = centered.T @ centered / n
    eigval, eigvec = np.linalg.eigh(cov)
    top = eigval.max()
    if top <= 0 or eigval.min() < eps * top:
        raise SingularCovariance(
            f"covariance eigenvalues span [{eigval.min():.3g}, {top:.3g}]; block is rank deficient"
        )
    K = eigvec.T / np.sqrt(eigval)[:, None]
    return centered @ K.T, K


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    # (W W^T)^-1/2 W
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u / np.sqrt(s)) @ u.T @ W


def fast_ica(block, n_components=None, max_iter: int = 1000, tol: float = 1e-4, seed: int = 0) -> IcaTransform:
    """Estimate an unmixing transform with parallel FastICA and the log-cosh contrast.

    Non-convergence within ``max_iter`` is reported through ``converged`` on
    the result (and a ``RuntimeWarning``), never as an error.

    Raises
    ------
    SingularCovariance
        If the block's covariance is rank deficient.
    """
    block = np.asarray(block, dtype=float)
    n, m = block.shape
    if n_components is not None and n_components != m:
        raise ValueError("only n_components equal to the number of columns is supported")
    if n <= m:
        raise SingularCovariance(f"{n} rows cannot determine a {m}-dimensional covariance")
    centered, mean = center(block)
    Z, K = whiten(centered)

    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.standard_normal((m, m)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Y = Z @ W.T
        g = np.tanh(Y)
        g_prime = 1.0 - g * g
        W_new = _sym_decorrelate(g.T @ Z / n - g_prime.mean(axis=0)[:, None] * W)
        change = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0))
        W = W_new
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"FastICA did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2)
    return IcaTransform.from_unmixing(mean, W @ K, converged=converged, n_iter=it)


def amari_index(unmixing, mixing) -> float:
    """Normalised Amari distance of ``P = unmixing @ mixing`` from a scaled permutation.

    Zero means perfect separation; the value lies in [0, 1].
    """
    P = np.abs(np.asarray(unmixing) @ np.asarray(mixing))
    m = P.shape[0]
    if m < 2:
        return 0.0
    rows = (P / P.max(axis=1, keepdims=True)).sum(axis=1) - 1.0
    cols = (P / P.max(axis=0, keepdims=True)).sum(axis=0) - 1.0
    return float((rows.sum() + cols.sum()) / (2.0 * m * (m - 1)))
