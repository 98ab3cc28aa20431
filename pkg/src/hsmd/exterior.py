"""Wedge-product norms and positive semidefinite matrix numerics in any dimension.

Space-time vectors are plain 1-D arrays of length ``d = 1 + n`` whose first
component is the time coordinate.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

# Orthogonal-complement construction.
RESIDUAL_TOL = 1e-10
# psd_det_root: tolerated negative eigenvalue, relative to the largest one.
PSD_NEG_TOL = 1e-10
# psd_det_root: eigenvalues at or below this fraction of the reference scale count as zero.
RANK_TOL = 1e-12


class NotPSDError(ValueError):
    """Matrix has an eigenvalue below the tolerated negative threshold."""


def _as_columns(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    if len(vectors) == 0:
        raise ValueError("need at least one vector")
    rows = [np.asarray(z, dtype=float) for z in vectors]
    d = rows[0].shape
    if len(d) != 1:
        raise ValueError("vectors must be one-dimensional")
    for z in rows:
        if z.shape != d:
            raise ValueError(f"dimension mismatch: {z.shape[0]} vs {d[0]}")
    if len(rows) > d[0]:
        raise ValueError(f"{len(rows)} vectors in R^{d[0]}: wedge product of more than d vectors")
    return np.stack(rows, axis=1)


def wedge_norm_sq(vectors: Sequence[Sequence[float]]) -> float:
    """Return |Z1 ^ ... ^ Zk|^2, the Gram determinant det(<Zi, Zj>).

    The determinant is obtained as prod(diag(R))**2 from a Householder QR
    factorization of the d x k matrix of columns, which equals the Gram
    determinant exactly in real arithmetic but stays accurate for nearly
    dependent families (the explicit Gram matrix squares the condition number).
    """
    Z = _as_columns(vectors)
    r = np.linalg.qr(Z, mode="r")
    return float(np.prod(np.diag(r)) ** 2)


def lift(v: Sequence[float]) -> np.ndarray:
    """Space-time direction V = (1, v) of a particle moving with velocity v."""
    v = np.asarray(v, dtype=float)
    return np.concatenate(([1.0], v))


def orthonormal_complement_basis(vectors: Sequence[Sequence[float]], d: int | None = None) -> list[np.ndarray]:
    """Orthonormal basis of Span(vectors)^perp.

    Modified Gram-Schmidt (with one reorthogonalization pass) is run first over
    the input vectors, then over the canonical basis e_0, ..., e_{d-1} in index
    order; a candidate is discarded when its residual norm is at most
    ``RESIDUAL_TOL`` times its original norm. Only the vectors coming from the
    canonical basis are returned, so the output is deterministic.
    """
    vecs = [np.asarray(z, dtype=float) for z in vectors]
    if d is None:
        if not vecs:
            raise ValueError("dimension unknown for an empty family")
        d = vecs[0].shape[0]
    basis: list[np.ndarray] = []

    def _absorb(z: np.ndarray) -> np.ndarray | None:
        norm0 = np.linalg.norm(z)
        if norm0 == 0.0:
            return None
        w = z.copy()
        for _ in range(2):
            for b in basis:
                w -= np.dot(b, w) * b
        norm = np.linalg.norm(w)
        if norm <= RESIDUAL_TOL * norm0:
            return None
        w /= norm
        basis.append(w)
        return w

    for z in vecs:
        if z.shape != (d,):
            raise ValueError(f"dimension mismatch: {z.shape} vs ({d},)")
        _absorb(z)
    out = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        w = _absorb(e)
        if w is not None:
            out.append(w)
    return out


def _root_of_eigenvalues(lam: np.ndarray, p: float, scale: np.ndarray | float | None) -> np.ndarray:
    """Batched core of psd_det_root; ``lam`` has shape (..., d), ascending."""
    top = lam[..., -1]
    ref = np.maximum(top, 0.0) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), top.shape)
    bad = lam[..., 0] < -PSD_NEG_TOL * ref
    if np.any(bad):
        worst = float(np.min(lam[..., 0][bad]))
        raise NotPSDError(f"not PSD: smallest eigenvalue {worst:.3e}")
    clamped = np.where(lam <= RANK_TOL * ref[..., None], 0.0, lam)
    return np.prod(clamped, axis=-1) ** p


def psd_det_root(S: np.ndarray, p: float, scale: float | None = None) -> float:
    """(det S)**p over the eigenvalues of the symmetrized matrix, clamped at zero.

    ``scale`` is the magnitude the negative-eigenvalue and rank tolerances are
    measured against; by default the largest eigenvalue of ``S`` itself.
    Eigenvalues at or below ``RANK_TOL * scale`` are treated as exact zeros so
    that rank-deficient inputs return 0.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("square matrix required")
    if p <= 0:
        raise ValueError("exponent must be positive")
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(_root_of_eigenvalues(lam, p, scale))


def psd_det_root_batch(S: np.ndarray, p: float, scale: float | None = None) -> np.ndarray:
    """Vectorized psd_det_root over a stack of matrices with shape (..., d, d)."""
    S = np.asarray(S, dtype=float)
    lam = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, -1, -2)))
    return _root_of_eigenvalues(lam, p, scale)
