"""Affine-invariant Riemannian geometry on 3x3 symmetric positive-definite
tensors.

Tensors are passed around as 6-component vectors (xx, xy, xz, yy, yz, zz),
the same packing used by TensorField. The metric is the affine-invariant one:
d(T1, T2) = ||log(T1^{-1/2} T2 T1^{-1/2})||_F, with Frechet means computed by
the standard fixed-point iteration on the tangent space.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from renovor.vesselness import TensorField, sym3, sym3_to_six

__all__ = [
    "EPS_SPD",
    "FrechetResult",
    "hessian_to_spd",
    "hessian_to_spd_field",
    "geodesic_distance",
    "geodesic_distance_field",
    "geodesic_distance_pairs",
    "sym3_batch",
    "frechet_mean",
    "spd_log",
    "spd_exp",
]

EPS_SPD = 1e-8


def _pack_batch(mats: np.ndarray) -> np.ndarray:
    """(..., 3, 3) symmetric matrices -> (..., 6) component vectors."""
    return np.stack(
        [
            mats[..., 0, 0],
            mats[..., 0, 1],
            mats[..., 0, 2],
            mats[..., 1, 1],
            mats[..., 1, 2],
            mats[..., 2, 2],
        ],
        axis=-1,
    )


def _cholesky_or_raise(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} requires symmetric positive-definite input") from None


def hessian_to_spd(six) -> np.ndarray:
    """Map a Hessian to an SPD tensor: eigenvalues lam -> max(-lam, EPS_SPD).

    Bright tubular structure (strongly negative lam2, lam3) becomes the
    dominant directions of the SPD tensor.
    """
    w, v = np.linalg.eigh(sym3(six))
    w = np.maximum(-w, EPS_SPD)
    return sym3_to_six((v * w) @ v.T)


def hessian_to_spd_field(field: TensorField) -> TensorField:
    """Voxelwise hessian_to_spd over a whole tensor field."""
    shape = field.data.shape[:3]
    mats = field.as_matrices().reshape(-1, 3, 3)
    w, v = np.linalg.eigh(mats)
    w = np.maximum(-w, EPS_SPD)
    spd = np.einsum("nij,nj,nkj->nik", v, w, v)
    return TensorField(field.geometry, _pack_batch(spd).reshape(shape + (6,)))


def geodesic_distance(t1_six, t2_six) -> float:
    """Affine-invariant distance sqrt(sum log^2 lam_i) over the generalized
    eigenvalues lam_i of (T2, T1). Symmetric in its arguments.

    Computed as 2*||log sigma(La^-1 Lb)|| from the Cholesky factors: working
    with matrix square roots halves the dynamic range, which keeps the small
    generalized eigenvalues accurate even for tensor pairs with huge spread
    (floored SPD tensors reach condition numbers ~1e10 each).
    """
    la = _cholesky_or_raise(sym3(t1_six), "geodesic_distance")
    lb = _cholesky_or_raise(sym3(t2_six), "geodesic_distance")
    m = solve_triangular(la, lb, lower=True)
    sigma = np.linalg.svd(m, compute_uv=False)
    return float(2.0 * np.sqrt(np.sum(np.log(sigma) ** 2)))


def geodesic_distance_field(field: TensorField, ref_six) -> np.ndarray:
    """(nz, ny, nx) distances from every voxel tensor to a reference tensor.

    All voxel tensors must be SPD (e.g. produced by hessian_to_spd_field).
    """
    l_ref = _cholesky_or_raise(sym3(ref_six), "geodesic_distance_field")
    l_inv = solve_triangular(l_ref, np.eye(3), lower=True)
    shape = field.data.shape[:3]
    mats = field.as_matrices().reshape(-1, 3, 3)
    try:
        lb = np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        raise ValueError("geodesic_distance_field requires SPD voxel tensors") from None
    sigma = np.linalg.svd(l_inv @ lb, compute_uv=False)
    return 2.0 * np.sqrt(np.sum(np.log(sigma) ** 2, axis=-1)).reshape(shape)


def geodesic_distance_pairs(six_a: np.ndarray, six_b: np.ndarray) -> np.ndarray:
    """Elementwise distances between two (N, 6) stacks of SPD tensors."""
    a = sym3_batch(np.asarray(six_a, np.float64))
    b = sym3_batch(np.asarray(six_b, np.float64))
    try:
        la = np.linalg.cholesky(a)
        lb = np.linalg.cholesky(b)
    except np.linalg.LinAlgError:
        raise ValueError("geodesic_distance_pairs requires SPD tensors") from None
    m = np.linalg.solve(la, lb)
    sigma = np.linalg.svd(m, compute_uv=False)
    return 2.0 * np.sqrt(np.sum(np.log(sigma) ** 2, axis=-1))


def sym3_batch(six: np.ndarray) -> np.ndarray:
    """(..., 6) component vectors -> (..., 3, 3) symmetric matrices."""
    six = np.asarray(six, np.float64)
    m = np.empty(six.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = six[..., 0]
    m[..., 0, 1] = m[..., 1, 0] = six[..., 1]
    m[..., 0, 2] = m[..., 2, 0] = six[..., 2]
    m[..., 1, 1] = six[..., 3]
    m[..., 1, 2] = m[..., 2, 1] = six[..., 4]
    m[..., 2, 2] = six[..., 5]
    return m


def spd_log(six) -> np.ndarray:
    """Matrix logarithm of an SPD tensor (six-vector in, six-vector out)."""
    w, v = np.linalg.eigh(sym3(six))
    if w[0] <= 0:
        raise ValueError("spd_log requires symmetric positive-definite input")
    return sym3_to_six((v * np.log(w)) @ v.T)


def spd_exp(six) -> np.ndarray:
    """Matrix exponential of a symmetric tensor; always SPD."""
    w, v = np.linalg.eigh(sym3(six))
    return sym3_to_six((v * np.exp(w)) @ v.T)


class FrechetResult(NamedTuple):
    mean: np.ndarray  # 6-component SPD tensor
    converged: bool
    iterations: int


def _sym_expm(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    return (v * np.exp(w)) @ v.T


def frechet_mean(tensors, tol: float = 1e-10, max_iter: int = 100) -> FrechetResult:
    """Riemannian (Karcher) mean of SPD tensors.

    Fixed-point iteration M <- M^{1/2} exp(mean_i log(M^{-1/2} T_i M^{-1/2}))
    M^{1/2}, started at the arithmetic mean, stopped when the Frobenius norm
    of the tangent-space mean falls to `tol`. If `max_iter` updates do not
    reach tol, the last iterate is returned with converged=False.
    """
    mats = np.stack([sym3(t) for t in tensors]) if len(tensors) else None
    if mats is None:
        raise ValueError("frechet_mean requires a non-empty tensor list")
    chol = _cholesky_or_raise(mats, "frechet_mean")
    m = mats.mean(axis=0)
    for iteration in range(max_iter + 1):
        w, v = np.linalg.eigh(m)
        # inputs span conditions up to ~1e10 (floored SPD tensors); rounding
        # can push an iterate's smallest eigenvalue below zero, so clamp
        w = np.maximum(w, 1e-12)
        sqrt_m = (v * np.sqrt(w)) @ v.T
        inv_sqrt_m = (v / np.sqrt(w)) @ v.T
        # log(M^-1/2 T M^-1/2) = U (2 log S) U^T from the SVD U S V^T of
        # M^-1/2 L_T — square-root scale, same trick as geodesic_distance
        p = inv_sqrt_m @ chol
        u, s, _ = np.linalg.svd(p)
        logs = np.einsum("nij,nj,nkj->nik", u, 2.0 * np.log(s), u)
        tangent = logs.mean(axis=0)
        if np.linalg.norm(tangent) <= tol:
            return FrechetResult(sym3_to_six(m), True, iteration)
        if iteration == max_iter:
            break
        m = sqrt_m @ _sym_expm(tangent) @ sqrt_m
    return FrechetResult(sym3_to_six(m), False, max_iter)
