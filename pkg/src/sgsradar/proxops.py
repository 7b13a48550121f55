"""Proximal and projection primitives used by the ADMM solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EigPair:
    """Spectral decomposition ``P = vectors @ diag(values) @ vectors^H``.

    ``values`` are real and ascending; the columns of ``vectors`` are the
    matching orthonormal eigenvectors.
    """

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


def soft_threshold(y: np.ndarray, kappa: float) -> np.ndarray:
    """Complex soft-thresholding, the prox of ``kappa * ||.||_1``.

    Each entry is shrunk towards zero in modulus by ``kappa`` keeping its
    phase ``y / |y|``; entries with ``|y| <= kappa`` become exactly zero.
    """
    if kappa < 0:
        raise ValueError(f"threshold must be nonnegative, got {kappa}")
    y = np.asarray(y)
    mag = np.abs(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > kappa, 1.0 - kappa / mag, 0.0)
    return y * scale


def hermitian_eig(P: np.ndarray) -> EigPair:
    P = np.asarray(P)
    if not np.all(np.isfinite(P)):
        raise FloatingPointError("eigendecomposition of a matrix with non-finite entries")
    values, vectors = np.linalg.eigh(P)
    return EigPair(values, vectors)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.conj().T)


def psd_project(P: np.ndarray) -> np.ndarray:
    """Frobenius-nearest Hermitian PSD matrix to ``(P + P^H) / 2``.

    Negative eigenvalues are clipped to exactly zero.
    """
    eig = hermitian_eig(symmetrize(np.asarray(P)))
    keep = eig.values > 0
    V = eig.vectors[:, keep]
    out = (V * eig.values[keep]) @ V.conj().T
    return symmetrize(out)
