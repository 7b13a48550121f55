"""Two-level block-Toeplitz operator and its diagonal-averaging inverse.

Coefficients are stored as a complex array ``U`` of shape ``(2M-1, 2N-1)``
with ``U[m + M - 1, l + N - 1] = u_l(m)``: columns are the vectors ``u_l``
(``l`` runs over block diagonals, ``l > 0`` below the block diagonal) and
rows the within-block diagonal offset ``m`` (``m > 0`` below the diagonal).

``t_apply(U)`` is the ``MN x MN`` matrix whose ``(J, J')`` block of size
``M x M`` is ``toep(u_{J-J'})``; ``t_star`` averages a matrix over the same
two-level diagonals, so ``t_star(t_apply(U)) == U``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def coeff_shape(M: int, N: int) -> tuple[int, int]:
    return (2 * M - 1, 2 * N - 1)


def dims_of(U: np.ndarray) -> tuple[int, int]:
    """Recover ``(M, N)`` from a coefficient array."""
    rows, cols = U.shape
    if rows % 2 == 0 or cols % 2 == 0:
        raise ValueError(f"coefficient array must have odd sides, got {U.shape}")
    return (rows + 1) // 2, (cols + 1) // 2


def get(U: np.ndarray, l: int, m: int) -> complex:
    """Return ``u_l(m)``."""
    M, N = dims_of(U)
    if abs(l) > N - 1 or abs(m) > M - 1:
        raise ValueError(f"(l, m) = ({l}, {m}) outside coefficient range")
    return U[m + M - 1, l + N - 1]


def identity_coeffs(M: int, N: int) -> np.ndarray:
    """Coefficient array with a single 1 at ``(l, m) = (0, 0)``; maps to ``I_MN``."""
    out = np.zeros(coeff_shape(M, N), dtype=complex)
    out[M - 1, N - 1] = 1.0
    return out


def diagonal_weights(M: int, N: int) -> np.ndarray:
    """Number of entries on each two-level diagonal, ``(N-|l|)(M-|m|)``."""
    wm = M - np.abs(np.arange(-(M - 1), M))
    wl = N - np.abs(np.arange(-(N - 1), N))
    return np.outer(wm, wl).astype(float)


def toep(u: np.ndarray) -> np.ndarray:
    """Toeplitz matrix with entry ``(p, q) = u(p - q)``.

    ``u`` has length ``2M - 1`` ordered ``u(-(M-1)), ..., u(M-1)``.
    """
    u = np.asarray(u)
    if u.ndim != 1 or u.size % 2 == 0:
        raise ValueError(f"toep expects a vector of odd length 2M-1, got shape {u.shape}")
    M = (u.size + 1) // 2
    p = np.arange(M)
    return u[(p[:, None] - p[None, :]) + M - 1]


@lru_cache(maxsize=32)
def _index_maps(M: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    # row/col of U feeding each entry of T(U), flattened over the MN x MN grid
    idx = np.arange(M * N)
    block, within = np.divmod(idx, M)
    m_off = within[:, None] - within[None, :] + M - 1
    l_off = block[:, None] - block[None, :] + N - 1
    m_off.setflags(write=False)
    l_off.setflags(write=False)
    return m_off, l_off


def t_apply(U: np.ndarray) -> np.ndarray:
    """Materialize the ``MN x MN`` two-level block-Toeplitz matrix ``T(U)``."""
    M, N = dims_of(U)
    m_off, l_off = _index_maps(M, N)
    return U[m_off, l_off]


def subblock(P: np.ndarray, l: int, j: int, M: int) -> np.ndarray:
    """Return the ``j``-th (1-based, left to right) ``M x M`` block on block diagonal ``l``."""
    MN = P.shape[0]
    if MN % M:
        raise ValueError(f"matrix size {MN} is not a multiple of M={M}")
    N = MN // M
    if abs(l) > N - 1 or not 1 <= j <= N - abs(l):
        raise ValueError(f"(l, j) = ({l}, {j}) out of range for N={N}")
    if l >= 0:
        br, bc = l + j - 1, j - 1
    else:
        br, bc = j - 1, -l + j - 1
    return P[br * M:(br + 1) * M, bc * M:(bc + 1) * M]


def tr_m(A: np.ndarray, m: int) -> complex:
    """Sum of the entries ``A[p, q]`` with ``p - q == m``."""
    M = A.shape[0]
    if abs(m) > M - 1:
        raise ValueError(f"diagonal index {m} out of range for M={M}")
    return np.trace(A, offset=-m)


def t_star(P: np.ndarray, M: int, N: int) -> np.ndarray:
    """Average ``P`` over each two-level diagonal ``(l, m)``.

    Returns the coefficient array ``Q`` with
    ``q_l(m) = sum_j Tr_m(S_{l,j}(P)) / ((N-|l|)(M-|m|))``.
    """
    P = np.asarray(P)
    if P.shape != (M * N, M * N):
        raise ValueError(f"expected a {(M * N, M * N)} matrix, got {P.shape}")
    m_off, l_off = _index_maps(M, N)
    rows, cols = coeff_shape(M, N)
    # average deviations from one reference entry per diagonal, so constant
    # diagonals come back bit-exact
    ref = P[_ref_rows(M, N), _ref_cols(M, N)]
    dev = P - ref[m_off, l_off]
    flat = (m_off * cols + l_off).ravel()
    re = np.bincount(flat, weights=dev.real.ravel(), minlength=rows * cols)
    im = np.bincount(flat, weights=dev.imag.ravel(), minlength=rows * cols)
    sums = (re + 1j * im).reshape(rows, cols)
    return ref + sums / diagonal_weights(M, N)


@lru_cache(maxsize=32)
def _ref_index(M: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    # first entry of diagonal (m, l): block (max(l,0), max(-l,0)), offset (max(m,0), max(-m,0))
    m = np.arange(-(M - 1), M)[:, None]
    l = np.arange(-(N - 1), N)[None, :]
    row = np.maximum(l, 0) * M + np.maximum(m, 0)
    col = np.maximum(-l, 0) * M + np.maximum(-m, 0)
    return row, col


def _ref_rows(M: int, N: int) -> np.ndarray:
    return _ref_index(M, N)[0]


def _ref_cols(M: int, N: int) -> np.ndarray:
    return _ref_index(M, N)[1]


def is_hermitian_symmetric(U: np.ndarray, atol: float = 1e-12) -> bool:
    """Check ``u_{-l}(-m) == conj(u_l(m))``, the condition for Hermitian ``T(U)``."""
    return bool(np.allclose(U[::-1, ::-1], U.conj(), atol=atol, rtol=0.0))


def hermitian_part(U: np.ndarray) -> np.ndarray:
    """Coefficients of ``(T(U) + T(U)^H) / 2``."""
    return 0.5 * (U + U[::-1, ::-1].conj())
