"""2D MUSIC on the recovered block-Toeplitz matrix and path classification.

The SDP returns ``U`` whose block-Toeplitz lift ``T(U)`` behaves like a
covariance of the delay-Doppler atoms. Its dominant eigenvectors span the
signal subspace; the pseudo-spectrum ``1 / ||E_n^H a(phi, psi)||^2`` peaks
where an atom is orthogonal to the remaining (noise) eigenvectors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import toeplitz as tp
from .csvio import write_csv
from .proxops import hermitian_eig
from .scene import SPEED_OF_LIGHT, OfdmConfig, PathClass, atom_matrix

RIDGE = 1e-10


class DegenerateEstimate(ValueError):
    """Raised when ``T(U)`` has no usable signal or noise subspace."""


@dataclass(frozen=True)
class MusicParams:
    """Grid size, model-order rule and classification thresholds.

    ``k_max=None`` leaves the model order uncapped. ``psi_direct=None``
    means half a delay cell, ``0.5 / N``.
    """

    grid_phi: int = 256
    grid_psi: int = 256
    rank_ratio: float = 1e-2
    k_max: int | None = None
    v_min: float = 5.0
    psi_direct: float | None = None

    def __post_init__(self):
        if self.grid_phi < 16 or self.grid_psi < 16:
            raise ValueError("grid sizes must be at least 16")
        if not 0.0 < self.rank_ratio < 1.0:
            raise ValueError(f"rank_ratio must lie in (0, 1), got {self.rank_ratio}")
        if self.k_max is not None and self.k_max < 1:
            raise ValueError("k_max must be positive")

    def psi_threshold(self, N: int) -> float:
        return 0.5 / N if self.psi_direct is None else self.psi_direct

    def cell(self) -> tuple[float, float]:
        return 1.0 / self.grid_phi, 1.0 / self.grid_psi

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "MusicParams":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class Peak:
    phi: float
    psi: float
    alpha: complex = 0j
    kind: PathClass = PathClass.TARGET


@dataclass
class EstimateReport:
    peaks: list[Peak]
    k_hat: int
    model_order: int
    spectrum: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_tar(self) -> int:
        return sum(p.kind is PathClass.TARGET for p in self.peaks)

    def positions(self, kind: PathClass | None = None) -> list[tuple[float, float]]:
        return [(p.phi, p.psi) for p in self.peaks if kind is None or p.kind is kind]


def estimate_rank(eigenvalues: np.ndarray, rank_ratio: float, k_max: int | None = None) -> int:
    """Smallest ``k`` with ``zeta[k] < rank_ratio * zeta[0]`` (0-based), capped at ``k_max``."""
    zeta = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    cap = zeta.size if k_max is None else min(k_max, zeta.size)
    if zeta.size == 0 or zeta[0] <= 0:
        return 0
    below = np.nonzero(zeta < rank_ratio * zeta[0])[0]
    k = int(below[0]) if below.size else zeta.size
    return min(k, cap)


def _noise_subspace(U_hat: np.ndarray, params: MusicParams) -> tuple[np.ndarray, int]:
    M, N = tp.dims_of(U_hat)
    MN = M * N
    eig = hermitian_eig(tp.hermitian_part(tp.t_apply(U_hat)))
    order = np.argsort(eig.values)[::-1]
    vals, vecs = eig.values[order], eig.vectors[:, order]
    k_max = MN if params.k_max is None else params.k_max
    k = estimate_rank(vals, params.rank_ratio, k_max)
    if k == 0:
        raise DegenerateEstimate("T(U) is numerically zero, no signal subspace; check that the solve converged")
    if k >= MN:
        raise DegenerateEstimate(f"model order {k} leaves no noise subspace; raise rank_ratio or lower k_max")
    return vecs[:, k:], k


def spectrum_from_subspace(En: np.ndarray, M: int, N: int, grid_phi: int, grid_psi: int) -> np.ndarray:
    """Pseudo-spectrum on the ``grid_phi x grid_psi`` grid for noise basis ``En`` (``MN x d``)."""
    E = En.conj().reshape(M, N, -1, order="F")
    B = np.exp(2j * np.pi * np.outer(np.arange(M), np.arange(grid_phi) / grid_phi))
    G = np.exp(-2j * np.pi * np.outer(np.arange(N), np.arange(grid_psi) / grid_psi))
    # proj[j, p, q] = sum_{m,n} conj(E[m, n, j]) B[m, p] G[n, q]
    proj = np.einsum("mnj,mp->jpn", E, B, optimize=True) @ G
    denom = np.einsum("jpq,jpq->pq", proj.conj(), proj).real
    return 1.0 / np.maximum(denom, np.finfo(float).tiny)


def music_spectrum(U_hat: np.ndarray, params: MusicParams = MusicParams()) -> tuple[np.ndarray, int]:
    """Return ``(spectrum, k_hat)``; ``spectrum[p, q]`` sits at ``(p/grid_phi, q/grid_psi)``."""
    M, N = tp.dims_of(U_hat)
    En, k = _noise_subspace(U_hat, params)
    return spectrum_from_subspace(En, M, N, params.grid_phi, params.grid_psi), k


def _parabolic(left: float, mid: float, right: float) -> float:
    curv = left - 2 * mid + right
    if curv == 0 or not math.isfinite(curv):
        return 0.0
    return float(np.clip(0.5 * (left - right) / curv, -0.5, 0.5))


def pick_peaks(spectrum: np.ndarray, k_hat: int) -> list[tuple[float, float]]:
    """Strict 8-neighbour maxima on the periodic grid, strongest ``k_hat`` first.

    Each location is refined by a per-axis parabola through the denominator
    ``1/spectrum``, which is locally quadratic around a null.
    """
    P, Q = spectrum.shape
    is_max = np.ones_like(spectrum, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_max &= spectrum > np.roll(spectrum, (di, dj), axis=(0, 1))
    idx = np.argwhere(is_max)
    idx = idx[np.argsort(-spectrum[idx[:, 0], idx[:, 1]], kind="stable")][:k_hat]
    if len(idx) < k_hat:
        warnings.warn(f"found {len(idx)} local maxima, fewer than the model order {k_hat}", RuntimeWarning)
    d = 1.0 / spectrum
    out = []
    for i, j in idx:
        di = _parabolic(d[(i - 1) % P, j], d[i, j], d[(i + 1) % P, j])
        dj = _parabolic(d[i, (j - 1) % Q], d[i, j], d[i, (j + 1) % Q])
        out.append((((i + di) / P) % 1.0, ((j + dj) / Q) % 1.0))
    return out


def fit_amplitudes(z_hat: np.ndarray, peaks: Sequence[tuple[float, float]], M: int, N: int) -> np.ndarray:
    """Least-squares gains of the atom expansion via ridge-regularized normal equations."""
    if len(peaks) == 0:
        return np.zeros(0, dtype=complex)
    if len(peaks) > M * N:
        raise ValueError(f"{len(peaks)} peaks exceed the {M * N} available samples")
    A = atom_matrix([p[0] for p in peaks], [p[1] for p in peaks], M, N)
    gram = A.conj().T @ A
    if np.linalg.cond(gram) > 1.0 / RIDGE:
        warnings.warn("atom matrix is nearly rank deficient; amplitudes rely on the ridge term", RuntimeWarning)
    return np.linalg.solve(gram + RIDGE * np.eye(len(peaks)), A.conj().T @ np.asarray(z_hat))


def signed_phi(phi: float | np.ndarray) -> float | np.ndarray:
    """Map ``[0, 1)`` to ``(-1/2, 1/2]``."""
    phi = np.asarray(phi, dtype=float)
    out = np.where(phi > 0.5, phi - 1.0, phi)
    return float(out) if out.ndim == 0 else out


def velocity_of(phi: float | np.ndarray, cfg: OfdmConfig) -> float | np.ndarray:
    return signed_phi(phi) * SPEED_OF_LIGHT / (2 * cfg.T_bar * cfg.f_c)


def range_of(psi: float | np.ndarray, cfg: OfdmConfig) -> float | np.ndarray:
    return np.asarray(psi) / cfg.delta_f * SPEED_OF_LIGHT / 2


def classify_paths(peaks: Sequence[Peak], cfg: OfdmConfig, params: MusicParams = MusicParams()) -> list[Peak]:
    """Label each peak direct, clutter or target from its speed and delay.

    The delay test uses the wrapped distance of ``psi`` to zero so a direct
    path estimated just below 1 is still recognised.
    """
    psi_max = params.psi_threshold(cfg.N)
    out = []
    for p in peaks:
        slow = abs(velocity_of(p.phi, cfg)) < params.v_min
        near_zero = min(p.psi, 1.0 - p.psi) <= psi_max
        if slow and near_zero:
            kind = PathClass.DIRECT
        elif slow:
            kind = PathClass.CLUTTER
        else:
            kind = PathClass.TARGET
        out.append(Peak(p.phi, p.psi, p.alpha, kind))
    return out


def estimate_paths(U_hat: np.ndarray, z_fit: np.ndarray, cfg: OfdmConfig,
                   params: MusicParams = MusicParams(), keep_spectrum: bool = False) -> EstimateReport:
    """Full pipeline: spectrum, peaks, amplitudes, classes.

    ``z_fit`` is the vector the gains are fitted to. Passing
    ``conj(s_hat) * (r - e_hat)`` instead of the solver's ``z`` removes the
    shrinkage the regularizer puts on the amplitudes.
    """
    M, N = tp.dims_of(U_hat)
    spec, k = music_spectrum(U_hat, params)
    locs = pick_peaks(spec, k)
    alphas = fit_amplitudes(z_fit, locs, M, N)
    peaks = classify_paths([Peak(ph, ps, complex(a)) for (ph, ps), a in zip(locs, alphas)], cfg, params)
    return EstimateReport(peaks=peaks, k_hat=len(peaks), model_order=k, spectrum=spec if keep_spectrum else None)


def debiased_response(r: np.ndarray, s_hat: np.ndarray, e_hat: np.ndarray) -> np.ndarray:
    """``conj(s_hat) * (r - e_hat) / |s_hat|^2``, the data-consistent response."""
    return s_hat.conj() * (r - e_hat) / np.abs(s_hat) ** 2


PEAK_HEADER = ["phi", "psi", "range_m", "velocity_mps", "alpha_re", "alpha_im", "class"]


def peak_rows(report: EstimateReport, cfg: OfdmConfig) -> list[list]:
    return [[p.phi, p.psi, float(range_of(p.psi, cfg)), float(velocity_of(p.phi, cfg)),
             p.alpha.real, p.alpha.imag, p.kind.value] for p in report.peaks]


def write_spectrum_csv(path: str | Path, spectrum: np.ndarray, config=None, seed=None) -> None:
    P, Q = spectrum.shape
    rows = ((i / P, j / Q, spectrum[i, j]) for i in range(P) for j in range(Q))
    write_csv(path, ["phi", "psi", "value"], rows, config, seed)


def write_range_velocity_csv(path: str | Path, spectrum: np.ndarray, cfg: OfdmConfig,
                             config=None, seed=None) -> None:
    """Long-form grid in physical units, velocity ascending from the negative half."""
    P, Q = spectrum.shape
    order = np.argsort(signed_phi(np.arange(P) / P), kind="stable")
    rows = ((float(range_of(j / Q, cfg)), float(velocity_of(i / P, cfg)), spectrum[i, j])
            for i in order for j in range(Q))
    write_csv(path, ["range_m", "velocity_mps", "value"], rows, config, seed)
