"""Synthetic OFDM passive-radar scenes and received data.

The received grid follows the matched-filter model

    r_m(n) = s_m(n) z_m(n) + v_m(n),   z_m(n) = sum_k alpha_k exp(i 2pi (m phi_k - n psi_k))

for block ``m < M`` and subcarrier ``n < N``. Grids are vectorized column
major, so entry ``(m, n)`` lives at index ``n * M + m``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 3.0e8


class PathClass(str, enum.Enum):
    TARGET = "target"
    CLUTTER = "clutter"
    DIRECT = "direct"


@dataclass(frozen=True)
class OfdmConfig:
    """OFDM frame layout: ``M`` blocks of ``N`` subcarriers.

    ``T`` is the useful symbol length and ``T_cp`` the cyclic prefix, both in
    seconds; ``f_c`` is the carrier frequency in Hz.
    """

    M: int
    N: int
    T: float = 200e-6
    T_cp: float = 100e-6
    f_c: float = 2e9

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError(f"need M, N >= 1, got ({self.M}, {self.N})")
        if not self.T > 0 or self.T_cp < 0:
            raise ValueError("need T > 0 and T_cp >= 0")

    @property
    def delta_f(self) -> float:
        return 1.0 / self.T

    @property
    def T_bar(self) -> float:
        return self.T + self.T_cp

    @property
    def size(self) -> int:
        return self.M * self.N

    def to_dict(self) -> dict:
        return {"M": self.M, "N": self.N, "T": self.T, "T_cp": self.T_cp, "f_c": self.f_c}

    @classmethod
    def from_dict(cls, d: dict) -> "OfdmConfig":
        return cls(M=int(d["M"]), N=int(d["N"]), T=float(d.get("T", 200e-6)),
                   T_cp=float(d.get("T_cp", 100e-6)), f_c=float(d.get("f_c", 2e9)))


@dataclass(frozen=True)
class PathParams:
    """One propagation path: delay ``tau`` (s), Doppler ``f`` (Hz), complex gain ``A``."""

    tau: float
    f: float
    A: complex
    kind: PathClass = PathClass.TARGET

    def __post_init__(self):
        object.__setattr__(self, "kind", PathClass(self.kind))
        if self.tau < 0:
            raise ValueError(f"delay must be nonnegative, got {self.tau}")
        if self.kind is PathClass.DIRECT and self.tau != 0:
            raise ValueError("the direct path has zero delay")

    def to_dict(self) -> dict:
        A = complex(self.A)
        return {"tau": self.tau, "f": self.f, "A": [A.real, A.imag], "class": self.kind.value}

    @classmethod
    def from_dict(cls, d: dict) -> "PathParams":
        re, im = d["A"]
        return cls(tau=float(d["tau"]), f=float(d["f"]), A=complex(re, im), kind=PathClass(d["class"]))


@dataclass(frozen=True)
class NormalizedPath:
    phi: float
    psi: float
    alpha: complex
    kind: PathClass = PathClass.TARGET

    def __post_init__(self):
        if not (0.0 <= self.phi < 1.0 and 0.0 <= self.psi < 1.0):
            raise ValueError(f"normalized coordinates must lie in [0, 1), got ({self.phi}, {self.psi})")


@dataclass
class Scene:
    paths: list[PathParams]
    rng_seed: int = 0
    noise_sigma: float = 0.0
    ber: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ber <= 0.5:
            raise ValueError(f"bit-error rate must lie in [0, 0.5], got {self.ber}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")

    def count(self, kind: PathClass) -> int:
        return sum(p.kind is kind for p in self.paths)

    def to_dict(self) -> dict:
        return {"paths": [p.to_dict() for p in self.paths], "rng_seed": self.rng_seed,
                "noise_sigma": self.noise_sigma, "ber": self.ber}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(paths=[PathParams.from_dict(p) for p in d["paths"]], rng_seed=int(d["rng_seed"]),
                   noise_sigma=float(d["noise_sigma"]), ber=float(d["ber"]))


@dataclass
class Truth:
    z: np.ndarray
    e: np.ndarray
    s: np.ndarray
    paths: list[NormalizedPath]


@dataclass
class ReceivedData:
    """Observed vector ``r`` and demodulated symbols ``s_hat`` (length ``M*N``)."""

    r: np.ndarray
    s_hat: np.ndarray
    M: int
    N: int
    truth: Truth | None = field(default=None, repr=False)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=complex)
        self.s_hat = np.asarray(self.s_hat, dtype=complex)
        n = self.M * self.N
        if self.r.shape != (n,) or self.s_hat.shape != (n,):
            raise ValueError(f"r and s_hat must have length M*N = {n}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.M, self.N


def _frac(x: float) -> float:
    y = x - math.floor(x)
    return 0.0 if y >= 1.0 else y


def qpsk_modulate(bits: Sequence[int] | np.ndarray, count: int | None = None) -> np.ndarray:
    """Gray-mapped QPSK: 00 -> (1+i)/sqrt2, 01 -> (-1+i)/sqrt2, 11 -> (-1-i)/sqrt2, 10 -> (1-i)/sqrt2."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % 2 or (count is not None and bits.size != 2 * count):
        raise ValueError(f"QPSK needs an even number of bits (2 per symbol), got {bits.size}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    first, second = bits[0::2], bits[1::2]
    return ((1 - 2 * second) + 1j * (1 - 2 * first)) / math.sqrt(2.0)


def corrupt_bits(bits: np.ndarray, ber: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each bit independently with probability ``ber``."""
    if not 0.0 <= ber <= 0.5:
        raise ValueError(f"bit-error rate must lie in [0, 0.5], got {ber}")
    bits = np.asarray(bits, dtype=np.int64)
    flips = rng.random(bits.shape) < ber
    return bits ^ flips.astype(np.int64)


def steering_atom(phi: float, psi: float, M: int, N: int) -> np.ndarray:
    """Atom ``conj(g(psi)) kron b(phi)``: entry ``n*M + m`` is ``exp(i2pi(m phi - n psi))``."""
    if not (0.0 <= phi < 1.0 and 0.0 <= psi < 1.0):
        raise ValueError(f"normalized coordinates must lie in [0, 1), got ({phi}, {psi})")
    b = np.exp(2j * np.pi * phi * np.arange(M))
    g = np.exp(2j * np.pi * psi * np.arange(N))
    return np.kron(g.conj(), b)


def atom_matrix(phis: Iterable[float], psis: Iterable[float], M: int, N: int) -> np.ndarray:
    """Stack steering atoms as columns (``MN x K``); no range check, any real input."""
    phis = np.asarray(list(phis), dtype=float)
    psis = np.asarray(list(psis), dtype=float)
    m = np.arange(M)[:, None, None]
    n = np.arange(N)[None, :, None]
    A = np.exp(2j * np.pi * (m * phis - n * psis))
    return A.reshape(M * N, -1, order="F")


def synthesize_response(paths: Sequence[NormalizedPath], M: int, N: int) -> np.ndarray:
    if not paths:
        return np.zeros(M * N, dtype=complex)
    A = atom_matrix([p.phi for p in paths], [p.psi for p in paths], M, N)
    return A @ np.array([p.alpha for p in paths], dtype=complex)


def physical_to_normalized(path: PathParams, cfg: OfdmConfig) -> NormalizedPath:
    return NormalizedPath(phi=_frac(path.f * cfg.T_bar), psi=_frac(cfg.delta_f * path.tau),
                          alpha=complex(path.A) * cfg.T, kind=path.kind)


def normalized_to_physical(path: NormalizedPath, cfg: OfdmConfig) -> PathParams:
    """Inverse of :func:`physical_to_normalized` on the principal branch.

    Doppler uses the signed reading ``phi in (1/2, 1) -> phi - 1``.
    """
    phi = path.phi - 1.0 if path.phi > 0.5 else path.phi
    tau = path.psi / cfg.delta_f
    if path.kind is PathClass.DIRECT:
        tau = 0.0
    return PathParams(tau=tau, f=phi / cfg.T_bar, A=complex(path.alpha) / cfg.T, kind=path.kind)


def synthesize_received(scene: Scene, cfg: OfdmConfig) -> ReceivedData:
    """Draw symbols, demodulation errors and noise for ``scene``.

    Returns ``r = s * z + v`` together with the demodulated symbols ``s_hat``;
    the implied demodulation error is ``e = (s - s_hat) * z``.
    """
    M, N = cfg.M, cfg.N
    rng = np.random.default_rng(scene.rng_seed)
    bits = rng.integers(0, 2, size=2 * M * N)
    s = qpsk_modulate(bits)
    s_hat = qpsk_modulate(corrupt_bits(bits, scene.ber, rng))
    noise = rng.standard_normal(M * N) + 1j * rng.standard_normal(M * N)
    v = scene.noise_sigma / math.sqrt(2.0) * noise

    paths = [physical_to_normalized(p, cfg) for p in scene.paths]
    z = synthesize_response(paths, M, N)
    r = s * z + v
    e = (s - s_hat) * z
    return ReceivedData(r=r, s_hat=s_hat, M=M, N=N, truth=Truth(z=z, e=e, s=s, paths=paths))


def sigma_for_snr(z: np.ndarray, snr_db: float) -> float:
    """Per-entry noise std giving ``SNR = ||z||^2 / (MN sigma^2)`` in dB."""
    power = float(np.vdot(z, z).real) / z.size
    return math.sqrt(power / 10.0 ** (snr_db / 10.0))


@dataclass(frozen=True)
class SceneRanges:
    """Sampling intervals for :func:`scene_random`.

    Amplitude intervals bound the normalized magnitude ``|alpha| = |A| T``.
    """

    range_m: tuple[float, float] = (0.0, 30e3)
    target_speed: tuple[float, float] = (-148.0, 148.0)
    clutter_speed: tuple[float, float] = (-3.0, 3.0)
    target_amp: tuple[float, float] = (0.5, 1.5)
    clutter_amp: tuple[float, float] = (0.5, 1.5)
    direct_factor: float = 10.0

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRanges":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def doppler_from_speed(v: float, f_c: float) -> float:
    return 2.0 * v * f_c / SPEED_OF_LIGHT


def delay_from_range(R: float) -> float:
    return 2.0 * R / SPEED_OF_LIGHT


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _gain(rng: np.random.Generator, mag_alpha: float, cfg: OfdmConfig) -> complex:
    return mag_alpha * np.exp(2j * np.pi * rng.random()) / cfg.T


def scene_random(n_targets: int, n_clutter: int, cfg: OfdmConfig,
                 rng: np.random.Generator | int = 0, ranges: SceneRanges = SceneRanges(),
                 noise_sigma: float = 0.0, ber: float = 0.0, max_retries: int = 100) -> Scene:
    """Random scene with one direct path, ``n_clutter`` clutter and ``n_targets`` targets."""
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    if seed is None:
        seed = int(rng.integers(0, 2**31 - 1))

    clutter = []
    for _ in range(n_clutter):
        tau = delay_from_range(rng.uniform(*ranges.range_m))
        f = doppler_from_speed(rng.uniform(*ranges.clutter_speed), cfg.f_c)
        clutter.append(PathParams(tau, f, _gain(rng, _log_uniform(rng, *ranges.clutter_amp), cfg),
                                  PathClass.CLUTTER))

    targets: list[PathParams] = []
    taken: list[NormalizedPath] = []
    for _ in range(n_targets):
        for _attempt in range(max_retries):
            tau = delay_from_range(rng.uniform(*ranges.range_m))
            f = doppler_from_speed(rng.uniform(*ranges.target_speed), cfg.f_c)
            A = _gain(rng, _log_uniform(rng, *ranges.target_amp), cfg)
            cand = PathParams(tau, f, A, PathClass.TARGET)
            nc = physical_to_normalized(cand, cfg)
            if all(wrapped_distance(nc.phi, t.phi) > 1e-6 and wrapped_distance(nc.psi, t.psi) > 1e-6
                   for t in taken):
                targets.append(cand)
                taken.append(nc)
                break
        else:
            raise RuntimeError(f"could not place {n_targets} distinct targets in {max_retries} tries")

    top = max((abs(p.A) for p in targets), default=ranges.target_amp[1] / cfg.T)
    direct = PathParams(0.0, 0.0, ranges.direct_factor * top * np.exp(2j * np.pi * rng.random()),
                        PathClass.DIRECT)
    return Scene(paths=[direct, *clutter, *targets], rng_seed=int(seed),
                 noise_sigma=noise_sigma, ber=ber)


def wrapped_distance(a: float | np.ndarray, b: float | np.ndarray) -> float | np.ndarray:
    """Distance on the unit circle ``[0, 1)``."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


def separated_targets(K: int, cfg: OfdmConfig, rng: np.random.Generator, min_sep: float,
                      amp: tuple[float, float] = (0.5, 1.5), min_abs_phi: float = 0.05,
                      max_retries: int = 10_000) -> list[PathParams]:
    """Draw ``K`` targets whose normalized coordinates are pairwise ``min_sep`` apart.

    Separation is the wrapped distance, required in each coordinate separately.
    ``min_abs_phi`` keeps the signed Doppler away from zero so the paths read as
    moving targets.
    """
    out: list[NormalizedPath] = []
    tries = 0
    for _ in range(max_retries):
        if len(out) == K:
            break
        if tries >= 200:
            # an unlucky early draw can leave no room; start over
            out, tries = [], 0
        tries += 1
        phi = float(rng.random())
        psi = float(rng.random())
        if wrapped_distance(phi, 0.0) < min_abs_phi:
            continue
        if any(wrapped_distance(phi, p.phi) < min_sep or wrapped_distance(psi, p.psi) < min_sep for p in out):
            continue
        mag = _log_uniform(rng, *amp)
        out.append(NormalizedPath(phi, psi, mag * np.exp(2j * np.pi * rng.random())))
        tries = 0
    if len(out) < K:
        raise RuntimeError(f"could not place {K} targets with separation {min_sep}")
    return [normalized_to_physical(p, cfg) for p in out]


def save_scene(path: str | Path, scene: Scene, cfg: OfdmConfig) -> None:
    doc = {"ofdm": cfg.to_dict(), "scene": scene.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scene(path: str | Path) -> tuple[Scene, OfdmConfig]:
    doc = json.loads(Path(path).read_text())
    return Scene.from_dict(doc["scene"]), OfdmConfig.from_dict(doc["ofdm"])
