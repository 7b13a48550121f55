"""Relative KKT residuals and estimate scoring.

Six residuals measure optimality of the split SDP:

    eta1  z-stationarity          eta4  eps-stationarity   |lam/2 - Gamma_bar|
    eta2  e-stationarity          eta5  U-stationarity     ||T*(Gamma0) - lam/(2MN) I||
    eta3  PSD complementarity     eta6  coupling           ||Theta - [[T(U), z], [z^H, eps]]||

``variant="verbatim"`` evaluates eta1 and eta2 literally as

    eta1 = ||z - r + e - 2 gamma|| / (1 + ||z|| + 2 ||gamma||)
    eta2 = ||e - Prox_mu(e - z)|| / (1 + ||e|| + ||r - e - z||)

which ignores the symbol matrix ``S``. ``variant="structured"`` uses the
conditions that actually hold at a solution for general ``S``:

    eta1 = ||S^H (S z - r + e) - 2 gamma|| / (1 + ||z|| + 2 ||gamma||)
    eta2 = ||e - Prox_mu(r - S z)|| / (1 + ||e|| + ||r - e - S z||)

The remaining four are shared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import toeplitz as tp
from .proxops import psd_project, soft_threshold

if TYPE_CHECKING:
    from .scene import NormalizedPath, ReceivedData
    from .solver import SolverState


@dataclass(frozen=True)
class KktReport:
    eta1: float
    eta2: float
    eta3: float
    eta4: float
    eta5: float
    eta6: float
    objective: float

    @property
    def etas(self) -> tuple[float, float, float, float, float, float]:
        return (self.eta1, self.eta2, self.eta3, self.eta4, self.eta5, self.eta6)

    @property
    def eta_max(self) -> float:
        return max(self.etas)


def _norm(x) -> float:
    return float(np.linalg.norm(np.ravel(x)))


def kkt_residuals(state: "SolverState", data: "ReceivedData", lam: float, mu: float,
                  variant: str = "verbatim") -> KktReport:
    from .solver import coupling, objective

    M, N = data.dims
    MN = M * N
    r, s = data.r, data.s_hat
    e, z, eps = state.e, state.z, state.eps
    Theta, Gamma = state.Theta, state.Gamma
    gamma = Gamma[:-1, -1]
    Gamma_bar = Gamma[-1, -1]

    if variant == "verbatim":
        eta1 = _norm(z - r + e - 2 * gamma) / (1 + _norm(z) + 2 * _norm(gamma))
        eta2 = _norm(e - soft_threshold(e - z, mu)) / (1 + _norm(e) + _norm(r - e - z))
    elif variant == "structured":
        eta1 = _norm(s.conj() * (s * z - r + e) - 2 * gamma) / (1 + _norm(z) + 2 * _norm(gamma))
        eta2 = _norm(e - soft_threshold(r - s * z, mu)) / (1 + _norm(e) + _norm(r - e - s * z))
    else:
        raise ValueError(f"unknown variant {variant!r}")

    eta3 = _norm(Theta - psd_project(Theta - Gamma)) / (1 + _norm(Theta) + _norm(Gamma))
    eta4 = abs(lam / 2 - Gamma_bar) / (1 + abs(eps) + abs(Gamma_bar))
    TG = tp.t_star(Gamma[:-1, :-1], M, N)
    eta5 = _norm(TG - lam / (2 * MN) * tp.identity_coeffs(M, N)) / (1 + _norm(state.U) + _norm(TG))
    eta6 = _norm(Theta - coupling(state.U, z, eps))
    return KktReport(eta1, eta2, eta3, eta4, eta5, eta6, objective(state, data, lam, mu))


@dataclass
class MatchTable:
    """Greedy one-to-one matching between estimates and truth.

    ``pairs`` holds ``(estimate index, truth index)``.
    """

    pairs: list[tuple[int, int]]
    misses: list[int]
    ghosts: list[int]

    @property
    def true_positives(self) -> int:
        return len(self.pairs)


def score_estimates(estimates: Sequence[tuple[float, float]], truth: Sequence["NormalizedPath"] | Sequence[tuple[float, float]],
                    tol_phi: float, tol_psi: float) -> MatchTable:
    """Match estimated ``(phi, psi)`` to true paths, nearest pair first.

    A pair is admissible when the wrapped distance is within tolerance on
    both axes; unmatched truths are misses, unmatched estimates ghosts.
    """
    from .scene import wrapped_distance

    tpos = [(p.phi, p.psi) if hasattr(p, "phi") else tuple(p) for p in truth]
    cands = []
    for i, (ph, ps) in enumerate(estimates):
        for j, (tph, tps) in enumerate(tpos):
            dphi = float(wrapped_distance(ph, tph))
            dpsi = float(wrapped_distance(ps, tps))
            if dphi <= tol_phi and dpsi <= tol_psi:
                cands.append((np.hypot(dphi / tol_phi, dpsi / tol_psi), i, j))
    cands.sort()
    used_e, used_t, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        pairs.append((i, j))
    return MatchTable(pairs=sorted(pairs),
                      misses=[j for j in range(len(tpos)) if j not in used_t],
                      ghosts=[i for i in range(len(estimates)) if i not in used_e])
