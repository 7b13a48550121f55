"""sGS-ADMM and directly-extended ADMM for the atomic-norm SDP.

The problem solved is

    min  1/2 ||g||^2 + lam/(2MN) Tr T(U) + lam eps / 2 + mu ||e||_1 + delta_PSD(Theta)
    s.t. g = r - e - S z,   Theta = [[T(U), z], [z^H, eps]]

with ``S = diag(s_hat)``. Multipliers are ``beta`` (for the ``g`` constraint)
and ``Gamma`` (for the ``Theta`` coupling); inner products are real,
``<x, y> = Re(x^H y)``.

One sGS-ADMM iteration sweeps ``g -> e -> g`` over the first group and
``z -> eps -> U -> Theta -> U -> eps -> z`` over the second, then takes a
dual step of length ``varrho * rho``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import toeplitz as tp
from .proxops import psd_project, soft_threshold
from .scene import ReceivedData

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class SolverParams:
    """Penalty, step length, regularization and stopping controls.

    ``lam`` and ``mu`` default to ``sigma_reg * sqrt(MN log MN)`` and
    ``lam / sqrt(MN)``. ``fixed_steps`` runs exactly that many iterations and
    ignores ``tol``. ``kkt_variant`` selects the residual set used for
    stopping (see :func:`sgsradar.diagnostics.kkt_residuals`).
    """

    rho: float = 1.0
    varrho: float = 1.618
    sigma_reg: float = 0.1
    lam: float | None = None
    mu: float | None = None
    tol: float = 1e-4
    max_iter: int = 2000
    check_every: int = 1
    fixed_steps: int | None = None
    kkt_variant: str = "structured"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not 0.0 < self.varrho < GOLDEN:
            raise ValueError(f"step length must lie in (0, {GOLDEN:.10f}), got {self.varrho}")
        if self.sigma_reg < 0:
            raise ValueError("sigma_reg must be nonnegative")
        if self.check_every < 1 or self.max_iter < 1:
            raise ValueError("check_every and max_iter must be >= 1")
        if self.kkt_variant not in ("structured", "verbatim"):
            raise ValueError(f"unknown kkt_variant {self.kkt_variant!r}")

    def weights(self, M: int, N: int) -> tuple[float, float]:
        MN = M * N
        lam = self.lam if self.lam is not None else self.sigma_reg * math.sqrt(MN * math.log(MN))
        mu = self.mu if self.mu is not None else lam / math.sqrt(MN)
        return float(lam), float(mu)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class SolverState:
    e: np.ndarray
    g: np.ndarray
    z: np.ndarray
    eps: float
    U: np.ndarray
    Theta: np.ndarray
    beta: np.ndarray
    Gamma: np.ndarray

    @classmethod
    def zeros(cls, M: int, N: int) -> "SolverState":
        MN = M * N
        c = lambda *shape: np.zeros(shape, dtype=complex)  # noqa: E731
        return cls(e=c(MN), g=c(MN), z=c(MN), eps=0.0, U=c(*tp.coeff_shape(M, N)),
                   Theta=c(MN + 1, MN + 1), beta=c(MN), Gamma=c(MN + 1, MN + 1))

    @property
    def dims(self) -> tuple[int, int]:
        return tp.dims_of(self.U)

    def copy(self) -> "SolverState":
        return SolverState(self.e.copy(), self.g.copy(), self.z.copy(), float(self.eps), self.U.copy(),
                           self.Theta.copy(), self.beta.copy(), self.Gamma.copy())

    # partitions Theta = [[Theta0, theta1], [theta1^H, Theta_bar]], same for Gamma
    @property
    def Theta0(self):
        return self.Theta[:-1, :-1]

    @property
    def theta1(self):
        return self.Theta[:-1, -1]

    @property
    def Theta_bar(self) -> float:
        return float(self.Theta[-1, -1].real)

    @property
    def Gamma0(self):
        return self.Gamma[:-1, :-1]

    @property
    def gamma(self):
        return self.Gamma[:-1, -1]

    @property
    def Gamma_bar(self) -> float:
        return float(self.Gamma[-1, -1].real)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in
                   (self.e, self.g, self.z, self.eps, self.U, self.Theta, self.beta, self.Gamma))


def initial_state(M: int, N: int, lam: float) -> SolverState:
    """Zero primal point with ``Gamma = diag(lam/(2MN) I, lam/2)``.

    This multiplier satisfies the ``eps`` and ``U`` stationarity conditions
    exactly, so a zero signal is already a KKT point.
    """
    state = SolverState.zeros(M, N)
    d = np.full(M * N + 1, lam / (2 * M * N), dtype=complex)
    d[-1] = lam / 2
    state.Gamma = np.diag(d)
    return state


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    NUMERIC_FAILURE = "numeric_failure"


@dataclass(frozen=True)
class HistoryRecord:
    iter: int
    obj: float
    eta: tuple[float, float, float, float, float, float]
    eta_max: float
    seconds: float


HISTORY_HEADER = ["iter", "obj", "eta1", "eta2", "eta3", "eta4", "eta5", "eta6", "eta_max", "seconds"]


@dataclass
class Solution:
    state: SolverState
    iterations: int
    status: SolveStatus
    algorithm: str
    history: list[HistoryRecord] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED

    @property
    def final(self) -> HistoryRecord | None:
        return self.history[-1] if self.history else None

    def history_rows(self) -> list[list]:
        return [[h.iter, h.obj, *h.eta, h.eta_max, h.seconds] for h in self.history]


def coupling(U: np.ndarray, z: np.ndarray, eps: float) -> np.ndarray:
    """The matrix ``[[T(U), z], [z^H, eps]]``."""
    MN = z.size
    X = np.empty((MN + 1, MN + 1), dtype=complex)
    X[:-1, :-1] = tp.t_apply(U)
    X[:-1, -1] = z
    X[-1, :-1] = z.conj()
    X[-1, -1] = eps
    return X


def _rinner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b).real)


def objective(state: SolverState, data: ReceivedData, lam: float, mu: float) -> float:
    M, N = data.dims
    resid = data.r - state.e - data.s_hat * state.z
    trace_T = M * N * tp.get(state.U, 0, 0).real
    return (0.5 * _rinner(resid, resid) + lam / (2 * M * N) * trace_T + lam * state.eps / 2
            + mu * float(np.abs(state.e).sum()))


def aug_lagrangian(state: SolverState, data: ReceivedData, lam: float, mu: float, rho: float,
                   smooth_only: bool = False) -> float:
    """Augmented Lagrangian of the split problem, without the PSD indicator.

    ``smooth_only`` drops the ``mu ||e||_1`` term as well.
    """
    M, N = data.dims
    c = state.g - data.r + state.e + data.s_hat * state.z
    D = state.Theta - coupling(state.U, state.z, state.eps)
    val = (0.5 * _rinner(state.g, state.g) + lam / 2 * tp.get(state.U, 0, 0).real + lam * state.eps / 2
           + _rinner(state.beta, c) + _rinner(state.Gamma, D)
           + rho / 2 * _rinner(c, c) + rho / 2 * _rinner(D, D))
    if not smooth_only:
        val += mu * float(np.abs(state.e).sum())
    return val


def gradients(state: SolverState, data: ReceivedData, lam: float, rho: float) -> dict[str, np.ndarray]:
    """Partial gradients of the augmented Lagrangian in ``g, z, eps, U``.

    Complex gradients are ``d/dRe + i d/dIm``.
    """
    M, N = data.dims
    s = data.s_hat
    grad_g = (1 + rho) * state.g + state.beta - rho * (data.r - state.e - s * state.z)
    grad_z = (rho * s.conj() * (s * state.z + state.g - data.r + state.e + state.beta / rho)
              + 2 * rho * (state.z - state.theta1) - 2 * state.gamma)
    grad_eps = lam / 2 + rho * (state.eps - state.Theta_bar) - state.Gamma_bar
    w = tp.diagonal_weights(M, N)
    grad_U = w * (rho * state.U - tp.t_star(rho * state.Theta0 + state.Gamma0, M, N))
    grad_U[M - 1, N - 1] += lam / 2
    return {"g": grad_g, "z": grad_z, "eps": np.float64(grad_eps), "U": grad_U}


# closed-form block minimizers of the augmented Lagrangian

def _g_update(data, e, z, beta, rho):
    return rho / (1 + rho) * (data.r - e - data.s_hat * z) - beta / (1 + rho)


def _e_update(data, g, z, beta, mu, rho):
    return soft_threshold(data.r - g - data.s_hat * z - beta / rho, mu / rho)


def _z_update(data, g, e, beta, theta1, gamma, rho):
    s = data.s_hat
    rhs = s.conj() * (data.r - g - e - beta / rho) + 2 * theta1 + 2 * gamma / rho
    return rhs / (np.abs(s) ** 2 + 2)


def _eps_update(Theta, Gamma, lam, rho):
    return float(Gamma[-1, -1].real / rho + Theta[-1, -1].real - lam / (2 * rho))


def _U_update(Theta, Gamma, lam, rho, M, N):
    return tp.t_star(Theta[:-1, :-1] + Gamma[:-1, :-1] / rho, M, N) - lam / (2 * M * N * rho) * tp.identity_coeffs(M, N)


def step1_eg(state: SolverState, data: ReceivedData, params: SolverParams) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric sweep ``g -> e -> g`` with ``z, beta`` held at their current values."""
    _, mu = params.weights(*data.dims)
    rho = params.rho
    g_tmp = _g_update(data, state.e, state.z, state.beta, rho)
    e = _e_update(data, g_tmp, state.z, state.beta, mu, rho)
    g = _g_update(data, e, state.z, state.beta, rho)
    return e, g


def step2_zeUTheta(state: SolverState, data: ReceivedData, params: SolverParams):
    """Symmetric sweep ``z -> eps -> U -> Theta -> U -> eps -> z``.

    Uses ``state.e`` and ``state.g`` as the already-updated first group.
    Returns ``(z, eps, U, Theta)``.
    """
    M, N = data.dims
    lam, _ = params.weights(M, N)
    rho = params.rho
    Gamma = state.Gamma
    z_tmp = _z_update(data, state.g, state.e, state.beta, state.theta1, state.gamma, rho)
    eps_tmp = _eps_update(state.Theta, Gamma, lam, rho)
    U_tmp = _U_update(state.Theta, Gamma, lam, rho, M, N)
    Theta = psd_project(coupling(U_tmp, z_tmp, eps_tmp) - Gamma / rho)
    U = _U_update(Theta, Gamma, lam, rho, M, N)
    eps = _eps_update(Theta, Gamma, lam, rho)
    z = _z_update(data, state.g, state.e, state.beta, Theta[:-1, -1], state.gamma, rho)
    return z, eps, U, Theta


def update_multipliers(state: SolverState, data: ReceivedData, params: SolverParams):
    """Dual ascent step of length ``varrho * rho`` on both constraints."""
    step = params.varrho * params.rho
    beta = state.beta + step * (state.g - data.r + state.e + data.s_hat * state.z)
    Gamma = state.Gamma + step * (state.Theta - coupling(state.U, state.z, state.eps))
    return beta, Gamma


def sgs_iteration(state: SolverState, data: ReceivedData, params: SolverParams) -> SolverState:
    e, g = step1_eg(state, data, params)
    mid = replace(state, e=e, g=g)
    z, eps, U, Theta = step2_zeUTheta(mid, data, params)
    primal = replace(mid, z=z, eps=eps, U=U, Theta=Theta)
    beta, Gamma = update_multipliers(primal, data, params)
    return replace(primal, beta=beta, Gamma=Gamma)


def admm_iteration(state: SolverState, data: ReceivedData, params: SolverParams) -> SolverState:
    """One pass of the directly-extended ADMM, order ``z -> eps -> U -> e -> Theta``.

    Works on the unsplit problem (no ``g`` block): the fit term
    ``1/2 ||r - e - S z||^2`` enters the ``z`` and ``e`` updates directly and
    only ``Gamma`` is a multiplier. ``g`` is reported as the fit residual and
    ``beta`` stays zero.
    """
    M, N = data.dims
    lam, mu = params.weights(M, N)
    rho = params.rho
    s = data.s_hat
    Theta, Gamma = state.Theta, state.Gamma
    z = (s.conj() * (data.r - state.e) + 2 * rho * Theta[:-1, -1] + 2 * Gamma[:-1, -1]) / (np.abs(s) ** 2 + 2 * rho)
    eps = _eps_update(Theta, Gamma, lam, rho)
    U = _U_update(Theta, Gamma, lam, rho, M, N)
    e = soft_threshold(data.r - s * z, mu)
    Theta = psd_project(coupling(U, z, eps) - Gamma / rho)
    Gamma = Gamma + params.varrho * rho * (Theta - coupling(U, z, eps))
    g = data.r - e - s * z
    return SolverState(e=e, g=g, z=z, eps=eps, U=U, Theta=Theta, beta=np.zeros_like(state.beta), Gamma=Gamma)


def _run(iterate: Callable, name: str, data: ReceivedData, params: SolverParams,
         initial: SolverState | None) -> Solution:
    from .diagnostics import kkt_residuals

    M, N = data.dims
    lam, mu = params.weights(M, N)
    state = initial.copy() if initial is not None else initial_state(M, N, lam)
    limit = params.fixed_steps if params.fixed_steps is not None else params.max_iter
    history: list[HistoryRecord] = []
    status = SolveStatus.MAX_ITER
    t0 = time.perf_counter()
    k = 0
    for k in range(1, limit + 1):
        try:
            with np.errstate(all="ignore"):
                state = iterate(state, data, params)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            status = SolveStatus.NUMERIC_FAILURE
            break
        if not state.is_finite():
            status = SolveStatus.NUMERIC_FAILURE
            break
        if k % params.check_every and k != limit:
            continue
        rep = kkt_residuals(state, data, lam, mu, variant=params.kkt_variant)
        history.append(HistoryRecord(k, rep.objective, rep.etas, rep.eta_max, time.perf_counter() - t0))
        if params.fixed_steps is None and rep.eta_max <= params.tol:
            status = SolveStatus.CONVERGED
            break
    else:
        if history and history[-1].eta_max <= params.tol:
            status = SolveStatus.CONVERGED
    return Solution(state=state, iterations=k, status=status, algorithm=name, history=history)


def sgs_admm_solve(data: ReceivedData, params: SolverParams = SolverParams(),
                   initial: SolverState | None = None) -> Solution:
    """Run sGS-ADMM until the KKT residual drops below ``params.tol``."""
    return _run(sgs_iteration, "sgs_admm", data, params, initial)


def admm_solve(data: ReceivedData, params: SolverParams = SolverParams(),
               initial: SolverState | None = None) -> Solution:
    """Directly-extended ADMM baseline with the same stopping rule."""
    return _run(admm_iteration, "admm", data, params, initial)


ALGORITHMS = {"sgs_admm": sgs_admm_solve, "sgs": sgs_admm_solve, "admm": admm_solve}


# -- sGS decomposition check ------------------------------------------------
#
# Each sGS sweep should coincide with one joint minimization of the
# augmented Lagrangian over the whole group plus the proximal term
# 1/2 ||x - x^k||^2_T, T = Up D^-1 Up^T, where Up and D are the strictly
# upper and diagonal block parts of the group's Hessian. The check below
# builds that Hessian numerically from aug_lagrangian alone, forms T,
# and solves the joint problem by accelerated proximal gradient.

@dataclass
class _Block:
    name: str
    shape: tuple[int, ...]
    real: bool = False

    @property
    def size(self) -> int:
        n = int(np.prod(self.shape))
        return n if self.real else 2 * n


def _pack(blocks: Sequence[_Block], values: dict) -> np.ndarray:
    parts = []
    for b in blocks:
        v = np.asarray(values[b.name]).reshape(-1)
        parts.append(v.real.astype(float) if b.real else np.concatenate([v.real, v.imag]))
    return np.concatenate(parts)


def _unpack(blocks: Sequence[_Block], x: np.ndarray) -> dict:
    out, i = {}, 0
    for b in blocks:
        n = int(np.prod(b.shape))
        if b.real:
            v = x[i:i + n].reshape(b.shape) if b.shape else float(x[i])
            i += n
        else:
            v = (x[i:i + n] + 1j * x[i + n:i + 2 * n]).reshape(b.shape)
            i += 2 * n
        out[b.name] = v
    return out


def _quadratic_model(f: Callable[[np.ndarray], float], n: int,
                     H: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(H, h)`` of a quadratic ``f(x) = c + h.x + x.H.x/2`` by polarization.

    A known ``H`` skips the O(n^2) pair evaluations.
    """
    eye = np.eye(n)
    c = f(np.zeros(n))
    fp = np.array([f(eye[i]) for i in range(n)])
    fm = np.array([f(-eye[i]) for i in range(n)])
    h = (fp - fm) / 2
    if H is None:
        H = np.diag(fp + fm - 2 * c)
        for i in range(n):
            for j in range(i + 1, n):
                H[i, j] = H[j, i] = f(eye[i] + eye[j]) - fp[i] - fp[j] + c
    return H, h


# The group Hessian depends only on (s_hat, rho, blocks), never on the state,
# so repeated checks on one dataset reuse it.
_HESSIANS: dict[tuple, np.ndarray] = {}


def _sgs_operator(H: np.ndarray, blocks: Sequence[_Block]) -> np.ndarray:
    edges = np.cumsum([0] + [b.size for b in blocks])
    D = np.zeros_like(H)
    Up = np.zeros_like(H)
    for a in range(len(blocks)):
        sa = slice(edges[a], edges[a + 1])
        D[sa, sa] = H[sa, sa]
        for b in range(a + 1, len(blocks)):
            sb = slice(edges[b], edges[b + 1])
            Up[sa, sb] = H[sa, sb]
    return Up @ np.linalg.solve(D, Up.T)


def _prox_gradient(H: np.ndarray, h: np.ndarray, prox: Callable[[np.ndarray, float], np.ndarray],
                   x0: np.ndarray, tol: float = 1e-14, max_iter: int = 200_000) -> np.ndarray:
    """FISTA with adaptive restart for ``min x.H.x/2 + h.x + p(x)``."""
    L = float(np.linalg.eigvalsh(H)[-1])
    x = y = x0.copy()
    t = 1.0
    for _ in range(max_iter):
        x_new = prox(y - (H @ y + h) / L, 1.0 / L)
        if np.linalg.norm(x_new - x) <= tol * (1.0 + np.linalg.norm(x)):
            return x_new
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        if np.dot(y - x_new, x_new - x) > 0:
            t_new, y = 1.0, x_new
        else:
            y = x_new + (t - 1) / t_new * (x_new - x)
        x, t = x_new, t_new
    return x


def _joint_solve(state: SolverState, data: ReceivedData, params: SolverParams,
                 blocks: Sequence[_Block], prox) -> dict:
    lam, mu = params.weights(*data.dims)
    names = [b.name for b in blocks]

    def f(x):
        vals = _unpack(blocks, x)
        return aug_lagrangian(replace(state, **vals), data, lam, mu, params.rho, smooth_only=True)

    n = sum(b.size for b in blocks)
    key = (data.s_hat.tobytes(), params.rho, tuple(names))
    H, h = _quadratic_model(f, n, _HESSIANS.get(key))
    _HESSIANS[key] = H
    T = _sgs_operator(H, blocks)
    xk = _pack(blocks, {k: getattr(state, k) for k in names})
    x = _prox_gradient(H + T, h - T @ xk, lambda v, step: prox(v, step, mu), xk)
    return _unpack(blocks, x)


def _l1_prox_packed(n_complex: int):
    def prox(v, step, mu):
        out = v.copy()
        re, im = v[:n_complex], v[n_complex:2 * n_complex]
        mag = np.hypot(re, im)
        scale = np.where(mag > step * mu, 1 - step * mu / np.where(mag > 0, mag, 1.0), 0.0)
        out[:n_complex] = re * scale
        out[n_complex:2 * n_complex] = im * scale
        return out
    return prox


def _psd_prox_packed(dim: int):
    n = dim * dim

    def prox(v, step, mu):
        out = v.copy()
        X = (v[:n] + 1j * v[n:2 * n]).reshape(dim, dim)
        X = (X + X.conj().T) / 2
        w, V = scipy.linalg.eigh(X)
        P = (V * np.maximum(w, 0.0)) @ V.conj().T
        out[:n] = P.real.ravel()
        out[n:2 * n] = P.imag.ravel()
        return out
    return prox


def sgs_equivalence_check(state: SolverState, data: ReceivedData, params: SolverParams,
                          step: int | None = None) -> float:
    """Max-abs gap between an sGS sweep and the equivalent joint proximal solve.

    ``step=1`` checks the ``(e, g)`` sweep, ``step=2`` the
    ``(z, eps, U, Theta)`` sweep (with ``state.e, state.g`` taken as already
    updated); ``None`` returns the larger of the two.
    """
    M, N = data.dims
    MN = M * N
    if MN > 20:
        raise ValueError(f"equivalence check builds a dense Hessian; needs MN <= 20, got {MN}")
    if step is None:
        return max(sgs_equivalence_check(state, data, params, 1), sgs_equivalence_check(state, data, params, 2))
    if step == 1:
        blocks = [_Block("e", (MN,)), _Block("g", (MN,))]
        joint = _joint_solve(state, data, params, blocks, _l1_prox_packed(MN))
        e, g = step1_eg(state, data, params)
        return float(max(np.abs(e - joint["e"]).max(), np.abs(g - joint["g"]).max()))
    if step == 2:
        blocks = [_Block("Theta", (MN + 1, MN + 1)), _Block("U", tp.coeff_shape(M, N)),
                  _Block("eps", (), real=True), _Block("z", (MN,))]
        joint = _joint_solve(state, data, params, blocks, _psd_prox_packed(MN + 1))
        z, eps, U, Theta = step2_zeUTheta(state, data, params)
        return float(max(np.abs(z - joint["z"]).max(), abs(eps - joint["eps"]),
                         np.abs(U - joint["U"]).max(), np.abs(Theta - joint["Theta"]).max()))
    raise ValueError(f"step must be 1, 2 or None, got {step}")
