from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgsradar import toeplitz as tp
from sgsradar.proxops import psd_project
from sgsradar.scene import OfdmConfig, ReceivedData, Scene, separated_targets, steering_atom, synthesize_received
from sgsradar.solver import (GOLDEN, HISTORY_HEADER, SolverParams, SolverState, SolveStatus, _eps_update,
                             _U_update, _z_update, admm_iteration, admm_solve, aug_lagrangian, coupling,
                             gradients, initial_state, objective, sgs_admm_solve, sgs_equivalence_check,
                             sgs_iteration, step1_eg, step2_zeUTheta, update_multipliers)

from oracles import (aug_lagrangian_naive, central_gradient, crandn, objective_naive, random_data,
                     random_state)

seeds = st.integers(0, 2**32 - 1)
small_dims = st.tuples(st.integers(1, 3), st.integers(1, 3))


def _pair(seed, M=3, N=3):
    rng = np.random.default_rng(seed)
    return random_state(rng, M, N), random_data(rng, M, N)


# -- parameters ---------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"varrho": 0.0}, {"varrho": GOLDEN}, {"rho": 0.0}, {"rho": -1.0},
                                {"check_every": 0}, {"kkt_variant": "other"}, {"sigma_reg": -0.1}])
def test_params_reject_invalid(kw):
    with pytest.raises(ValueError):
        SolverParams(**kw)


def test_params_weight_rule():
    lam, mu = SolverParams(sigma_reg=0.1).weights(8, 8)
    assert lam == pytest.approx(0.1 * np.sqrt(64 * np.log(64)))
    assert mu == pytest.approx(lam / 8)
    assert SolverParams(lam=2.0, mu=0.5).weights(8, 8) == (2.0, 0.5)


def test_params_dict_round_trip():
    p = SolverParams(rho=0.7, tol=1e-5, fixed_steps=10)
    assert SolverParams.from_dict(p.to_dict()) == p


# -- objective and augmented Lagrangian -----------------------------------------

def test_objective_trivial_values(rng):
    M, N = 2, 3
    zero = SolverState.zeros(M, N)
    r = crandn(rng, M * N)
    s = np.ones(M * N, dtype=complex)
    assert objective(zero, ReceivedData(np.zeros(6), s, M, N), 1.0, 1.0) == 0.0
    assert objective(zero, ReceivedData(r, s, M, N), 1.0, 1.0) == pytest.approx(0.5 * np.vdot(r, r).real)


@given(small_dims, seeds)
def test_objective_matches_naive(mn, seed):
    M, N = mn
    rng = np.random.default_rng(seed)
    st_, data = random_state(rng, M, N), random_data(rng, M, N)
    got = objective(st_, data, 0.7, 0.3)
    assert got == pytest.approx(objective_naive(st_, data.r, data.s_hat, 0.7, 0.3, M, N), rel=1e-12)


@given(small_dims, seeds, st.floats(0.1, 5))
def test_aug_lagrangian_matches_naive(mn, seed, rho):
    M, N = mn
    rng = np.random.default_rng(seed)
    st_, data = random_state(rng, M, N), random_data(rng, M, N)
    got = aug_lagrangian(st_, data, 0.7, 0.3, rho)
    ref = aug_lagrangian_naive(st_, data.r, data.s_hat, 0.7, 0.3, rho, M, N)
    assert got == pytest.approx(ref, rel=1e-12)


def test_aug_lagrangian_feasible_point_equals_objective(rng):
    M, N = 2, 2
    st_, data = random_state(rng, M, N), random_data(rng, M, N)
    st_.beta[:] = 0
    st_.Gamma[:] = 0
    st_.g = data.r - st_.e - data.s_hat * st_.z
    st_.Theta = coupling(st_.U, st_.z, st_.eps)
    assert aug_lagrangian(st_, data, 0.7, 0.3, 2.0) == pytest.approx(objective(st_, data, 0.7, 0.3), rel=1e-12)


def test_aug_lagrangian_zero_state(rng):
    data = random_data(rng, 2, 2)
    val = aug_lagrangian(SolverState.zeros(2, 2), data, 0.7, 0.3, 2.5)
    assert val == pytest.approx(2.5 / 2 * np.vdot(data.r, data.r).real, rel=1e-12)


# -- gradients ---------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    st_, data = _pair(seed)
    lam, mu, rho = 0.9, 0.2, 1.3
    grads = gradients(st_, data, lam, rho)

    def along(name):
        return lambda v: aug_lagrangian(replace(st_, **{name: v}), data, lam, mu, rho)

    for name in ("g", "z", "U"):
        fd = central_gradient(along(name), getattr(st_, name))
        assert np.linalg.norm(grads[name] - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd)), name
    fd_eps = central_gradient(lambda v: along("eps")(float(v[0])), np.array([st_.eps]))[0]
    assert abs(grads["eps"] - fd_eps) <= 1e-6 * max(1.0, abs(fd_eps))


# -- Step 1 -----------------------------------------------------------------------------

def test_step1_origin_fixed():
    M, N = 2, 2
    data = ReceivedData(np.zeros(4), np.ones(4), M, N)
    e, g = step1_eg(SolverState.zeros(M, N), data, SolverParams())
    assert not e.any() and not g.any()


def test_step1_total_shrinkage(rng):
    st_, data = random_state(rng, 2, 3), random_data(rng, 2, 3)
    p = SolverParams(rho=1.5, lam=1.0, mu=1e9)
    e, g = step1_eg(st_, data, p)
    assert not e.any()
    expect = 1.5 / 2.5 * (data.r - data.s_hat * st_.z) - st_.beta / 2.5
    np.testing.assert_allclose(g, expect, atol=1e-12)


@given(seeds, st.floats(0.1, 5))
def test_step1_stationarity(seed, rho):
    st_, data = _pair(seed, 2, 3)
    p = SolverParams(rho=rho)
    e, g = step1_eg(st_, data, p)
    resid = (1 + rho) * g + st_.beta - rho * (data.r - e - data.s_hat * st_.z)
    assert np.abs(resid).max() <= 1e-10 * (1 + np.abs(st_.beta).max() + rho * np.abs(data.r).max())


# -- Step 2 -----------------------------------------------------------------------------

def test_step2_u_tilde_without_lambda(rng):
    st_ = random_state(rng, 2, 2)
    Gamma = np.zeros_like(st_.Gamma)
    U = _U_update(st_.Theta, Gamma, 0.0, 1.0, 2, 2)
    np.testing.assert_allclose(U, tp.t_star(st_.Theta[:-1, :-1], 2, 2), atol=0)


@given(seeds, st.floats(0.2, 4))
def test_step2_updates_are_stationary(seed, rho):
    st_, data = _pair(seed, 2, 3)
    p = SolverParams(rho=rho, lam=0.8, mu=0.2)
    lam = 0.8
    z, eps, U, Theta = step2_zeUTheta(st_, data, p)
    new = replace(st_, z=z, eps=eps, U=U, Theta=Theta)
    grads = gradients(new, data, lam, rho)
    scale = 1 + np.abs(st_.Gamma).max() + rho * np.abs(Theta).max() + np.abs(data.r).max()
    for name in ("z", "eps", "U"):
        assert np.abs(grads[name]).max() <= 1e-9 * scale * 10, name
    # Theta: projection of the temporary coupling matrix
    z_t = _z_update(data, st_.g, st_.e, st_.beta, st_.theta1, st_.gamma, rho)
    eps_t = _eps_update(st_.Theta, st_.Gamma, lam, rho)
    U_t = _U_update(st_.Theta, st_.Gamma, lam, rho, 2, 3)
    Y = coupling(U_t, z_t, eps_t) - st_.Gamma / rho
    Yh = (Y + Y.conj().T) / 2
    assert np.linalg.eigvalsh(Theta).min() >= -1e-8 * np.linalg.norm(Theta)
    assert np.linalg.eigvalsh(Yh - Theta).max() <= 1e-9 * (1 + np.linalg.norm(Y))
    assert abs(np.vdot(Yh - Theta, Theta).real) <= 1e-9 * (1 + np.linalg.norm(Y) ** 2)


# -- multipliers ---------------------------------------------------------------------------

def test_multipliers_unchanged_at_feasible_point(rng):
    st_, data = random_state(rng, 2, 2), random_data(rng, 2, 2)
    st_.g = data.r - st_.e - data.s_hat * st_.z
    st_.Theta = coupling(st_.U, st_.z, st_.eps)
    beta, Gamma = update_multipliers(st_, data, SolverParams())
    np.testing.assert_allclose(beta, st_.beta, atol=1e-13)
    np.testing.assert_allclose(Gamma, st_.Gamma, atol=1e-13)


@given(seeds, st.floats(0.1, 5))
def test_multiplier_step_unit_length(seed, rho):
    st_, data = _pair(seed, 2, 2)
    beta, Gamma = update_multipliers(st_, data, SolverParams(rho=rho, varrho=1.0))
    np.testing.assert_allclose(beta - st_.beta, rho * (st_.g - data.r + st_.e + data.s_hat * st_.z), atol=1e-12)
    np.testing.assert_allclose(Gamma - st_.Gamma, rho * (st_.Theta - coupling(st_.U, st_.z, st_.eps)), atol=1e-12)


# -- fixed points ----------------------------------------------------------------------------

def _kkt_point(M=2, N=3, phi=0.3, psi=0.6):
    a = steering_atom(phi, psi, M, N)
    s = np.exp(2j * np.pi * np.arange(M * N) / 7)
    data = ReceivedData(s * a, s, M, N)
    v = np.append(a, 1.0)
    Theta = np.outer(v, v.conj())
    st_ = SolverState.zeros(M, N)
    st_.z, st_.eps, st_.U, st_.Theta = a.copy(), 1.0, tp.t_star(Theta[:-1, :-1], M, N), Theta
    return st_, data


@pytest.mark.parametrize("iteration", [sgs_iteration, admm_iteration])
def test_kkt_point_is_fixed(iteration):
    st_, data = _kkt_point()
    np.testing.assert_allclose(coupling(st_.U, st_.z, st_.eps), st_.Theta, atol=1e-14)
    p = SolverParams(lam=0.0, mu=0.1)
    out = iteration(st_, data, p)
    for name in ("e", "g", "z", "U", "Theta", "beta", "Gamma"):
        np.testing.assert_allclose(getattr(out, name), getattr(st_, name), atol=1e-10, err_msg=name)
    assert out.eps == pytest.approx(st_.eps, abs=1e-10)


def test_warm_start_zero_point_is_fixed():
    M, N = 2, 3
    lam = 0.5
    data = ReceivedData(np.zeros(M * N), np.ones(M * N), M, N)
    st_ = initial_state(M, N, lam)
    out = sgs_iteration(st_, data, SolverParams(lam=lam, mu=0.1))
    for name in ("e", "g", "z", "U", "Theta", "beta", "Gamma"):
        np.testing.assert_allclose(getattr(out, name), getattr(st_, name), atol=1e-14, err_msg=name)


# -- full solves --------------------------------------------------------------------------------

@pytest.mark.parametrize("solve", [sgs_admm_solve, admm_solve])
def test_zero_data_converges_immediately(solve):
    data = ReceivedData(np.zeros(16), np.ones(16), 4, 4)
    sol = solve(data, SolverParams())
    assert sol.status is SolveStatus.CONVERGED and sol.iterations == 1
    assert sol.final.eta_max == 0.0
    assert not sol.state.z.any() and not sol.state.U.any() and sol.state.eps == 0


@pytest.fixture(scope="module")
def desk_k2():
    cfg = OfdmConfig(8, 8)
    rng = np.random.default_rng(0)
    paths = separated_targets(2, cfg, rng, 2 / 8, amp=(4.0, 6.0))
    return synthesize_received(Scene(paths, rng_seed=0), cfg)


def test_desk_two_targets_recovered(desk_k2):
    sol = sgs_admm_solve(desk_k2, SolverParams(rho=0.3, tol=1e-4, max_iter=2000))
    assert sol.converged and sol.iterations <= 2000
    z = desk_k2.truth.z
    assert np.linalg.norm(sol.state.z - z) <= 1e-2 * np.linalg.norm(z)
    iters = [h.iter for h in sol.history]
    assert iters == sorted(set(iters))
    assert sol.final.eta_max <= 1e-4


def test_admm_desk_two_targets_converges(desk_k2):
    sol = admm_solve(desk_k2, SolverParams(tol=1e-3))
    assert sol.converged


def test_solve_is_deterministic(desk_k2):
    p = SolverParams(fixed_steps=15)
    a, b = sgs_admm_solve(desk_k2, p), sgs_admm_solve(desk_k2, p)
    strip = lambda sol: [row[:-1] for row in sol.history_rows()]  # noqa: E731
    assert strip(a) == strip(b)
    np.testing.assert_array_equal(a.state.Theta, b.state.Theta)


def test_fixed_steps_and_history_layout(desk_k2):
    sol = admm_solve(desk_k2, SolverParams(fixed_steps=7, check_every=3))
    assert sol.iterations == 7
    assert [h.iter for h in sol.history] == [3, 6, 7]
    assert len(sol.history_rows()[0]) == len(HISTORY_HEADER)


def test_max_iter_status(desk_k2):
    sol = sgs_admm_solve(desk_k2, SolverParams(tol=1e-12, max_iter=5))
    assert sol.status is SolveStatus.MAX_ITER and sol.iterations == 5


def test_theta_stays_psd(desk_k2):
    st_ = initial_state(8, 8, SolverParams().weights(8, 8)[0])
    for _ in range(10):
        st_ = sgs_iteration(st_, desk_k2, SolverParams())
        assert np.linalg.eigvalsh(st_.Theta).min() >= -1e-8 * np.linalg.norm(st_.Theta)


def test_numeric_failure_is_reported():
    data = ReceivedData(np.full(4, np.nan), np.ones(4), 2, 2)
    sol = sgs_admm_solve(data, SolverParams())
    assert sol.status is SolveStatus.NUMERIC_FAILURE


# -- sGS decomposition ----------------------------------------------------------------------------

def test_equivalence_zero_state():
    data = ReceivedData(np.zeros(4), np.ones(4), 2, 2)
    assert sgs_equivalence_check(SolverState.zeros(2, 2), data, SolverParams()) <= 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_equivalence_random_small(seed):
    st_, data = _pair(seed, 2, 2)
    assert sgs_equivalence_check(st_, data, SolverParams(rho=0.8), step=1) <= 1e-8
    assert sgs_equivalence_check(st_, data, SolverParams(rho=0.8), step=2) <= 1e-8


def test_equivalence_rejects_large_instances():
    data = ReceivedData(np.zeros(25), np.ones(25), 5, 5)
    with pytest.raises(ValueError):
        sgs_equivalence_check(SolverState.zeros(5, 5), data, SolverParams())
    with pytest.raises(ValueError):
        sgs_equivalence_check(SolverState.zeros(2, 2), ReceivedData(np.zeros(4), np.ones(4), 2, 2),
                              SolverParams(), step=3)


def test_psd_projection_used_in_step2_matches_module(rng):
    st_, data = random_state(rng, 2, 2), random_data(rng, 2, 2)
    p = SolverParams()
    _, _, _, Theta = step2_zeUTheta(st_, data, p)
    np.testing.assert_allclose(Theta, psd_project(Theta), atol=1e-10)
