import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgsradar.scene import (NormalizedPath, OfdmConfig, PathClass, PathParams, Scene, corrupt_bits,
                            doppler_from_speed, load_scene, normalized_to_physical,
                            physical_to_normalized, qpsk_modulate, save_scene, scene_random,
                            separated_targets, sigma_for_snr, steering_atom, synthesize_received,
                            synthesize_response, wrapped_distance)

from oracles import response_loop

seeds = st.integers(0, 2**32 - 1)
unit = st.floats(0, 1, exclude_max=True)
R2 = math.sqrt(2)


@pytest.mark.parametrize("bits,sym", [((0, 0), (1 + 1j) / R2), ((0, 1), (-1 + 1j) / R2),
                                      ((1, 1), (-1 - 1j) / R2), ((1, 0), (1 - 1j) / R2)])
def test_qpsk_gray_map(bits, sym):
    assert np.isclose(qpsk_modulate(bits)[0], sym, atol=1e-15)


def test_qpsk_errors():
    with pytest.raises(ValueError):
        qpsk_modulate([0, 1, 1])
    with pytest.raises(ValueError):
        qpsk_modulate([0, 1, 1, 0], count=3)
    with pytest.raises(ValueError):
        qpsk_modulate([0, 2])


@given(seeds)
def test_qpsk_unit_modulus(seed):
    s = qpsk_modulate(np.random.default_rng(seed).integers(0, 2, 40))
    np.testing.assert_allclose(np.abs(s), 1.0, atol=1e-15)


def test_corrupt_bits_zero_rate(rng):
    bits = rng.integers(0, 2, 1000)
    np.testing.assert_array_equal(corrupt_bits(bits, 0.0, rng), bits)


def test_corrupt_bits_half_rate_concentrates(rng):
    bits = np.zeros(10**6, dtype=np.int64)
    frac = corrupt_bits(bits, 0.5, rng).mean()
    assert abs(frac - 0.5) <= 0.002


def test_corrupt_bits_deterministic_and_validated():
    bits = np.arange(100) % 2
    a = corrupt_bits(bits, 0.2, np.random.default_rng(7))
    b = corrupt_bits(bits, 0.2, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        corrupt_bits(bits, 0.6, np.random.default_rng(0))


def test_steering_atom_examples():
    np.testing.assert_allclose(steering_atom(0, 0, 2, 2), np.ones(4))
    np.testing.assert_allclose(steering_atom(0.5, 0, 2, 1), [1, -1], atol=1e-15)
    with pytest.raises(ValueError):
        steering_atom(1.0, 0.0, 2, 2)


@given(unit, unit, st.integers(1, 6), st.integers(1, 6))
def test_steering_atom_is_vec_of_rank_one(phi, psi, M, N):
    a = steering_atom(phi, psi, M, N)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)
    b = np.exp(2j * np.pi * phi * np.arange(M))
    g = np.exp(2j * np.pi * psi * np.arange(N))
    np.testing.assert_allclose(a, np.outer(b, g.conj()).reshape(-1, order="F"), atol=1e-12)


def test_response_examples():
    np.testing.assert_allclose(synthesize_response([NormalizedPath(0, 0, 1)], 3, 2), np.ones(6))
    pair = [NormalizedPath(0.3, 0.7, 1 + 2j), NormalizedPath(0.3, 0.7, -1 - 2j)]
    np.testing.assert_allclose(synthesize_response(pair, 4, 3), 0, atol=1e-14)
    np.testing.assert_array_equal(synthesize_response([], 2, 3), np.zeros(6))


@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 8), seeds)
def test_response_matches_entrywise_oracle(M, N, K, seed):
    rng = np.random.default_rng(seed)
    paths = [NormalizedPath(rng.random(), rng.random(), complex(*rng.standard_normal(2))) for _ in range(K)]
    z = synthesize_response(paths, M, N)
    ref = response_loop([(p.phi, p.psi, p.alpha) for p in paths], M, N)
    assert np.linalg.norm(z - ref) <= 1e-12 * max(1.0, np.linalg.norm(ref))


def _scene(ber=0.0, sigma=0.0, seed=3):
    cfg = OfdmConfig(6, 5)
    return scene_random(2, 3, cfg, rng=seed, ber=ber, noise_sigma=sigma), cfg


def test_received_perfect_demodulation():
    scene, cfg = _scene()
    data = synthesize_received(scene, cfg)
    t = data.truth
    np.testing.assert_array_equal(t.e, 0)
    np.testing.assert_allclose(data.r, data.s_hat * t.z, atol=1e-14)
    np.testing.assert_allclose(data.r * data.s_hat.conj(), t.z, atol=1e-12)


def test_received_error_support_matches_symbol_errors():
    scene, cfg = _scene(ber=0.2)
    data = synthesize_received(scene, cfg)
    t = data.truth
    wrong = ~np.isclose(t.s, data.s_hat)
    assert wrong.any()
    np.testing.assert_array_equal(np.abs(t.e) > 0, wrong)
    np.testing.assert_allclose(t.e, data.r - data.s_hat * t.z, atol=1e-12)


def test_received_error_density_at_ber_0_1():
    # two independent bit flips per symbol: P(symbol wrong) = 1 - 0.9^2 = 0.19
    cfg = OfdmConfig(8, 8)
    paths = [PathParams(0.0, 0.0, 1.0 / cfg.T, PathClass.DIRECT)]
    fracs = [np.mean(np.abs(synthesize_received(Scene(paths, rng_seed=s, ber=0.1), cfg).truth.e) > 0)
             for s in range(300)]
    assert abs(np.mean(fracs) - 0.19) <= 0.01


def test_received_noise_level():
    scene, cfg = _scene(sigma=0.3)
    cfg = OfdmConfig(40, 40)
    scene.paths = scene.paths[:1]
    data = synthesize_received(scene, cfg)
    v = data.r - data.truth.s * data.truth.z
    assert abs(np.std(v) - 0.3) <= 0.02


def test_received_deterministic():
    scene, cfg = _scene(ber=0.1, sigma=0.1)
    a, b = synthesize_received(scene, cfg), synthesize_received(scene, cfg)
    np.testing.assert_array_equal(a.r, b.r)
    np.testing.assert_array_equal(a.s_hat, b.s_hat)


def test_physical_to_normalized_examples():
    cfg = OfdmConfig(4, 4)
    d = physical_to_normalized(PathParams(0.0, 0.0, 1.0, PathClass.DIRECT), cfg)
    assert (d.phi, d.psi) == (0.0, 0.0)
    assert physical_to_normalized(PathParams(0.0, 1 / cfg.T_bar, 1.0), cfg).phi == pytest.approx(0.0, abs=1e-12)
    p = physical_to_normalized(PathParams(1e-5, 100.0, 2.0), cfg)
    assert p.phi == pytest.approx(0.03, abs=1e-15)
    assert p.psi == pytest.approx(0.05, abs=1e-15)
    assert p.alpha == pytest.approx(2.0 * cfg.T)


def test_physical_round_trip_signed_doppler():
    cfg = OfdmConfig(4, 4)
    path = PathParams(3e-5, -40.0, 5000 + 100j)
    back = normalized_to_physical(physical_to_normalized(path, cfg), cfg)
    assert back.f == pytest.approx(-40.0)
    assert back.tau == pytest.approx(3e-5)
    assert back.A == pytest.approx(path.A)


def test_clutter_doppler_arithmetic():
    assert doppler_from_speed(-3.0, 2e9) == pytest.approx(-40.0, abs=1e-12)


def test_scene_random_counts():
    cfg = OfdmConfig(16, 50)
    sc = scene_random(5, 100, cfg, rng=1)
    assert len(sc.paths) == 106
    assert sc.count(PathClass.DIRECT) == 1 and sc.count(PathClass.TARGET) == 5
    only = scene_random(0, 0, cfg, rng=1)
    assert [p.kind for p in only.paths] == [PathClass.DIRECT]
    assert only.paths[0].tau == 0 and only.paths[0].f == 0


def test_scene_random_clutter_speed_bound():
    cfg = OfdmConfig(8, 8)
    sc = scene_random(3, 50, cfg, rng=2)
    fmax = doppler_from_speed(3.0, cfg.f_c)
    assert all(abs(p.f) <= fmax for p in sc.paths if p.kind is PathClass.CLUTTER)


def test_validation():
    with pytest.raises(ValueError):
        PathParams(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        PathParams(1e-6, 0.0, 1.0, PathClass.DIRECT)
    with pytest.raises(ValueError):
        Scene([], ber=0.7)
    with pytest.raises(ValueError):
        OfdmConfig(0, 3)
    with pytest.raises(ValueError):
        NormalizedPath(1.0, 0.0, 1)


def test_scene_json_round_trip(tmp_path):
    scene, cfg = _scene(ber=0.05, sigma=0.01)
    save_scene(tmp_path / "s.json", scene, cfg)
    back, cfg2 = load_scene(tmp_path / "s.json")
    assert cfg2 == cfg
    assert back.to_dict() == scene.to_dict()


@given(seeds)
def test_separated_targets_respect_spacing(seed):
    cfg = OfdmConfig(8, 8)
    paths = [physical_to_normalized(p, cfg) for p in separated_targets(3, cfg, np.random.default_rng(seed), 0.25)]
    for i in range(3):
        assert wrapped_distance(paths[i].phi, 0.0) >= 0.05 - 1e-12
        for j in range(i):
            assert wrapped_distance(paths[i].phi, paths[j].phi) >= 0.25 - 1e-12
            assert wrapped_distance(paths[i].psi, paths[j].psi) >= 0.25 - 1e-12


def test_sigma_for_snr():
    z = np.full(100, 2.0 + 0j)
    assert sigma_for_snr(z, 0.0) == pytest.approx(2.0)
    assert sigma_for_snr(z, 20.0) == pytest.approx(0.2)
