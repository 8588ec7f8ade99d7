import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfisac.errors import ArgumentError
from cfisac.fisher import (
    RankDeficiencyWarning,
    approx_path_info,
    build_sensing_model,
    d_coefficients,
    efim,
    fim_fd_oracle,
    jacobian,
    path_fim,
    peb,
    v_matrix,
)
from cfisac.harness.experiments import random_tiny_path
from cfisac.otfs import OtfsGrid, ambiguity_moments
from cfisac.scenario import SPEED_OF_LIGHT, SimParams, assign_modes, generate_scenario, path_geometry

F_C = 38e9
LAM = SPEED_OF_LIGHT / F_C


def test_v_matrix_examples():
    h = np.ones((1, 2)) / np.sqrt(2)
    assert np.allclose(v_matrix(h, [2.0]), [[1, 1], [1, 1]])
    assert np.allclose(v_matrix(h, [0.0]), 0)
    b = np.exp(1j * np.array([[0.0, 0.3, 1.1]])) / np.sqrt(3)
    v = v_matrix(b, [0.7])
    assert np.vdot(b[0], v @ b[0]).real == pytest.approx(0.7)
    with pytest.raises(ArgumentError):
        v_matrix(h, [1.0, 2.0])
    with pytest.raises(ArgumentError):
        v_matrix(h, [-1.0])


def test_path_fim_single_antenna_and_symmetry(rng):
    geom, beta, _, grid = random_tiny_path(rng, 1)
    mom = ambiguity_moments(geom.delay, geom.doppler, grid)
    f = path_fim(geom, beta, np.eye(1), mom, 1, 1.0)
    assert f[0, 0] == 0.0
    geom, beta, v, grid = random_tiny_path(rng, 3)
    f = path_fim(geom, beta, v, ambiguity_moments(geom.delay, geom.doppler, grid), 3, 0.5)
    assert np.array_equal(f, f.T)
    assert np.linalg.eigvalsh(f).min() > -1e-9 * np.abs(f).max()
    with pytest.raises(ArgumentError):
        path_fim(geom, beta, v, ambiguity_moments(geom.delay, geom.doppler, grid), 3, 0.0)


@pytest.mark.parametrize("m_t", [2, 3])
def test_path_fim_matches_fd_oracle(m_t, rng):
    for _ in range(3):
        geom, beta, v, grid = random_tiny_path(rng, m_t)
        f = path_fim(geom, beta, v, ambiguity_moments(geom.delay, geom.doppler, grid), m_t, 1.0)
        f_fd = fim_fd_oracle(geom, beta, v, grid, m_t, 1.0)
        mask = np.abs(f_fd) > 1e-12 * np.linalg.norm(f_fd)
        assert np.max(np.abs(f[mask] - f_fd[mask]) / np.abs(f_fd[mask])) < 1e-4


def test_fd_oracle_converges_second_order(rng):
    geom, beta, v, grid = random_tiny_path(rng, 2)
    f = path_fim(geom, beta, v, ambiguity_moments(geom.delay, geom.doppler, grid), 2, 1.0)
    e1 = np.abs(fim_fd_oracle(geom, beta, v, grid, 2, 1.0, step=4e-2) - f).max()
    e2 = np.abs(fim_fd_oracle(geom, beta, v, grid, 2, 1.0, step=2e-2) - f).max()
    assert 3.0 <= e1 / e2 <= 5.0


def test_fd_oracle_warnings(rng):
    geom, beta, v, grid = random_tiny_path(rng, 2)
    with pytest.warns(UserWarning):
        fim_fd_oracle(geom, beta, v, grid, 2, 1.0, step=1e-10)


def test_efim_examples():
    f = np.zeros((6, 6))
    f[:4, :4] = np.diag([1.0, 2, 3, 4])
    f[4:, 4:] = np.eye(2)
    assert np.allclose(efim(f), np.diag([1.0, 2, 3, 4]))
    # 1+1 split embedded: F1 = 2, F12 = 1, F2 = 1 -> 1
    g = np.eye(6)
    g[0, 0], g[0, 4], g[4, 0], g[4, 4] = 2.0, 1.0, 1.0, 1.0
    assert efim(g)[0, 0] == pytest.approx(1.0)


def test_efim_psd_and_dominated(rng):
    for _ in range(20):
        a = rng.normal(size=(6, 6))
        f = a @ a.T
        e = efim(f)
        assert np.linalg.eigvalsh(e).min() > -1e-9
        assert np.linalg.eigvalsh(f[:4, :4] - e).min() > -1e-9


def test_efim_singular_block_warns():
    f = np.eye(6)
    f[4:, 4:] = 0.0
    with pytest.warns(RankDeficiencyWarning):
        efim(f)


def test_jacobian_examples():
    g = path_geometry((50, 50), (100, 0), (0, 0), (0, 0), (1, 0), (0, 1), F_C)
    j = jacobian(g, (1, 0), (0, 1), (0, 0), LAM)
    assert np.allclose(j[3], 0)
    assert np.allclose(j[0], (0, np.pi / 100))
    with pytest.raises(ArgumentError):
        jacobian(g, (1, 0), (0, 1), (0, 0), LAM, convention="other")


def _fd_rows(p_tx, p_rx, p_t, v_t, u_tx, u_rx, h=1e-4):
    def params(p):
        g = path_geometry(p_tx, p_rx, p, v_t, u_tx, u_rx, F_C)
        return np.array([g.aoa, g.aod, g.delay, g.doppler])

    p_t = np.asarray(p_t, float)
    cols = []
    for e in np.eye(2):
        cols.append((params(p_t + h * e) - params(p_t - h * e)) / (2 * h))
    return np.stack(cols, axis=1)


def test_jacobian_sign_discrepancy_documented():
    """The printed rows disagree with the gradient on the transmitter-side terms."""
    args = ((-80.0, 30.0), (60.0, -40.0), (5.0, 12.0), (20.0, -9.0), (0.6, 0.8), (-0.8, 0.6))
    g = path_geometry(*args[:4], args[4], args[5], F_C)
    fd = _fd_rows(*args)
    grad = jacobian(g, args[4], args[5], args[3], LAM, "gradient")
    printed = jacobian(g, args[4], args[5], args[3], LAM, "printed")
    for row in range(4):
        assert np.allclose(grad[row], fd[row], rtol=1e-5, atol=1e-7 * np.abs(fd[row]).max())
    assert np.allclose(printed[0], fd[0], rtol=1e-5, atol=0.0)
    # delay row differs: printed (rho_tr + rho_pt)/c, gradient (rho_tr - rho_pt)/c
    assert not np.allclose(printed[2], fd[2], rtol=1e-3, atol=0.0)
    assert np.allclose(printed[2] - grad[2], 2 * g.rho_pt / SPEED_OF_LIGHT)


def test_peb_examples(rng):
    assert peb(np.diag([4.0, 4.0])) == pytest.approx((0.5, np.sqrt(0.5)))
    assert peb(np.eye(2))[1] == pytest.approx(np.sqrt(2))
    assert peb(np.zeros((2, 2))) == (float("inf"), float("inf"))
    for _ in range(20):
        a = rng.normal(size=(2, 2))
        f = a @ a.T + 1e-3 * np.eye(2)
        assert peb(f)[0] == pytest.approx(np.trace(np.linalg.inv(f)), rel=1e-12)


def test_position_fim_identity_example():
    j = np.array([[1.0, 0], [0, 1], [0, 0], [0, 0]])
    assert np.allclose(j.T @ np.eye(4) @ j, np.eye(2))


def test_d_coefficients():
    grid = OtfsGrid(4, 4, 5e5)
    mom = ambiguity_moments(0.3e-6, 0.0, grid)
    d11, d22, d33, d44 = d_coefficients(mom, 1)
    assert d11 == 0 and d22 == 0
    assert d33 > 0 and d44 > 0


def _desk_model(seed, t_g=2, m_t=4):
    p = SimParams(n_ap=10, m_t=m_t, k_u=3, t_g=t_g, n_rx_per_target=2, area_side=100.0)
    grid = OtfsGrid(16, 16, 5e5, 1e-6)
    sc = assign_modes(generate_scenario(p, seed), 2)
    return p, build_sensing_model(sc, p, grid, seed)


def test_approx_upper_bounds_exact():
    for seed in range(10):
        p, sm = _desk_model(seed)
        eta = np.full((sm.n_tx, sm.t_g), 0.5)
        v = sm.tx_covariances(eta)
        for t in range(sm.t_g):
            pe = peb(sm.position_fim_exact(t, v))[1]
            pa = peb(sm.position_fim_approx(t, eta))[1]
            assert pa >= pe - 1e-9


@pytest.mark.parametrize("c", [0.25, 4.0])
def test_power_scaling(c):
    p, sm = _desk_model(3)
    eta = np.random.default_rng(0).uniform(0.1, 1.0, size=(sm.n_tx, sm.t_g))
    for t in range(sm.t_g):
        base_e = peb(sm.position_fim_exact(t, sm.tx_covariances(eta)))[1]
        base_a = peb(sm.position_fim_approx(t, eta))[1]
        assert peb(sm.position_fim_exact(t, sm.tx_covariances(c * eta)))[1] == pytest.approx(base_e / np.sqrt(c), rel=1e-10)
        assert peb(sm.position_fim_approx(t, c * eta))[1] == pytest.approx(base_a / np.sqrt(c), rel=1e-10)


def test_adding_receiver_never_hurts():
    p, sm = _desk_model(5, t_g=1)
    eta = np.full((sm.n_tx, 1), 0.5)
    v = sm.tx_covariances(eta)
    paths = sm.paths_for(0)
    from cfisac.fisher import efim as _efim

    f_all = np.zeros((2, 2))
    f_sub = np.zeros((2, 2))
    first_rx = paths[0].rx
    for path in paths:
        contrib = path.jac.T @ _efim(path_fim(path.geometry, path.beta, v[path.tx], path.moments, sm.m_t, sm.noise_power)) @ path.jac
        f_all += contrib
        if path.rx == first_rx:
            f_sub += contrib
    assert np.linalg.eigvalsh(f_all - f_sub).min() >= -1e-9 * np.abs(f_all).max()
    assert peb(f_all)[1] <= peb(f_sub)[1]


def test_d22_residual_reported():
    """Under exact pointing the exact AoD information after the Schur complement is tiny, not exactly 0."""
    p, sm = _desk_model(1, t_g=1)
    eta = np.full((sm.n_tx, 1), 1.0)
    v = sm.tx_covariances(eta)
    path = sm.paths[0]
    e = efim(path_fim(path.geometry, path.beta, v[path.tx], path.moments, sm.m_t, sm.noise_power))
    assert abs(e[1, 1]) <= 1e-6 * np.abs(e).max()


def test_expected_gain_mode_and_pointing_error():
    p = SimParams(n_ap=10, m_t=4, k_u=3, t_g=1, area_side=100.0)
    grid = OtfsGrid(16, 16, 5e5, 1e-6)
    sc = assign_modes(generate_scenario(p, 0), 2)
    sm = build_sensing_model(sc, p, grid, 0, gain_mode="expected")
    for path in sm.paths:
        assert abs(path.beta) ** 2 == pytest.approx(p.rcs_variance * path.geometry.radar_gain)
    off = build_sensing_model(sc, p, grid, 0, pointing_error_std=0.05)
    assert not np.allclose(off.sensing_beams, sm.sensing_beams)
    with pytest.raises(ArgumentError):
        build_sensing_model(sc, p, grid, 0, gain_mode="bogus")
