"""Small instance builders shared by the tests."""

import numpy as np

from cfisac.comm import channel_stats, stats_from_covariances
from cfisac.fisher import build_sensing_model
from cfisac.optimizer import SolverConfig, _Problem
from cfisac.otfs import OtfsGrid
from cfisac.scenario import SimParams, assign_modes, generate_scenario, link_gains


def desk_instance(seed, n_ap=8, k_u=4, t_g=2, m_t=4, area=100.0, n_rx=1, m=16, n=16):
    grid = OtfsGrid(m, n, 5e5, 1e-6)
    params = SimParams(n_ap=n_ap, m_t=m_t, k_u=k_u, t_g=t_g, n_rx_per_target=n_rx, area_side=area)
    sc = assign_modes(generate_scenario(params, seed), n_rx)
    sm = build_sensing_model(sc, params, grid, seed)
    gains = link_gains(sc, params, seed)
    stats = channel_stats(sc, params, grid, gains.comm, sm.sensing_beams, seed)
    return params, grid, sm, stats, sm.approx_info()


def min_crlb(params, stats, info):
    prob = _Problem(stats, info, params.noise_power, params.p_d, 1.0)
    return prob.sensing_optimum(SolverConfig())[0]


def scalar_stats(b, a, b_t=None, a_t=None):
    """One AP, one user, optional one target, built from scalar coefficients."""
    from cfisac.comm import LinkStats

    t_g = 0 if b_t is None else 1
    return LinkStats(
        n_paths=np.ones((1, 1), int),
        n_physical=np.ones((1, 1), int),
        cov=np.zeros((1, 1, 1, 1), complex),
        b_users=np.array([[b]], float),
        b_targets=np.full((1, t_g), 1.0 if b_t is None else b_t),
        a_users=np.array([[[a]]], float),
        a_targets=np.full((1, 1, t_g), 0.0 if a_t is None else a_t),
    )
