import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfisac.errors import ArgumentError, ConfigurationError, ResourceLimitError
from cfisac.otfs import (
    MOMENT_ORDERS,
    OtfsGrid,
    ambiguity_moments,
    delay_offsets,
    delay_taps,
    derive_grid,
    psi_tensor,
    psi_value,
    r_moment,
)


def grid_of(m, n, tau_max=0.0):
    return OtfsGrid(m, n, 5e5, tau_max)


# ---- grid


def test_reference_grid_bandwidth_and_cp():
    g = derive_grid(128, 128, 5e5, 2e-6)
    assert g.n_cp == 128
    assert g.bandwidth == pytest.approx(64e6)
    assert g.t_sym == pytest.approx(2e-6)
    assert g.t_sym * g.delta_f == pytest.approx(1.0)


def test_cp_zero_and_snapping():
    assert derive_grid(128, 128, 5e5, 0.0).n_cp == 0
    # 1e-6 * 128 * 5e5 is 64 up to rounding and must not become 65
    assert derive_grid(128, 128, 5e5, 1e-6).n_cp == 64


def test_grid_resolutions():
    g = derive_grid(16, 8, 1e6)
    assert g.delay_resolution == pytest.approx(1 / 16e6)
    assert g.doppler_resolution == pytest.approx(1e6 / 8)


@pytest.mark.parametrize("m,n,df,tau", [(0, 4, 1.0, 0.0), (4, 0, 1.0, 0.0), (4, 4, 0.0, 0.0), (4, 4, 1.0, -1.0)])
def test_grid_rejects_bad_values(m, n, df, tau):
    with pytest.raises(ConfigurationError):
        OtfsGrid(m, n, df, tau)


def test_delay_taps_on_boundary_and_offsets():
    g = grid_of(8, 4)
    assert delay_taps(3 * g.delay_resolution, g) == 3
    assert delay_taps(3.2 * g.delay_resolution, g) == 4
    assert delay_taps(0.0, g) == 0
    off = delay_offsets(3.2 * g.delay_resolution, g)
    assert off[3] == pytest.approx(3 * g.delay_resolution)
    assert off[4] == pytest.approx(4 * g.delay_resolution - g.t_sym)
    with pytest.raises(ArgumentError):
        delay_taps(-1e-9, g)


# ---- psi


def test_psi_identity_point():
    g = grid_of(4, 4)
    assert psi_value(1, 1, 2, 2, 0.0, 0.0, g) == pytest.approx(1.0)


def test_psi_orthogonal_doppler_bins():
    g = grid_of(4, 4)
    assert abs(psi_value(0, 1, 2, 2, 0.0, 0.0, g)) < 1e-14


def test_psi_hand_value():
    g = grid_of(1, 2)
    nu = 0.5 / (g.n * g.t_sym)
    assert psi_value(0, 0, 0, 0, 0.0, nu, g) == pytest.approx((1 + 1j) / 2, abs=1e-14)


def test_psi_index_and_order_errors():
    g = grid_of(4, 4)
    with pytest.raises(ArgumentError):
        psi_value(4, 0, 0, 0, 0.0, 0.0, g)
    with pytest.raises(ArgumentError):
        psi_value(0, 0, 0, 0, 0.0, 0.0, g, order="d_beta")
    with pytest.raises(ArgumentError):
        psi_value(0, 0, 0, 0, -1e-9, 0.0, g)


def test_psi_tensor_matches_entrywise(rng):
    g = grid_of(4, 3)
    tau = 1.7 * g.delay_resolution
    nu = 0.37 * g.doppler_resolution
    psi, dt, dn = psi_tensor(tau, nu, g)
    for _ in range(20):
        k, kp = rng.integers(g.n, size=2)
        l, lp = rng.integers(g.m, size=2)
        assert psi[k, kp, l, lp] == pytest.approx(psi_value(k, kp, l, lp, tau, nu, g), abs=1e-14)
        assert dt[k, kp, l, lp] == pytest.approx(psi_value(k, kp, l, lp, tau, nu, g, "d_tau"), rel=1e-12, abs=1e-6)
        assert dn[k, kp, l, lp] == pytest.approx(psi_value(k, kp, l, lp, tau, nu, g, "d_nu"), rel=1e-12, abs=1e-12)


@given(
    m=st.integers(1, 6),
    n=st.integers(1, 6),
    tau_frac=st.floats(0.0, 0.999),
    nu_frac=st.floats(-2.0, 2.0),
    data=st.data(),
)
def test_psi_magnitude_bounded(m, n, tau_frac, nu_frac, data):
    g = grid_of(m, n)
    k = data.draw(st.integers(0, n - 1))
    kp = data.draw(st.integers(0, n - 1))
    l = data.draw(st.integers(0, m - 1))
    lp = data.draw(st.integers(0, m - 1))
    tau = tau_frac * m * g.delay_resolution
    nu = nu_frac * n * g.doppler_resolution
    assert abs(psi_value(k, kp, l, lp, tau, nu, g)) <= 1.0 + 1e-12


@given(l0=st.integers(0, 3), k0=st.integers(0, 3), k=st.integers(0, 3), l=st.integers(0, 3))
def test_on_grid_path_hits_single_bin(l0, k0, k, l):
    g = grid_of(4, 4)
    if l0 + l > g.m - 1:
        return
    tau = l0 * g.delay_resolution
    nu = k0 * g.doppler_resolution
    kp = (k - k0) % g.n
    # the peak sits at l' with l' - l + l0 = 0
    assert abs(psi_value(k, kp, l + l0, l, tau, nu, g)) == pytest.approx(1.0, abs=1e-12)
    assert ambiguity_moments(tau, nu, g, "brute").r00.real == pytest.approx(g.m * g.n)


def _fd_errors(order, idx, tau, nu, g, h):
    k, kp, l, lp = idx
    exact = psi_value(k, kp, l, lp, tau, nu, g, order)

    def fd(step):
        if order == "d_tau":
            return (psi_value(k, kp, l, lp, tau + step, nu, g) - psi_value(k, kp, l, lp, tau - step, nu, g)) / (2 * step)
        return (psi_value(k, kp, l, lp, tau, nu + step, g) - psi_value(k, kp, l, lp, tau, nu - step, g)) / (2 * step)

    return abs(fd(h) - exact), abs(fd(h / 2) - exact)


@pytest.mark.parametrize("order", ["d_tau", "d_nu"])
def test_derivatives_second_order(order, rng):
    g = grid_of(4, 4)
    for _ in range(10):
        tau = (rng.integers(0, 3) + rng.uniform(0.2, 0.8)) * g.delay_resolution
        nu = rng.uniform(-1.5, 1.5) * g.doppler_resolution
        idx = tuple(int(i) for i in rng.integers(0, 4, size=4))
        step = 0.05 * (g.delay_resolution if order == "d_tau" else g.doppler_resolution)
        e1, e2 = _fd_errors(order, idx, tau, nu, g, step)
        if e1 < 1e-10:
            continue
        assert 3.5 <= e1 / e2 <= 4.5


# ---- moments


def test_r00_is_mn():
    g = grid_of(4, 4)
    assert r_moment(0, 0, 0.3e-6, 1234.0, g) == pytest.approx(16)
    assert r_moment(0, 0, 0.3e-6, 1234.0, g, "brute") == pytest.approx(16)


def test_r10_vanishes_for_single_subcarrier():
    g = grid_of(1, 4)
    assert r_moment(1, 0, 0.0, 0.0, g) == 0


@pytest.mark.parametrize("i,j", MOMENT_ORDERS)
def test_closed_matches_brute(i, j, rng):
    g = grid_of(4, 4)
    for _ in range(3):
        tau = rng.uniform(0.1, 3.9) * g.delay_resolution
        nu = rng.uniform(-2, 2) * g.doppler_resolution
        closed = r_moment(i, j, tau, nu, g)
        brute = r_moment(i, j, tau, nu, g, "brute")
        assert abs(closed - brute) <= 1e-9 * max(abs(brute), 1e-300) or abs(closed - brute) < 1e-9 * abs(
            r_moment(0, 2, tau, nu, g)
        )


def test_closed_moment_structure():
    g = grid_of(8, 4)
    mom = ambiguity_moments(2.5 * g.delay_resolution, 0.0, g)
    assert mom.r00.real > 0 and mom.r00.imag == 0
    assert mom.r20.real > 0 and mom.r02.real > 0
    assert mom.r10.real == 0 and mom.r01.real == 0


@given(nu1=st.floats(-1e5, 1e5), nu2=st.floats(-1e5, 1e5), frac=st.floats(0.05, 0.95))
def test_closed_moments_ignore_doppler_and_depend_on_tap_count(nu1, nu2, frac):
    g = grid_of(8, 4)
    a = ambiguity_moments((2 + frac) * g.delay_resolution, nu1, g)
    b = ambiguity_moments((2 + frac) * g.delay_resolution, nu2, g)
    c = ambiguity_moments((2 + 0.5) * g.delay_resolution, nu2, g)
    assert a == b == c


def test_brute_hermitian_structure(rng):
    g = grid_of(3, 3)
    tau, nu = 1.3 * g.delay_resolution, 0.4 * g.doppler_resolution
    psi, dt, _ = psi_tensor(tau, nu, g)
    r10 = np.vdot(psi, dt)
    r10_rev = np.vdot(dt, psi)
    assert r10 == pytest.approx(np.conj(r10_rev))


def test_brute_resource_limit():
    with pytest.raises(ResourceLimitError):
        r_moment(0, 0, 0.0, 0.0, grid_of(64, 64), "brute")


def test_moment_errors():
    g = grid_of(4, 4)
    with pytest.raises(ArgumentError):
        r_moment(2, 2, 0.0, 0.0, g)
    with pytest.raises(ArgumentError):
        r_moment(0, 0, 0.0, 0.0, g, "magic")
    with pytest.raises(ArgumentError):
        r_moment(0, 0, -1.0, 0.0, g)
