"""Per-path Fisher information, equivalent FIM and position error bounds.

Parameter order of every per-path FIM is
``(aoa, aod, delay, doppler, Re(beta), Im(beta))``; the first four are the
geometric parameters kept by the Schur complement, the last two the complex
path gain that is eliminated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateGeometryError
from .otfs import AmbiguityMoments, OtfsGrid, ambiguity_moments, psi_tensor
from .scenario import SPEED_OF_LIGHT, PathGeometry, path_geometry, steering_vector

PARAMS = ("aoa", "aod", "delay", "doppler", "beta_re", "beta_im")
_DET_GUARD = 1e-300


class RankDeficiencyWarning(UserWarning):
    pass


def v_matrix(sensing_beams, eta_targets, comm_cov=None, eta_users=None):
    """Transmit-covariance surrogate of one AP.

    ``sensing_beams`` is ``(t_g, m_t)``, one precoder per target;
    ``comm_cov`` is ``(k_u, m_t, m_t)`` holding the path-summed estimate
    covariances of every user link.
    """
    beams = np.atleast_2d(np.asarray(sensing_beams, dtype=complex))
    eta_t = np.atleast_1d(np.asarray(eta_targets, dtype=float))
    if beams.shape[0] != eta_t.shape[0]:
        raise ArgumentError("one power coefficient per sensing beam required")
    if np.any(eta_t < 0):
        raise ArgumentError("power coefficients must be non-negative")
    v = np.einsum("t,ti,tj->ij", eta_t, beams, beams.conj())
    if comm_cov is not None:
        comm_cov = np.asarray(comm_cov, dtype=complex)
        eta_u = np.atleast_1d(np.asarray(eta_users, dtype=float))
        if comm_cov.shape[0] != eta_u.shape[0] or comm_cov.shape[1:] != v.shape:
            raise ArgumentError("communication covariances do not match the beam dimensions")
        if np.any(eta_u < 0):
            raise ArgumentError("power coefficients must be non-negative")
        v = v + np.einsum("q,qij->ij", eta_u, comm_cov)
    return v


def _array_factors(aoa, aod, v_p, m_t):
    c = np.arange(m_t)
    h_tr = steering_vector(aoa, m_t)
    h_pt = steering_vector(aod, m_t)
    hd_tr = c * h_tr
    hd_pt = c * h_pt
    rx = {
        "hh": np.vdot(h_tr, h_tr),
        "dh": np.vdot(hd_tr, h_tr),
        "dd": np.vdot(hd_tr, hd_tr),
    }
    tx = {
        "hh": np.vdot(h_pt, v_p @ h_pt),
        "dh": np.vdot(hd_pt, v_p @ h_pt),
        "hd": np.vdot(h_pt, v_p @ hd_pt),
        "dd": np.vdot(hd_pt, v_p @ hd_pt),
    }
    return rx, tx


def path_fim(geometry, beta, v_p, moments: AmbiguityMoments, m_t, noise_power):
    """6x6 FIM of one reflected path assembled entry by entry.

    ``geometry`` only needs ``aoa`` and ``aod`` attributes. ``beta`` is the
    complex path gain and ``v_p`` the transmit covariance of the AP.
    """
    if not noise_power > 0:
        raise ArgumentError("noise power must be positive")
    v_p = np.asarray(v_p, dtype=complex)
    if v_p.shape != (m_t, m_t):
        raise ArgumentError(f"V_p must be {m_t}x{m_t}")
    rx, tx = _array_factors(geometry.aoa, geometry.aod, v_p, m_t)
    k = 2.0 / noise_power
    bb = np.conj(beta) * beta
    bc = np.conj(beta)
    j = 1j
    r00, r10, r01, r11, r20, r02 = (
        moments.r00, moments.r10, moments.r01, moments.r11, moments.r20, moments.r02
    )

    f = np.zeros((6, 6))
    f[0, 0] = k * np.real(bb * rx["dd"] * tx["hh"] * r00)
    f[1, 1] = k * np.real(bb * rx["hh"] * tx["dd"] * r00)
    f[2, 2] = k * np.real(bb * rx["hh"] * tx["hh"] * r20)
    f[3, 3] = k * np.real(bb * rx["hh"] * tx["hh"] * r02)
    f[4, 4] = k * np.real(rx["hh"] * tx["hh"] * r00)
    f[5, 5] = k * np.real(rx["hh"] * tx["hh"] * r00)
    f[0, 1] = -k * np.real(bb * rx["dh"] * tx["dh"] * r00)
    f[0, 2] = k * np.real(j * bb * rx["dh"] * tx["hh"] * r10)
    f[0, 3] = k * np.real(j * bb * rx["dh"] * tx["hh"] * r01)
    f[0, 4] = k * np.real(j * bc * rx["dh"] * tx["hh"] * r00)
    f[0, 5] = -k * np.real(bc * rx["dh"] * tx["hh"] * r00)
    f[1, 2] = -k * np.real(j * bb * rx["hh"] * tx["hd"] * r10)
    f[1, 3] = -k * np.real(j * bb * rx["hh"] * tx["hd"] * r01)
    f[1, 4] = -k * np.real(j * bc * rx["hh"] * tx["hd"] * r00)
    f[1, 5] = k * np.real(bc * rx["hh"] * tx["hd"] * r00)
    f[2, 3] = k * np.real(bb * rx["hh"] * tx["hh"] * r11)
    f[2, 4] = k * np.real(bc * rx["hh"] * tx["hh"] * np.conj(r10))
    f[2, 5] = k * np.real(j * bc * rx["hh"] * tx["hh"] * np.conj(r10))
    f[3, 4] = k * np.real(bc * rx["hh"] * tx["hh"] * np.conj(r01))
    f[3, 5] = k * np.real(j * bc * rx["hh"] * tx["hh"] * np.conj(r01))
    f[4, 5] = k * np.real(j * rx["hh"] * tx["hh"] * r00)
    return f + np.triu(f, 1).T


def efim(f):
    """Schur complement of the gain block: equivalent FIM of the geometric parameters."""
    f = np.asarray(f, dtype=float)
    f1 = f[:4, :4]
    f12 = f[:4, 4:]
    f2 = f[4:, 4:]
    det = f2[0, 0] * f2[1, 1] - f2[0, 1] * f2[1, 0]
    if abs(det) > _DET_GUARD:
        inv = np.array([[f2[1, 1], -f2[0, 1]], [-f2[1, 0], f2[0, 0]]]) / det
    else:
        warnings.warn("gain block of the FIM is singular; using pseudo-inverse", RankDeficiencyWarning)
        inv = np.linalg.pinv(f2)
    out = f1 - f12 @ inv @ f12.T
    return 0.5 * (out + out.T)


def jacobian(geometry: PathGeometry, u_tx, u_rx, v_target, wavelength, convention="printed"):
    """Rows: derivatives of (aoa, aod, delay, doppler) w.r.t. the target position.

    ``convention="printed"`` adds the transmitter-side projector terms with a
    positive sign throughout (the closed-form rows used for the bound);
    ``"gradient"`` returns the exact gradient of the path-parameter map, which
    differs in the sign of every transmitter-side term.
    """
    if geometry.d_pt <= 0 or geometry.d_tr <= 0:
        raise DegenerateGeometryError("target coincides with an AP")
    u_tx = np.asarray(u_tx, dtype=float)
    u_rx = np.asarray(u_rx, dtype=float)
    v_target = np.asarray(v_target, dtype=float)
    eye = np.eye(2)
    proj_tr = (eye - np.outer(geometry.rho_tr, geometry.rho_tr)) / geometry.d_tr
    proj_pt = (eye - np.outer(geometry.rho_pt, geometry.rho_pt)) / geometry.d_pt
    if convention == "printed":
        sign = 1.0
    elif convention == "gradient":
        sign = -1.0
    else:
        raise ArgumentError(f"unknown Jacobian convention {convention!r}")
    return np.vstack(
        [
            np.pi * u_rx @ proj_tr,
            sign * np.pi * u_tx @ proj_pt,
            (geometry.rho_tr + sign * geometry.rho_pt) / SPEED_OF_LIGHT,
            v_target @ (proj_tr + sign * proj_pt) / wavelength,
        ]
    )


def peb(f):
    """Return ``(crlb, peb)``; a non-invertible 2x2 FIM gives ``(inf, inf)``."""
    f = np.asarray(f, dtype=float)
    det = f[0, 0] * f[1, 1] - f[0, 1] * f[1, 0]
    if not np.isfinite(det) or det <= 0.0:
        return float("inf"), float("inf")
    crlb = (f[0, 0] + f[1, 1]) / det
    if not crlb > 0:
        return float("inf"), float("inf")
    return float(crlb), float(np.sqrt(crlb))


def d_coefficients(moments: AmbiguityMoments, m_t):
    """Diagonal of the equivalent FIM under single-beam pointing, without the
    ``2 |beta|^2 eta / sigma^2`` prefactor: ``(d11, d22, d33, d44)``."""
    mn = moments.r00.real
    d11 = (m_t - 1) * (2 * m_t - 1) * mn / 6 - (m_t - 1) ** 2 * mn / 4
    d33 = (moments.r20 + moments.r10**2 / mn).real
    d44 = (moments.r02 + moments.r01**2 / mn).real
    return d11, 0.0, d33, d44


def approx_path_info(jac, beta_abs2, moments, m_t, noise_power):
    """Per-unit-power position information of one path under the single-beam approximation."""
    d11, _, d33, d44 = d_coefficients(moments, m_t)
    j1, j3, j4 = jac[0], jac[2], jac[3]
    return (2.0 * beta_abs2 / noise_power) * (
        d11 * np.outer(j1, j1) + d33 * np.outer(j3, j3) + d44 * np.outer(j4, j4)
    )


def fim_fd_oracle(geometry, beta, v_p, grid: OtfsGrid, m_t, noise_power, step=1e-5):
    """Finite-difference FIM of one path, built from the effective DD channel.

    The noiseless channel is ``beta * (h_tr h_pt^H) kron Psi(delay, doppler)``
    acting on a transmit vector with covariance ``V_p kron I``. Each of the six
    parameters is central-differenced with ``step`` expressed in natural
    units (radians, delay bins, Doppler bins, and fractions of ``|beta|``).
    """
    if grid.m * grid.n > 64 or m_t > 4:
        warnings.warn("finite-difference oracle intended for MN <= 64 and m_t <= 4")
    if not 1e-8 <= step <= 1e-1:
        warnings.warn(f"finite-difference step {step} is likely ill-conditioned")
    v_p = np.asarray(v_p, dtype=complex)
    mn = grid.m * grid.n
    theta0 = np.array(
        [geometry.aoa, geometry.aod, geometry.delay, geometry.doppler, np.real(beta), np.imag(beta)],
        dtype=float,
    )
    scales = np.array(
        [1.0, 1.0, grid.delay_resolution, grid.doppler_resolution, max(abs(beta), 1e-300), max(abs(beta), 1e-300)]
    )

    def channel(theta):
        h_tr = steering_vector(theta[0], m_t)
        h_pt = steering_vector(theta[1], m_t)
        psi, _, _ = psi_tensor(theta[2], theta[3], grid)
        psi_mat = psi.transpose(0, 2, 1, 3).reshape(mn, mn)  # rows (k,l), cols (k',l')
        b = theta[4] + 1j * theta[5]
        return b * np.kron(np.outer(h_tr, h_pt.conj()), psi_mat)

    derivs = []
    for i in range(6):
        h = step * scales[i]
        up = theta0.copy()
        dn = theta0.copy()
        up[i] += h
        dn[i] -= h
        derivs.append((channel(up) - channel(dn)) / (2 * h))
    cov = np.kron(v_p, np.eye(mn))
    f = np.empty((6, 6))
    for a in range(6):
        for b in range(6):
            f[a, b] = (2.0 / noise_power) * np.real(np.trace(derivs[a].conj().T @ derivs[b] @ cov))
    return 0.5 * (f + f.T)


@dataclass
class SensingPath:
    tx: int  # position in the transmitter list
    rx: int  # AP index of the receiver
    target: int
    geometry: PathGeometry
    jac: np.ndarray  # (4, 2)
    beta: complex
    moments: AmbiguityMoments


@dataclass
class SensingModel:
    """All bi-static paths of a scenario plus what the bounds need from them."""

    paths: list
    m_t: int
    noise_power: float
    n_tx: int
    t_g: int
    sensing_beams: np.ndarray  # (n_tx, t_g, m_t) precoders pointed at each target

    def paths_for(self, target):
        return [p for p in self.paths if p.target == target]

    def approx_info(self):
        """Per-(tx, target) 2x2 information per unit power: ``G[p, t]``.

        The single-beam position FIM of target ``t`` is ``sum_p eta_pt G[p, t]``.
        """
        g = np.zeros((self.n_tx, self.t_g, 2, 2))
        for path in self.paths:
            g[path.tx, path.target] += approx_path_info(
                path.jac, abs(path.beta) ** 2, path.moments, self.m_t, self.noise_power
            )
        return g

    def position_fim_approx(self, target, eta_targets):
        """Single-beam approximation; ``eta_targets`` is ``(n_tx, t_g)``."""
        eta_targets = np.asarray(eta_targets, dtype=float)
        paths = self.paths_for(target)
        if not paths:
            raise ArgumentError("target has no sensing paths")
        f = np.zeros((2, 2))
        for path in paths:
            f += eta_targets[path.tx, target] * approx_path_info(
                path.jac, abs(path.beta) ** 2, path.moments, self.m_t, self.noise_power
            )
        return f

    def tx_covariances(self, eta_targets, eta_users=None, comm_cov=None):
        """``V_p`` for every transmitter: ``(n_tx, m_t, m_t)``."""
        eta_targets = np.asarray(eta_targets, dtype=float)
        out = np.empty((self.n_tx, self.m_t, self.m_t), dtype=complex)
        for p in range(self.n_tx):
            if comm_cov is None:
                out[p] = v_matrix(self.sensing_beams[p], eta_targets[p])
            else:
                out[p] = v_matrix(self.sensing_beams[p], eta_targets[p], comm_cov[p], eta_users[p])
        return out

    def position_fim_exact(self, target, v_all):
        """Sum of ``J^T EFIM J`` over every path of ``target``; ``v_all`` from :meth:`tx_covariances`."""
        paths = self.paths_for(target)
        if not paths:
            raise ArgumentError("target has no sensing paths")
        f = np.zeros((2, 2))
        for path in paths:
            fp = path_fim(path.geometry, path.beta, v_all[path.tx], path.moments, self.m_t, self.noise_power)
            f += path.jac.T @ efim(fp) @ path.jac
        return 0.5 * (f + f.T)


_RCS_STREAM = 7
_POINTING_STREAM = 8


def build_sensing_model(
    scenario,
    params,
    grid: OtfsGrid,
    seed,
    gain_mode="realized",
    pointing_error_std=0.0,
    jacobian_convention="printed",
    moment_method="closed",
):
    """Enumerate every (transmitter, receiver of target t, target t) path.

    ``gain_mode="realized"`` draws the RCS ``alpha ~ CN(0, sigma^2)`` per path
    from a stream keyed by the AP indices and target, so a change of RCS
    variance only rescales the same draw; ``"expected"`` uses
    ``|beta|^2 = sigma^2 * xi`` with zero phase.
    """
    tx_idx = scenario.tx_indices
    lam = params.wavelength
    paths = []
    beams = np.empty((len(tx_idx), len(scenario.target_positions), params.m_t), dtype=complex)
    for ti, p in enumerate(tx_idx):
        for t, (p_t, v_t) in enumerate(zip(scenario.target_positions, scenario.target_velocities)):
            rho = scenario.ap_positions[p] - p_t
            aod = np.pi * scenario.ap_axis[p] @ rho / np.linalg.norm(rho)
            err = 0.0
            if pointing_error_std > 0:
                err = np.random.default_rng([seed, _POINTING_STREAM, int(p), t]).normal(0.0, pointing_error_std)
            beams[ti, t] = steering_vector(aod + err, params.m_t)
            for r in scenario.receiver_sets[t]:
                geom = path_geometry(
                    scenario.ap_positions[p],
                    scenario.ap_positions[r],
                    p_t,
                    v_t,
                    scenario.ap_axis[p],
                    scenario.ap_axis[r],
                    params.carrier_freq,
                    params.g_t,
                    params.g_r,
                    params.rcs_variance,
                )
                if gain_mode == "realized":
                    z = np.random.default_rng([seed, _RCS_STREAM, int(p), int(r), t]).normal(size=2)
                    alpha = np.sqrt(params.rcs_variance / 2.0) * (z[0] + 1j * z[1])
                elif gain_mode == "expected":
                    alpha = np.sqrt(params.rcs_variance)
                else:
                    raise ArgumentError(f"unknown gain mode {gain_mode!r}")
                jac = jacobian(geom, scenario.ap_axis[p], scenario.ap_axis[r], v_t, lam, jacobian_convention)
                paths.append(
                    SensingPath(
                        tx=ti,
                        rx=int(r),
                        target=t,
                        geometry=geom,
                        jac=jac,
                        beta=complex(alpha * np.sqrt(geom.radar_gain)),
                        moments=ambiguity_moments(geom.delay, geom.doppler, grid, moment_method),
                    )
                )
    return SensingModel(
        paths=paths,
        m_t=params.m_t,
        noise_power=params.noise_power,
        n_tx=len(tx_idx),
        t_g=len(scenario.target_positions),
        sensing_beams=beams,
    )
