"""Communication-side statistics and SINR / SE evaluation.

Power coefficients are carried as two arrays: ``eta_users[p, q]`` for the
communication beam of transmitter ``p`` towards user ``q`` and
``eta_targets[p, t]`` for its sensing beam towards target ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .otfs import OtfsGrid
from .scenario import SPEED_OF_LIGHT

_PATH_STREAM = 11


@dataclass
class PowerAllocation:
    eta_users: np.ndarray  # (n_tx, k_u)
    eta_targets: np.ndarray  # (n_tx, t_g)

    def __post_init__(self):
        self.eta_users = np.asarray(self.eta_users, dtype=float)
        self.eta_targets = np.asarray(self.eta_targets, dtype=float)
        if self.eta_users.shape[0] != self.eta_targets.shape[0]:
            raise ArgumentError("user and target coefficients must cover the same transmitters")

    def as_vector(self):
        return np.concatenate([self.eta_users, self.eta_targets], axis=1).ravel()

    def scaled(self, c):
        return PowerAllocation(self.eta_users * c, self.eta_targets * c)


@dataclass
class LinkStats:
    """Second-order statistics of every transmitter-user link.

    ``cov[p, q]`` is the path-summed estimate covariance ``sum_i B_pq,i``;
    because every coefficient below is linear in each ``B`` factor, the
    path sum is all the SINR needs.
    """

    n_paths: np.ndarray  # (n_tx, k_u) resolvable paths L_pq
    n_physical: np.ndarray  # (n_tx, k_u)
    cov: np.ndarray  # (n_tx, k_u, m_t, m_t)
    b_users: np.ndarray  # (n_tx, k_u)
    b_targets: np.ndarray  # (n_tx, t_g)
    a_users: np.ndarray  # (n_tx, k_u, k_u): a[p, q, q']
    a_targets: np.ndarray  # (n_tx, k_u, t_g): a[p, q, t]

    @property
    def n_tx(self):
        return self.b_users.shape[0]

    @property
    def k_u(self):
        return self.b_users.shape[1]

    @property
    def t_g(self):
        return self.b_targets.shape[1]


def resolvable_bins(delays, dopplers, grid: OtfsGrid):
    """Map physical paths to (delay bin, Doppler bin) pairs at the grid resolution."""
    d_bin = np.rint(np.asarray(delays) * grid.m * grid.delta_f).astype(np.int64)
    nu_bin = np.rint(np.asarray(dopplers) * grid.n * grid.t_sym).astype(np.int64)
    return np.stack([d_bin, nu_bin], axis=-1)


def physical_paths(seed, ap, user, mean_paths=4.0):
    """Unit-free multipath draws of one link: ``(delay fractions, cos(angle))``.

    Scaling by ``tau_max`` and the maximum Doppler happens later, so a link
    keeps the same physical paths under any velocity or grid sweep.
    """
    rng = np.random.default_rng([seed, _PATH_STREAM, int(ap), int(user)])
    count = max(1, int(rng.poisson(mean_paths)))
    frac = rng.uniform(0.0, 1.0, size=count)
    cosines = np.cos(rng.uniform(0.0, 2.0 * np.pi, size=count))
    return frac, cosines


def channel_stats(
    scenario,
    params,
    grid: OtfsGrid,
    comm_gain,
    sensing_beams,
    seed,
    mean_paths=4.0,
) -> LinkStats:
    """Build the estimate covariances and the SINR coefficients.

    ``comm_gain`` is the ``(n_tx, k_u)`` large-scale gain, ``sensing_beams``
    the ``(n_tx, t_g, m_t)`` unit-norm sensing precoders. Each physical path
    carries ``comm_gain / L_phys`` times the identity; paths falling into
    the same DD bin merge into one resolvable path.
    """
    tx = scenario.tx_indices
    m_t = params.m_t
    k_u = len(scenario.user_positions)
    speeds = np.linalg.norm(scenario.user_velocities, axis=1)
    n_res = np.zeros((len(tx), k_u), dtype=int)
    n_phys = np.zeros((len(tx), k_u), dtype=int)
    scale = np.zeros((len(tx), k_u))
    for pi, p in enumerate(tx):
        for q in range(k_u):
            frac, cosines = physical_paths(seed, p, q, mean_paths)
            nu_max = speeds[q] * params.carrier_freq / SPEED_OF_LIGHT
            bins = resolvable_bins(frac * grid.tau_max, nu_max * cosines, grid)
            n_phys[pi, q] = len(frac)
            n_res[pi, q] = len(np.unique(bins, axis=0))
            # merged covariances still sum to the link gain
            scale[pi, q] = comm_gain[pi, q]
    cov = scale[:, :, None, None] * np.eye(m_t)[None, None, :, :]
    return stats_from_covariances(cov, sensing_beams, n_res, n_phys)


def stats_from_covariances(cov, sensing_beams, n_paths=None, n_physical=None) -> LinkStats:
    """Trace coefficients from path-summed covariances and sensing precoders."""
    cov = np.asarray(cov, dtype=complex)
    beams = np.asarray(sensing_beams, dtype=complex)
    b_pt_mat = np.einsum("pti,ptj->ptij", beams, beams.conj())
    b_users = np.real(np.einsum("pqii->pq", cov))
    b_targets = np.real(np.einsum("ptii->pt", b_pt_mat))
    a_users = np.real(np.einsum("pqij,prji->pqr", cov, cov))
    a_targets = np.real(np.einsum("pqij,ptji->pqt", cov, b_pt_mat))
    if n_paths is None:
        n_paths = np.ones(b_users.shape, dtype=int)
    if n_physical is None:
        n_physical = np.asarray(n_paths).copy()
    return LinkStats(
        n_paths=np.asarray(n_paths),
        n_physical=np.asarray(n_physical),
        cov=cov,
        b_users=b_users,
        b_targets=b_targets,
        a_users=a_users,
        a_targets=a_targets,
    )


def _interference(eta_users, eta_targets, stats):
    # per user q: sum_p (sum_q' eta_pq' a_pq,q' + sum_t eta_pt a_pq,t)
    return np.einsum("pr,pqr->q", eta_users, stats.a_users) + np.einsum(
        "pt,pqt->q", eta_targets, stats.a_targets
    )


def sinr_all(alloc: PowerAllocation, stats: LinkStats, noise_power):
    eta_u = alloc.eta_users
    if np.any(eta_u < 0) or np.any(alloc.eta_targets < 0):
        raise ArgumentError("power coefficients must be non-negative")
    num = np.einsum("pq,pq->q", np.sqrt(eta_u), stats.b_users) ** 2
    den = _interference(eta_u, alloc.eta_targets, stats) + noise_power
    return num / den


def sinr(q, alloc: PowerAllocation, stats: LinkStats, noise_power):
    return float(sinr_all(alloc, stats, noise_power)[q])


def cp_overhead(grid: OtfsGrid, mode="per-symbol"):
    """Fraction of the frame carrying data: one CP per OTFS symbol by default."""
    mn = grid.m * grid.n
    if mode == "per-symbol":
        return mn / (mn + grid.n * grid.n_cp)
    if mode == "per-frame":
        return mn / (mn + grid.n_cp)
    if mode == "none":
        return 1.0
    raise ArgumentError(f"unknown CP overhead mode {mode!r}")


def se_from_sinr(sinr_value, grid: OtfsGrid, overhead="per-symbol"):
    sinr_value = np.asarray(sinr_value, dtype=float)
    if np.any(sinr_value < 0):
        raise ArgumentError("SINR must be non-negative")
    return cp_overhead(grid, overhead) * np.log2(1.0 + sinr_value)


def power_used(p, alloc: PowerAllocation, stats: LinkStats):
    """Average transmit power of transmitter ``p`` (index into the tx list)."""
    return float(
        alloc.eta_users[p] @ stats.b_users[p] + alloc.eta_targets[p] @ stats.b_targets[p]
    )


def power_used_all(alloc: PowerAllocation, stats: LinkStats):
    return np.einsum("pq,pq->p", alloc.eta_users, stats.b_users) + np.einsum(
        "pt,pt->p", alloc.eta_targets, stats.b_targets
    )
