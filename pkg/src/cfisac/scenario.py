"""Scenario generation, AP mode selection and bi-static path geometry.

All geometry is 2-D (horizontal plane). Positions are in meters, velocities
in m/s, frequencies in Hz.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError

SPEED_OF_LIGHT = 299_792_458.0

# RNG stream identifiers; each entity draws from its own stream so that adding
# a target or user never perturbs the draws of the others.
_AP_STREAM = 0
_USER_STREAM = 1
_TARGET_STREAM = 2
_SHADOW_STREAM = 3
RECEIVER_MODES = ("nearest", "co-located")


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def kmh_to_ms(kmh):
    return kmh / 3.6


@dataclass(frozen=True)
class SimParams:
    """System-level simulation parameters; defaults are the reference system values."""

    area_side: float = 300.0
    n_ap: int = 32
    m_t: int = 16
    k_u: int = 10
    t_g: int = 2
    n_rx_per_target: int = 2
    p_d: float = 1.0
    noise_power: float = dbm_to_watts(-89.0)
    rcs_variance: float = 1.0
    carrier_freq: float = 38e9
    g_t: float = 1.0
    g_r: float = 1.0
    v_max: float = kmh_to_ms(300.0)
    master_seed: int = 0
    # fixed array-axis angle in degrees for every AP; None draws one per AP
    ap_axis_deg: float | None = None
    shadowing: bool = False
    shadowing_std_db: float = 4.0
    # communication path loss is evaluated at max(d, min_distance)
    min_distance: float = 1.0
    # "nearest": the closest APs switch to receive mode; "co-located": each of
    # them gets a receive-only twin at its own position and keeps transmitting
    receiver_mode: str = "nearest"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n_ap", "m_t", "k_u", "n_rx_per_target"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.t_g < 0:
            raise ConfigurationError(f"t_g must be >= 0, got {self.t_g}")
        if self.receiver_mode not in RECEIVER_MODES:
            raise ConfigurationError(f"receiver_mode must be one of {RECEIVER_MODES}")
        if self.receiver_mode == "co-located":
            if self.n_rx_per_target > self.n_ap:
                raise ConfigurationError("more receivers per target than APs")
        elif self.n_rx_per_target * self.t_g >= self.n_ap:
            raise ConfigurationError(
                f"n_rx_per_target * t_g = {self.n_rx_per_target * self.t_g} "
                f"must be smaller than n_ap = {self.n_ap}"
            )
        for name in ("area_side", "p_d", "noise_power", "rcs_variance", "carrier_freq", "g_t", "g_r"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.v_max < 0:
            raise ConfigurationError(f"v_max must be >= 0, got {self.v_max}")
        if self.min_distance <= 0:
            raise ConfigurationError("min_distance must be > 0")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_freq


@dataclass
class Scenario:
    ap_positions: np.ndarray  # (n_ap, 2)
    ap_axis: np.ndarray  # (n_ap, 2) unit vectors
    user_positions: np.ndarray  # (k_u, 2)
    user_velocities: np.ndarray  # (k_u, 2)
    target_positions: np.ndarray  # (t_g, 2)
    target_velocities: np.ndarray  # (t_g, 2)
    is_receiver: np.ndarray = field(default=None)  # (n_ap,) bool
    receiver_sets: list = field(default=None)  # per target, list of AP indices

    @property
    def n_ap(self):
        return len(self.ap_positions)

    @property
    def tx_indices(self):
        self._require_modes()
        return np.flatnonzero(~self.is_receiver)

    @property
    def rx_indices(self):
        self._require_modes()
        return np.flatnonzero(self.is_receiver)

    def _require_modes(self):
        if self.is_receiver is None:
            raise ConfigurationError("AP modes not assigned; call assign_modes first")


@dataclass(frozen=True)
class PathGeometry:
    """Parameters of one transmitter -> target -> receiver reflection."""

    aoa: float  # spatial frequency at the receiving array
    aod: float  # spatial frequency at the transmitting array
    delay: float
    doppler: float
    rho_pt: np.ndarray  # unit vector from target towards the transmitter
    rho_tr: np.ndarray  # unit vector from receiver towards the target
    d_pt: float
    d_tr: float
    radar_gain: float
    rcs_variance: float


def _unit_vector(rng):
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(phi), np.sin(phi)])


def _inside(rng, side):
    # uniform on the open square
    return rng.uniform(np.nextafter(0.0, 1.0), side, size=2)


def generate_scenario(params: SimParams, seed: int) -> Scenario:
    """Drop APs, users and targets uniformly over the square area.

    Every AP, user and target draws from its own seeded stream, so two
    parameter sets sharing a seed share every entity they have in common.
    Speeds are uniform in ``[0, v_max]`` with a uniform heading.
    """
    params.validate()
    side = params.area_side

    ap_pos = np.empty((params.n_ap, 2))
    ap_axis = np.empty((params.n_ap, 2))
    for i in range(params.n_ap):
        rng = np.random.default_rng([seed, _AP_STREAM, i])
        ap_pos[i] = rng.uniform(0.0, side, size=2)
        axis = _unit_vector(rng)
        if params.ap_axis_deg is not None:
            phi = np.deg2rad(params.ap_axis_deg)
            axis = np.array([np.cos(phi), np.sin(phi)])
        ap_axis[i] = axis

    def movers(stream, count):
        pos = np.empty((count, 2))
        vel = np.empty((count, 2))
        for i in range(count):
            rng = np.random.default_rng([seed, stream, i])
            pos[i] = _inside(rng, side)
            speed = rng.uniform(0.0, 1.0) * params.v_max
            vel[i] = speed * _unit_vector(rng)
        return pos, vel

    user_pos, user_vel = movers(_USER_STREAM, params.k_u)
    target_pos, target_vel = movers(_TARGET_STREAM, params.t_g)
    return Scenario(ap_pos, ap_axis, user_pos, user_vel, target_pos, target_vel)


def assign_modes(scenario: Scenario, n_rx_per_target: int, mode: str = "nearest") -> Scenario:
    """Pick the ``n_rx_per_target`` closest APs of every target as its receivers.

    Ties are broken by the lower AP index; an AP may be a receiver for
    several targets. With ``mode="nearest"`` the chosen APs stop transmitting.
    With ``mode="co-located"`` every chosen AP keeps transmitting and a
    receive-only twin (same position and array axis) is appended after the
    original APs, which gives a mono-static geometry even with a single AP.
    """
    if mode not in RECEIVER_MODES:
        raise ConfigurationError(f"receiver mode must be one of {RECEIVER_MODES}")
    n_ap = scenario.n_ap
    if n_rx_per_target > n_ap:
        raise ConfigurationError("more receivers per target than APs")
    chosen_sets = []
    for p_t in scenario.target_positions:
        dist = np.linalg.norm(scenario.ap_positions - p_t, axis=1)
        order = np.lexsort((np.arange(n_ap), dist))
        chosen_sets.append(sorted(int(i) for i in order[:n_rx_per_target]))
    if mode == "co-located":
        twins = sorted({i for chosen in chosen_sets for i in chosen})
        twin_of = {ap: n_ap + k for k, ap in enumerate(twins)}
        is_rx = np.concatenate([np.zeros(n_ap, dtype=bool), np.ones(len(twins), dtype=bool)])
        return replace(
            scenario,
            ap_positions=np.vstack([scenario.ap_positions, scenario.ap_positions[twins]]),
            ap_axis=np.vstack([scenario.ap_axis, scenario.ap_axis[twins]]),
            is_receiver=is_rx,
            receiver_sets=[[twin_of[i] for i in chosen] for chosen in chosen_sets],
        )
    is_rx = np.zeros(n_ap, dtype=bool)
    for chosen in chosen_sets:
        is_rx[chosen] = True
    if is_rx.all():
        raise ConfigurationError("mode assignment leaves no transmitting AP")
    return replace(scenario, is_receiver=is_rx, receiver_sets=chosen_sets)


def radar_gain(wavelength, d_pt, d_tr, g_t=1.0, g_r=1.0):
    """Bi-static radar-equation power gain (without the RCS)."""
    return wavelength**2 * g_t * g_r / ((4.0 * np.pi) ** 3 * d_pt**2 * d_tr**2)


def path_geometry(
    p_tx,
    p_rx,
    p_target,
    v_target,
    u_tx,
    u_rx,
    carrier_freq,
    g_t=1.0,
    g_r=1.0,
    rcs_variance=1.0,
) -> PathGeometry:
    p_tx, p_rx, p_target, v_target = (np.asarray(x, dtype=float) for x in (p_tx, p_rx, p_target, v_target))
    d_pt = float(np.linalg.norm(p_tx - p_target))
    d_tr = float(np.linalg.norm(p_target - p_rx))
    if d_pt == 0.0 or d_tr == 0.0:
        raise DegenerateGeometryError("target coincides with an AP")
    rho_pt = (p_tx - p_target) / d_pt
    rho_tr = (p_target - p_rx) / d_tr
    lam = SPEED_OF_LIGHT / carrier_freq
    return PathGeometry(
        aoa=float(np.pi * np.dot(u_rx, rho_tr)),
        aod=float(np.pi * np.dot(u_tx, rho_pt)),
        delay=(d_pt + d_tr) / SPEED_OF_LIGHT,
        doppler=float(np.dot(v_target, rho_pt + rho_tr) / lam),
        rho_pt=rho_pt,
        rho_tr=rho_tr,
        d_pt=d_pt,
        d_tr=d_tr,
        radar_gain=float(radar_gain(lam, d_pt, d_tr, g_t, g_r)),
        rcs_variance=float(rcs_variance),
    )


def steering_vector(omega, m_t):
    """Half-wavelength ULA response with unit Euclidean norm."""
    if m_t < 1:
        raise ConfigurationError("m_t must be >= 1")
    return np.exp(-1j * omega * np.arange(m_t)) / np.sqrt(m_t)


def umi_path_loss_db(d, carrier_freq):
    """3GPP urban-microcell style path loss in dB (d in meters)."""
    return 22.4 + 35.3 * np.log10(d) + 21.3 * np.log10(carrier_freq / 1e9)


@dataclass(frozen=True)
class LinkGains:
    radar: np.ndarray  # (n_tx, n_rx, t_g) aligned with tx/rx index lists
    comm: np.ndarray  # (n_tx, k_u)
    tx_indices: np.ndarray
    rx_indices: np.ndarray


def link_gains(scenario: Scenario, params: SimParams, seed: int | None = None) -> LinkGains:
    tx = scenario.tx_indices
    rx = scenario.rx_indices
    p_tx = scenario.ap_positions[tx]
    p_rx = scenario.ap_positions[rx]

    d_pt = np.linalg.norm(p_tx[:, None, :] - scenario.target_positions[None, :, :], axis=-1)
    d_tr = np.linalg.norm(scenario.target_positions[None, :, :] - p_rx[:, None, :], axis=-1)
    if np.any(d_pt == 0.0) or np.any(d_tr == 0.0):
        raise DegenerateGeometryError("target coincides with an AP")
    radar = radar_gain(params.wavelength, d_pt[:, None, :], d_tr[None, :, :], params.g_t, params.g_r)

    d_pq = np.linalg.norm(p_tx[:, None, :] - scenario.user_positions[None, :, :], axis=-1)
    if np.any(d_pq == 0.0):
        raise DegenerateGeometryError("user coincides with an AP")
    pl_db = umi_path_loss_db(np.maximum(d_pq, params.min_distance), params.carrier_freq)
    if params.shadowing:
        # drawn for every AP so that the tx/rx split does not shift the draws
        rng = np.random.default_rng([0 if seed is None else seed, _SHADOW_STREAM])
        shadow = rng.normal(0.0, params.shadowing_std_db, size=(scenario.n_ap, len(scenario.user_positions)))
        pl_db = pl_db + shadow[tx]
    return LinkGains(radar=radar, comm=10.0 ** (-pl_db / 10.0), tx_indices=tx, rx_indices=rx)
