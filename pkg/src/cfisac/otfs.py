"""Delay-Doppler cross-ambiguity factor and its signal moments.

The factor couples DD grid point ``(k', l')`` to ``(k, l)`` for a path with
delay ``tau`` and Doppler ``nu``. It factorizes into a Doppler sum over
``n'`` and a delay sum over ``m'``; the brute-force routines below evaluate
those sums term by term, while :func:`r_moment` with ``method="closed"``
uses the closed-form moment expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigurationError, ResourceLimitError

MOMENT_ORDERS = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2))
PSI_ORDERS = ("value", "d_tau", "d_nu")

_BRUTE_MAX_MN = 1024
_BRUTE_MAX_CELLS = 1 << 22


@dataclass(frozen=True)
class OtfsGrid:
    m: int  # subcarriers (delay taps)
    n: int  # symbols (Doppler bins)
    delta_f: float
    tau_max: float = 0.0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ConfigurationError("grid dimensions must be >= 1")
        if not self.delta_f > 0:
            raise ConfigurationError("delta_f must be > 0")
        if self.tau_max < 0:
            raise ConfigurationError("tau_max must be >= 0")

    @property
    def t_sym(self):
        return 1.0 / self.delta_f

    @property
    def n_cp(self):
        return _snapped_ceil(self.tau_max * self.m * self.delta_f)

    @property
    def bandwidth(self):
        return self.m * self.delta_f

    @property
    def delay_resolution(self):
        return 1.0 / (self.m * self.delta_f)

    @property
    def doppler_resolution(self):
        return 1.0 / (self.n * self.t_sym)


def _snapped_ceil(x):
    # products within 1e-9 of an integer count as that integer
    nearest = round(x)
    return int(nearest) if abs(x - nearest) < 1e-9 else math.ceil(x)


def derive_grid(m, n, delta_f, tau_max=0.0) -> OtfsGrid:
    return OtfsGrid(int(m), int(n), float(delta_f), float(tau_max))


def delay_taps(tau, grid: OtfsGrid) -> int:
    """Number of ISI delay taps ``ceil(tau * M * delta_f)``, clipped to ``[0, M]``.

    A product within 1e-9 of an integer is treated as that integer so that
    on-grid delays do not pick up a spurious extra tap from rounding.
    """
    if tau < 0:
        raise ArgumentError("delay must be non-negative")
    l_tau = _snapped_ceil(tau * grid.m * grid.delta_f)
    return int(min(max(l_tau, 0), grid.m))


def delay_offsets(tau, grid: OtfsGrid) -> np.ndarray:
    """``g(l)`` for every delay index: ``l/(M df)``, minus ``T`` on ISI taps."""
    l_tau = delay_taps(tau, grid)
    g = np.arange(grid.m) / (grid.m * grid.delta_f)
    g[grid.m - l_tau :] -= grid.t_sym
    return g


def _check_indices(k, kp, l, lp, grid):
    if not (0 <= k < grid.n and 0 <= kp < grid.n and 0 <= l < grid.m and 0 <= lp < grid.m):
        raise ArgumentError(f"DD index out of range for {grid.m}x{grid.n} grid")


def _doppler_terms(k, kp, nu, grid):
    n_idx = np.arange(grid.n)
    return np.exp(2j * np.pi * (kp - k + nu * grid.n * grid.t_sym) * n_idx / grid.n)


def _delay_terms(kp, l, lp, tau, nu, grid):
    m_idx = np.arange(grid.m)
    l_tau = delay_taps(tau, grid)
    terms = np.exp(2j * np.pi * (lp - l + tau * grid.m * grid.delta_f) * m_idx / grid.m)
    terms = terms * np.exp(2j * np.pi * nu * lp / (grid.m * grid.delta_f))
    if lp >= grid.m - l_tau:
        terms = terms * np.exp(-2j * np.pi * (nu * grid.t_sym + kp / grid.n))
    return terms


def psi_value(k, kp, l, lp, tau, nu, grid: OtfsGrid, order="value") -> complex:
    """One entry of the cross-ambiguity factor, or its derivative in tau / nu."""
    _check_indices(k, kp, l, lp, grid)
    if order not in PSI_ORDERS:
        raise ArgumentError(f"unknown order {order!r}")
    if tau < 0:
        raise ArgumentError("delay must be non-negative")
    alpha = _doppler_terms(k, kp, nu, grid)
    beta = _delay_terms(kp, l, lp, tau, nu, grid)
    scale = 1.0 / (grid.n * grid.m)
    if order == "value":
        return complex(scale * alpha.sum() * beta.sum())
    if order == "d_tau":
        return complex(scale * 2j * np.pi * grid.delta_f * alpha.sum() * (np.arange(grid.m) @ beta))
    g = delay_offsets(tau, grid)[lp]
    doppler_part = grid.t_sym * (np.arange(grid.n) @ alpha) * beta.sum()
    delay_part = g * alpha.sum() * beta.sum()
    return complex(scale * 2j * np.pi * (doppler_part + delay_part))


def check_brute_size(grid: OtfsGrid):
    m, n = grid.m, grid.n
    if m * n > _BRUTE_MAX_MN or n * m**3 > _BRUTE_MAX_CELLS or n**3 > _BRUTE_MAX_CELLS:
        raise ResourceLimitError(
            f"brute-force ambiguity evaluation limited to MN <= {_BRUTE_MAX_MN}, got {m}x{n}"
        )


def psi_tensor(tau, nu, grid: OtfsGrid):
    """All entries of the factor and both derivatives, indexed ``[k, k', l, l']``.

    Returns ``(psi, d_tau, d_nu)``. Each entry is evaluated from the explicit
    ``n'`` and ``m'`` sums (no geometric-series shortcuts).
    """
    check_brute_size(grid)
    if tau < 0:
        raise ArgumentError("delay must be non-negative")
    m, n, T = grid.m, grid.n, grid.t_sym
    l_tau = delay_taps(tau, grid)
    n_idx = np.arange(n)
    m_idx = np.arange(m)
    k = np.arange(n)[:, None, None]
    kp = np.arange(n)[None, :, None]
    alpha = np.exp(2j * np.pi * (kp - k + nu * n * T) * n_idx[None, None, :] / n)  # [k, k', n']
    a0 = alpha.sum(axis=-1)
    a1 = alpha @ n_idx

    l = np.arange(m)[:, None, None]
    lp = np.arange(m)[None, :, None]
    beta = np.exp(2j * np.pi * (lp - l + tau * m * grid.delta_f) * m_idx[None, None, :] / m)  # [l, l', m']
    beta = beta * np.exp(2j * np.pi * nu * lp / (m * grid.delta_f))
    isi = np.ones((n, m), dtype=complex)  # [k', l']
    isi[:, m - l_tau :] = np.exp(-2j * np.pi * (nu * T + np.arange(n)[:, None] / n))
    b0 = beta.sum(axis=-1)[None, :, :] * isi[:, None, :]  # [k', l, l']
    b1 = (beta @ m_idx)[None, :, :] * isi[:, None, :]

    g = delay_offsets(tau, grid)  # indexed by l'
    scale = 1.0 / (n * m)
    psi = scale * a0[:, :, None, None] * b0[None, :, :, :]
    d_tau = scale * 2j * np.pi * grid.delta_f * a0[:, :, None, None] * b1[None, :, :, :]
    d_nu = scale * 2j * np.pi * (
        T * a1[:, :, None, None] * b0[None, :, :, :] + g[None, None, None, :] * psi / scale
    )
    return psi, d_tau, d_nu


@dataclass(frozen=True)
class AmbiguityMoments:
    r00: complex
    r10: complex
    r01: complex
    r11: complex
    r20: complex
    r02: complex

    def get(self, i, j):
        return getattr(self, f"r{i}{j}")


def _brute_moments(tau, nu, grid) -> AmbiguityMoments:
    psi, dt, dn = psi_tensor(tau, nu, grid)

    def inner(a, b):
        return complex(np.vdot(a, b))

    return AmbiguityMoments(
        r00=inner(psi, psi),
        r10=inner(psi, dt),
        r01=inner(psi, dn),
        r11=inner(dt, dn),
        r20=inner(dt, dt),
        r02=inner(dn, dn),
    )


def _closed_moments(tau, grid) -> AmbiguityMoments:
    m, n, df, T = grid.m, grid.n, grid.delta_f, grid.t_sym
    g = delay_offsets(tau, grid)
    sg = g.sum()
    sg2 = (g * g).sum()
    mn = m * n
    pi = np.pi
    return AmbiguityMoments(
        r00=complex(mn),
        r10=1j * pi * df * (m - 1) * mn,
        r01=1j * pi * (T * (n - 1) * mn + 2 * n * sg),
        r11=complex(pi**2 * (m - 1) * n * ((n - 1) * m + 2 * df * sg)),
        r20=complex((2 * pi * df) ** 2 * (m - 1) * mn * (2 * m - 1) / 6),
        r02=complex(
            (2 * pi * T) ** 2 * (n - 1) * mn * (2 * n - 1) / 6
            + (2 * pi) ** 2 * n * sg2
            + (2 * pi) ** 2 * T * (n - 1) * n * sg
        ),
    )


def ambiguity_moments(tau, nu, grid: OtfsGrid, method="closed") -> AmbiguityMoments:
    """All six moments at once; ``method`` is ``"closed"`` or ``"brute"``."""
    if method == "closed":
        if tau < 0:
            raise ArgumentError("delay must be non-negative")
        return _closed_moments(tau, grid)
    if method == "brute":
        return _brute_moments(tau, nu, grid)
    raise ArgumentError(f"unknown method {method!r}")


def r_moment(i, j, tau, nu, grid: OtfsGrid, method="closed") -> complex:
    if (i, j) not in MOMENT_ORDERS:
        raise ArgumentError(f"unsupported moment order ({i}, {j})")
    return ambiguity_moments(tau, nu, grid, method).get(i, j)
