"""Seeded Monte Carlo experiments built from the library modules.

Each trial gets one seed derived from ``(master seed, trial)``. Sweep
coordinates are deliberately left out of that derivation, so every point of
a sweep sees the same APs, users, targets, RCS draws and multipath (common
random numbers); only the swept quantity changes between points.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..comm import channel_stats, se_from_sinr, sinr_all
from ..errors import ArgumentError
from ..fisher import build_sensing_model, fim_fd_oracle, path_fim, peb
from ..optimizer import allocate_power, equal_power
from ..otfs import OtfsGrid, ambiguity_moments, check_brute_size, psi_value
from ..scenario import assign_modes, generate_scenario, link_gains, path_geometry
from .config import ExperimentConfig
from .results import ResultRow

ORACLE_CHECKS = ("moments", "psi-derivative", "path-fim")
_ORACLE_STREAM = 21


def trial_seed(master_seed, trial):
    return int(np.random.SeedSequence([int(master_seed), int(trial)]).generate_state(1)[0])


@dataclass
class Instance:
    params: object
    grid: OtfsGrid
    scenario: object
    sensing: object  # SensingModel
    stats: object  # LinkStats
    info: np.ndarray  # (n_tx, t_g, 2, 2)


def build_instance(params, grid, seed, cfg: ExperimentConfig) -> Instance:
    scenario = assign_modes(generate_scenario(params, seed), params.n_rx_per_target, params.receiver_mode)
    sensing = build_sensing_model(
        scenario,
        params,
        grid,
        seed,
        gain_mode=cfg.gain_mode,
        pointing_error_std=cfg.pointing_error_std,
        jacobian_convention=cfg.jacobian_convention,
    )
    gains = link_gains(scenario, params, seed)
    stats = channel_stats(scenario, params, grid, gains.comm, sensing.sensing_beams, seed, cfg.mean_paths)
    return Instance(params, grid, scenario, sensing, stats, sensing.approx_info())


def _pebs(inst: Instance, alloc):
    """Exact and single-beam PEB of every target under ``alloc``."""
    sm = inst.sensing
    v_all = sm.tx_covariances(alloc.eta_targets, alloc.eta_users, inst.stats.cov)
    out = []
    for t in range(sm.t_g):
        crlb_a, peb_a = peb(sm.position_fim_approx(t, alloc.eta_targets))
        _, peb_e = peb(sm.position_fim_exact(t, v_all))
        out.append((peb_e, peb_a, crlb_a))
    return out


def _db(x):
    return 10.0 * math.log10(x) if x > 0 else float("-inf")


def _rows(cfg, inst, trial, seed, coords, alloc, status, iterations, runtime_ms):
    p = inst.params
    base = dict(
        experiment=cfg.kind,
        trial=trial,
        seed=seed,
        t_g=p.t_g,
        rcs_variance_m2=float(p.rcs_variance),
        gamma_peb_m=float(coords.get("gamma_peb", cfg.solver.gamma_peb)),
        v_max_mps=float(p.v_max),
        grid_m=inst.grid.m,
        grid_n=inst.grid.n,
        n_ap=p.n_ap,
        m_t=p.m_t,
        iterations=iterations,
        status=status,
        runtime_ms=float(runtime_ms),
        mean_resolvable_paths=float(np.mean(inst.stats.n_paths)),
    )
    nan = float("nan")
    if alloc is None:
        return [
            ResultRow(target=t, peb_exact_m=nan, peb_approx_m=nan, crlb_m2=nan, min_sinr_db=nan,
                      min_se_bps_hz=nan, **base)
            for t in range(p.t_g)
        ]
    min_sinr = float(np.min(sinr_all(alloc, inst.stats, p.noise_power)))
    se = float(se_from_sinr(min_sinr, inst.grid, cfg.cp_overhead))
    return [
        ResultRow(target=t, peb_exact_m=pe, peb_approx_m=pa, crlb_m2=ca, min_sinr_db=_db(min_sinr),
                  min_se_bps_hz=se, **base)
        for t, (pe, pa, ca) in enumerate(_pebs(inst, alloc))
    ]


def _solve(cfg, inst, gamma_peb, initial=None):
    solver = replace(cfg.solver, gamma_peb=gamma_peb)
    report = allocate_power(inst.stats, inst.info, inst.params.noise_power, inst.params.p_d, solver, initial)
    return report


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled
        self.start = time.perf_counter()

    def lap(self):
        now = time.perf_counter()
        ms = (now - self.start) * 1e3 if self.enabled else 0.0
        self.start = now
        return ms


# ------------------------------------------------------------ work units


def _peb_validate(cfg, trial, coords):
    seed = trial_seed(cfg.seed, trial)
    params = replace(cfg.params, t_g=coords["t_g"], rcs_variance=coords["rcs_variance"])
    clock = _Clock(cfg.timing)
    inst = build_instance(params, cfg.grid, seed, cfg)
    alloc = equal_power(inst.stats, params.p_d)
    rows = _rows(cfg, inst, trial, seed, coords, alloc, "equal-power", 0, 0.0)
    ms = clock.lap()
    for r in rows:
        r.runtime_ms = ms
    return rows


def _tradeoff_chain(cfg, trial, coords):
    """All thresholds of one (trial, antenna split), loosest last.

    Each solve warm-starts from the previous feasible solution, which also
    meets every looser threshold.
    """
    seed = trial_seed(cfg.seed, trial)
    n_ap, m_t = coords["ap_antenna"]
    params = replace(cfg.params, n_ap=n_ap, m_t=m_t)
    inst = build_instance(params, cfg.grid, seed, cfg)
    rows = []
    initial = None
    clock = _Clock(cfg.timing)
    for gamma in sorted(coords["gamma_peb"]):
        report = _solve(cfg, inst, gamma, initial)
        point = dict(coords, gamma_peb=gamma)
        if report.status == "infeasible":
            rows += _rows(cfg, inst, trial, seed, point, None, "infeasible", 0, clock.lap())
            continue
        initial = report.allocation
        rows += _rows(cfg, inst, trial, seed, point, report.allocation, report.status, report.iterations, clock.lap())
    return rows


def _allocation_point(cfg, trial, coords, params, grid):
    seed = trial_seed(cfg.seed, trial)
    clock = _Clock(cfg.timing)
    inst = build_instance(params, grid, seed, cfg)
    if cfg.kind == "velocity-sweep" and cfg.allocation == "equal-power":
        alloc = equal_power(inst.stats, params.p_d)
        return _rows(cfg, inst, trial, seed, coords, alloc, "equal-power", 0, clock.lap())
    report = _solve(cfg, inst, cfg.solver.gamma_peb)
    alloc = None if report.status == "infeasible" else report.allocation
    return _rows(cfg, inst, trial, seed, coords, alloc, report.status, report.iterations, clock.lap())


def _velocity_point(cfg, trial, coords):
    m, n = coords["grid"]
    grid = OtfsGrid(m, n, cfg.grid.delta_f, cfg.grid.tau_max)
    params = replace(cfg.params, v_max=coords["v_max"])
    return _allocation_point(cfg, trial, coords, params, grid)


def _allocate(cfg, trial, coords):
    return _allocation_point(cfg, trial, coords, cfg.params, cfg.grid)


# ------------------------------------------------------------ oracle suite


def _oracle_rows(cfg, trial, results):
    p = cfg.params
    rows = []
    for check, err, ok in results:
        rows.append(
            ResultRow(
                experiment=cfg.kind, trial=trial, seed=trial_seed(cfg.seed, trial), t_g=p.t_g,
                rcs_variance_m2=float(p.rcs_variance), gamma_peb_m=float(cfg.solver.gamma_peb),
                v_max_mps=float(p.v_max), grid_m=cfg.grid.m, grid_n=cfg.grid.n, n_ap=p.n_ap, m_t=p.m_t,
                target=-1, peb_exact_m=float("nan"), peb_approx_m=float("nan"), crlb_m2=float("nan"),
                min_sinr_db=float("nan"), min_se_bps_hz=float("nan"), iterations=0,
                status="pass" if ok else "fail", runtime_ms=0.0, mean_resolvable_paths=float("nan"),
                check=check, oracle_error=float(err),
            )
        )
    return rows


def moment_check(tau, nu, grid):
    """Worst relative gap between closed-form and brute-force moments."""
    closed = ambiguity_moments(tau, nu, grid, "closed")
    brute = ambiguity_moments(tau, nu, grid, "brute")
    scale = max(abs(brute.get(i, j)) for i, j in ((0, 0), (2, 0), (0, 2)))
    worst = 0.0
    for i, j in ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)):
        a, b = closed.get(i, j), brute.get(i, j)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-12 * scale))
    return worst


def psi_fd_ratio(idx, tau, nu, grid, order, h):
    """Central-difference errors at ``h`` and ``h/2`` for one derivative of the factor."""
    k, kp, l, lp = idx
    exact = psi_value(k, kp, l, lp, tau, nu, grid, order)

    def fd(step):
        if order == "d_tau":
            up = psi_value(k, kp, l, lp, tau + step, nu, grid)
            dn = psi_value(k, kp, l, lp, tau - step, nu, grid)
        else:
            up = psi_value(k, kp, l, lp, tau, nu + step, grid)
            dn = psi_value(k, kp, l, lp, tau, nu - step, grid)
        return (up - dn) / (2 * step)

    e1 = abs(fd(h) - exact)
    e2 = abs(fd(h / 2) - exact)
    return e1, e2, abs(exact)


def random_tiny_path(rng, m_t):
    """Random single path on a 2x2 grid plus a random PSD transmit covariance."""
    grid = OtfsGrid(2, 2, 5e5, 1e-6)
    while True:
        pts = rng.uniform(0.0, 60.0, size=(3, 2))
        if min(np.linalg.norm(pts[0] - pts[2]), np.linalg.norm(pts[1] - pts[2])) < 1.0:
            continue
        axes = rng.normal(size=(2, 2))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        geom = path_geometry(pts[0], pts[1], pts[2], rng.normal(0.0, 20.0, 2), axes[0], axes[1], 38e9)
        frac = geom.delay * grid.m * grid.delta_f
        # keep the delay away from a tap boundary so the difference quotient is smooth
        if abs(frac - round(frac)) > 0.05:
            break
    a = rng.normal(size=(m_t, m_t)) + 1j * rng.normal(size=(m_t, m_t))
    v_p = a @ a.conj().T / m_t
    beta = complex(rng.normal(), rng.normal())
    return geom, beta, v_p, grid


def path_fim_check(rng, m_t, noise_power=1.0):
    geom, beta, v_p, grid = random_tiny_path(rng, m_t)
    mom = ambiguity_moments(geom.delay, geom.doppler, grid)
    f = path_fim(geom, beta, v_p, mom, m_t, noise_power)
    f_fd = fim_fd_oracle(geom, beta, v_p, grid, m_t, noise_power)
    mask = np.abs(f_fd) > 1e-12 * np.linalg.norm(f_fd)
    return float(np.max(np.abs(f[mask] - f_fd[mask]) / np.abs(f_fd[mask])))


def _oracle_trial(cfg, trial, coords):
    grid = cfg.grid
    check_brute_size(grid)
    rng = np.random.default_rng([trial_seed(cfg.seed, trial), _ORACLE_STREAM])
    results = []
    # off-grid delay, clear of the tap boundaries where the factor has a kink
    tau = (rng.integers(grid.m) + rng.uniform(0.1, 0.9)) * grid.delay_resolution
    nu = rng.uniform(-0.5, 0.5) * grid.n * grid.doppler_resolution
    err = moment_check(tau, nu, grid)
    results.append(("moments", err, err <= 1e-9))

    idx = (rng.integers(grid.n), rng.integers(grid.n), rng.integers(grid.m), rng.integers(grid.m))
    worst_ratio_ok = True
    worst = 0.0
    for order, h in (("d_tau", 1e-3 * grid.delay_resolution), ("d_nu", 1e-3 * grid.doppler_resolution)):
        e1, e2, mag = psi_fd_ratio(idx, tau, nu, grid, order, h)
        worst = max(worst, e1 / max(mag, 1e-300))
        # roundoff-dominated differences are accepted as exact
        if e1 > 1e-9 * max(mag, 1.0):
            worst_ratio_ok &= 3.5 <= e1 / max(e2, 1e-300) <= 4.5
    results.append(("psi-derivative", worst, worst_ratio_ok))

    m_t = int(rng.integers(2, 4))
    err = path_fim_check(rng, m_t)
    results.append(("path-fim", err, err <= 1e-4))
    return _oracle_rows(cfg, trial, results)


# ------------------------------------------------------------ driver

_UNITS = {
    "peb-validate": _peb_validate,
    "tradeoff": _tradeoff_chain,
    "velocity-sweep": _velocity_point,
    "allocate": _allocate,
    "oracle-check": _oracle_trial,
}


def work_units(cfg: ExperimentConfig):
    """``(trial, coords)`` pairs; a tradeoff unit carries its whole threshold list."""
    axes = cfg.sweep
    if cfg.kind == "tradeoff":
        pairs = dict(axes)["ap_antenna"]
        gammas = dict(axes)["gamma_peb"]
        return [(t, {"ap_antenna": pr, "gamma_peb": tuple(gammas)}) for t in range(cfg.trials) for pr in pairs]
    names = [a for a, _ in axes]
    grids = list(itertools.product(*[v for _, v in axes])) or [()]
    return [(t, dict(zip(names, point))) for t in range(cfg.trials) for point in grids]


def run_experiment(cfg: ExperimentConfig, threads=None) -> list:
    """Run every trial and sweep point; rows come back in a fixed order."""
    cfg.validate()
    unit = _UNITS.get(cfg.kind)
    if unit is None:
        raise ArgumentError(f"unknown experiment kind {cfg.kind!r}")
    if cfg.kind == "oracle-check":
        check_brute_size(cfg.grid)
    threads = threads or cfg.threads or os.cpu_count() or 1
    units = work_units(cfg)
    if threads <= 1 or len(units) <= 1:
        chunks = [unit(cfg, t, c) for t, c in units]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda tc: unit(cfg, *tc), units))
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=ResultRow.sort_key)
    return rows
