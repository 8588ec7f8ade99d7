"""Max-min SINR power allocation under per-AP power and per-target CRLB limits.

The outer loop alternates the closed-form auxiliary update with a convex
subproblem. Internally every AP's powers are expressed as
``x_pq = sqrt(eta_pq * b_pq)`` and ``w_pt = eta_pt * b_pt`` so the power
constraint of AP ``p`` reads ``|x_p|^2 + sum(w_p) <= P_d``; SINR quantities
are scaled by the noise power.

Two subproblem solvers are available. ``method="interior-point"`` (default)
runs a log-barrier interior-point method on ``(x, w, z)``. ``"bisection"``
bisects on ``z``; each feasibility test maximizes a soft-min of normalized
constraint margins with a spectral projected-gradient ascent, stopping as
soon as the hard minimum is non-negative (feasible) or a Frank-Wolfe bound
proves it negative (infeasible). Both return the start point when they
cannot improve on it, so ``z`` never decreases across outer iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .comm import LinkStats, PowerAllocation, sinr_all
from .errors import ArgumentError, ConfigurationError

STATUSES = ("converged", "max-iters", "infeasible")
METHODS = ("interior-point", "bisection")
STARTS = ("equal-power", "balanced")


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-4  # relative change of z between outer iterations
    max_iters: int = 50
    gamma_peb: float = 0.1  # sensing threshold as a PEB in meters
    bisection_tol: float = 1e-5
    bisection_max_steps: int = 60
    smoothing: float = 1e-4
    pg_max_iters: int = 400
    method: str = "interior-point"
    ipm_tol: float = 1e-9  # relative duality-gap target of the interior-point solves
    start: str = "equal-power"

    def __post_init__(self):
        if self.start not in STARTS:
            raise ConfigurationError(f"unknown start rule {self.start!r}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown solver method {self.method!r}")
        if not self.tolerance > 0:
            raise ConfigurationError("tolerance must be > 0")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if not self.gamma_peb >= 0:
            raise ConfigurationError("gamma_peb must be >= 0")
        if not (self.bisection_tol > 0 and self.smoothing > 0):
            raise ConfigurationError("bisection_tol and smoothing must be > 0")
        if self.pg_max_iters < 1 or self.bisection_max_steps < 1:
            raise ConfigurationError("iteration limits must be >= 1")

    @property
    def gamma_crlb(self):
        return self.gamma_peb**2


@dataclass
class SolveReport:
    allocation: PowerAllocation
    z_trajectory: list
    sinr: np.ndarray
    power_slack: np.ndarray  # (P_d - used) / P_d per AP
    sensing_slack: np.ndarray  # (gamma - crlb) / gamma per target
    crlb: np.ndarray  # approximate CRLB per target, m^2
    iterations: int
    status: str
    binding: list = field(default_factory=list)
    min_crlb: float = 0.0  # smallest achievable worst-target CRLB with sensing only

    @property
    def min_sinr(self):
        return float(np.min(self.sinr)) if self.sinr.size else float("inf")

    @property
    def z(self):
        return self.z_trajectory[-1] if self.z_trajectory else 0.0


# ---------------------------------------------------------------- public API


def equal_power(stats: LinkStats, p_d) -> PowerAllocation:
    denom = stats.b_users.sum(axis=1) + stats.b_targets.sum(axis=1)
    if np.any(denom <= 0):
        raise ConfigurationError("AP without any beam gain; equal-power split undefined")
    eta = p_d / denom
    return PowerAllocation(
        np.repeat(eta[:, None], stats.k_u, axis=1),
        np.repeat(eta[:, None], stats.t_g, axis=1),
    )


def balanced_power(stats: LinkStats, p_d) -> PowerAllocation:
    """Half of each AP's power to its user beams and half to its sensing beams.

    Inside each half every beam gets the same transmit power, so users with
    weak statistics are not starved the way the equal-coefficient rule
    starves them when ``b_pq`` is many orders below ``b_pt``.
    """
    b, bt = stats.b_users, stats.b_targets
    share_u = 0.5 if stats.t_g else 1.0
    share_t = 1.0 - share_u if stats.k_u else 1.0
    n_u = np.maximum((b > 0).sum(axis=1, keepdims=True), 1)
    eta_u = np.where(b > 0, share_u * p_d / (n_u * np.where(b > 0, b, 1.0)), 0.0)
    eta_t = share_t * p_d / (max(stats.t_g, 1) * bt) if stats.t_g else bt.copy()
    return PowerAllocation(eta_u, eta_t)


def _denominator(alloc, stats, noise_power):
    return (
        np.einsum("pr,pqr->q", alloc.eta_users, stats.a_users)
        + np.einsum("pt,pqt->q", alloc.eta_targets, stats.a_targets)
        + noise_power
    )


def update_y(q, alloc: PowerAllocation, stats: LinkStats, noise_power):
    """Auxiliary variable maximizing the quadratic-transform surrogate of user ``q``."""
    return float(update_y_all(alloc, stats, noise_power)[q])


def update_y_all(alloc: PowerAllocation, stats: LinkStats, noise_power):
    num = np.einsum("pq,pq->q", np.sqrt(alloc.eta_users), stats.b_users)
    return num / _denominator(alloc, stats, noise_power)


def surrogate(q, y, alloc: PowerAllocation, stats: LinkStats, noise_power):
    """``2 y sum_p sqrt(eta_pq) b_pq - y^2 * (SINR denominator)``."""
    num = np.sqrt(alloc.eta_users[:, q]) @ stats.b_users[:, q]
    return float(2.0 * y * num - y**2 * _denominator(alloc, stats, noise_power)[q])


def fim_approx(alloc: PowerAllocation, info, target):
    """Single-beam position FIM of ``target``; ``info`` is ``(n_tx, t_g, 2, 2)``."""
    return np.einsum("p,pij->ij", alloc.eta_targets[:, target], info[:, target])


def _crlb_2x2(f):
    det = f[..., 0, 0] * f[..., 1, 1] - f[..., 0, 1] * f[..., 1, 0]
    tr = f[..., 0, 0] + f[..., 1, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(det > 0, tr / np.where(det > 0, det, 1.0), np.inf)
    return out


def sensing_constraint(alloc: PowerAllocation, target, info, gamma_crlb):
    """``(crlb, feasible)`` for one target; ``gamma_crlb`` is in m^2 (inclusive)."""
    crlb = float(_crlb_2x2(fim_approx(alloc, info, target)))
    return crlb, bool(crlb <= gamma_crlb)


def solve_subproblem(y, stats, info, noise_power, p_d, gamma_crlb, start, config=SolverConfig()):
    """Maximize the worst surrogate for fixed ``y`` (unnormalized units).

    ``start`` must satisfy the power and sensing constraints; it is kept if
    nothing better is found. Returns ``(allocation, z)``.
    """
    prob = _Problem(stats, info, noise_power, p_d, gamma_crlb)
    ys = np.asarray(y, dtype=float) * prob.sigma
    x, w = prob.to_vars(start)
    x, w, z = prob.maximize_surrogate(ys, x, w, config)
    return prob.to_alloc(x, w), z


def allocate_power(stats, info, noise_power, p_d, config=SolverConfig(), initial=None) -> SolveReport:
    """Alternate auxiliary updates and subproblem solves from the equal-power point.

    ``config.start`` may pick the balanced start instead. ``initial``
    overrides both; it must respect the power
    limit. A start violating the sensing limit is blended towards the
    sensing-only optimum until it complies.
    """
    if noise_power <= 0 or p_d <= 0:
        raise ArgumentError("noise power and P_d must be positive")
    prob = _Problem(stats, info, noise_power, p_d, config.gamma_crlb)
    if initial is not None:
        start = initial
    elif config.start == "balanced":
        start = balanced_power(stats, p_d)
    else:
        start = equal_power(stats, p_d)

    min_crlb, w_sense = prob.sensing_optimum(config)
    if prob.has_sensing and not min_crlb <= config.gamma_crlb:
        return _report(prob, start, [], 0, "infeasible", min_crlb, binding=["sensing"])

    x, w = prob.to_vars(start)
    x, w = prob.enforce_sensing(x, w, w_sense, config)
    traj = [float(np.min(prob.sinr(x, w)))]
    status = "max-iters"
    t = 0
    for t in range(1, config.max_iters + 1):
        ys = prob.y_opt(x, w)
        x, w, z = prob.maximize_surrogate(ys, x, w, config)
        traj.append(z)
        if abs(traj[-1] - traj[-2]) <= config.tolerance * max(abs(traj[-1]), 1e-300):
            status = "converged"
            break
    return _report(prob, prob.to_alloc(x, w), traj, t, status, min_crlb)


def _report(prob, alloc, traj, iters, status, min_crlb, binding=None):
    stats = prob.stats
    used = np.einsum("pq,pq->p", alloc.eta_users, stats.b_users) + np.einsum(
        "pt,pt->p", alloc.eta_targets, stats.b_targets
    )
    crlb = np.array([_crlb_2x2(fim_approx(alloc, prob.info, t)) for t in range(stats.t_g)])
    gamma = prob.gamma
    if not np.isfinite(gamma):
        sens_slack = np.full(stats.t_g, np.inf)
    elif gamma > 0:
        with np.errstate(invalid="ignore"):
            sens_slack = (gamma - crlb) / gamma
    else:
        sens_slack = np.full(stats.t_g, -np.inf)
    power_slack = (prob.p_d - used) / prob.p_d
    if binding is None:
        binding = [f"power[{p}]" for p in np.flatnonzero(power_slack < 1e-6)]
        binding += [f"sensing[{t}]" for t in np.flatnonzero(sens_slack < 1e-4)]
    return SolveReport(
        allocation=alloc,
        z_trajectory=[float(v) for v in traj],
        sinr=sinr_all(alloc, stats, prob.noise_power),
        power_slack=power_slack,
        sensing_slack=sens_slack,
        crlb=crlb,
        iterations=iters,
        status=status,
        binding=binding,
        min_crlb=float(min_crlb),
    )


# ------------------------------------------------------------ internal model


class _Problem:
    """Normalized problem data shared by the subproblem and sensing solvers."""

    def __init__(self, stats: LinkStats, info, noise_power, p_d, gamma_crlb):
        self.stats = stats
        self.info = np.asarray(info, dtype=float).reshape(stats.n_tx, stats.t_g, 2, 2)
        self.noise_power = float(noise_power)
        self.sigma = math.sqrt(noise_power)
        self.p_d = float(p_d)
        self.gamma = float(gamma_crlb)
        b, bt = stats.b_users, stats.b_targets
        if np.any(bt <= 0):
            raise ConfigurationError("sensing beams need positive trace")
        self.b, self.bt = b, bt
        pos = b > 0
        self.c = np.sqrt(b) / self.sigma
        safe_b = np.where(pos, b, 1.0)
        self.au = np.where(pos[:, None, :], stats.a_users / (safe_b[:, None, :] * noise_power), 0.0)
        self.at = stats.a_targets / (bt[:, None, :] * noise_power)
        self.g = self.info / bt[:, :, None, None]
        self.has_sensing = stats.t_g > 0 and np.isfinite(self.gamma)

    # conversions
    def to_vars(self, alloc: PowerAllocation):
        return np.sqrt(alloc.eta_users * self.b), alloc.eta_targets * self.bt

    def to_alloc(self, x, w):
        eta_u = np.where(self.b > 0, x**2 / np.where(self.b > 0, self.b, 1.0), 0.0)
        return PowerAllocation(eta_u, w / self.bt)

    # communication side
    def interference(self, x, w):
        return np.einsum("pr,pqr->q", x * x, self.au) + np.einsum("pt,pqt->q", w, self.at)

    def signal(self, x):
        return np.einsum("pq,pq->q", self.c, x)

    def sinr(self, x, w):
        return self.signal(x) ** 2 / (self.interference(x, w) + 1.0)

    def y_opt(self, x, w):
        return self.signal(x) / (self.interference(x, w) + 1.0)

    def surrogates(self, ys, x, w):
        return 2.0 * ys * self.signal(x) - ys**2 * (self.interference(x, w) + 1.0)

    def surrogate_grad(self, ys, weights, x):
        # gradient of sum_q weights_q * s_q
        wy2 = weights * ys**2
        gx = 2.0 * (weights * ys)[None, :] * self.c - 2.0 * x * np.einsum("q,pqr->pr", wy2, self.au)
        gw = -np.einsum("q,pqt->pt", wy2, self.at)
        return gx, gw

    # sensing side
    def fims(self, w):
        return np.einsum("pt,ptij->tij", w, self.g)

    def crlbs(self, w):
        return _crlb_2x2(self.fims(w))

    def crlb_grad(self, weights, w):
        f = self.fims(w)
        det = f[:, 0, 0] * f[:, 1, 1] - f[:, 0, 1] * f[:, 1, 0]
        det = np.where(det > 0, det, np.inf)  # singular FIMs contribute no gradient
        inv = np.stack(
            [np.stack([f[:, 1, 1], -f[:, 0, 1]], -1), np.stack([-f[:, 1, 0], f[:, 0, 0]], -1)], -2
        ) / det[:, None, None]
        inv2 = inv @ inv
        # d tr(F^-1) / d w_pt = -tr(F^-2 G_pt)
        return -np.einsum("t,tij,ptji->pt", weights, inv2, self.g)

    # feasible set
    def project(self, x, w):
        x = np.maximum(x, 0.0)
        w = np.maximum(w, 0.0)
        used = (x * x).sum(axis=1) + w.sum(axis=1)
        over = used > self.p_d
        if not np.any(over):
            return x, w
        xo, wo = x[over], w[over]
        nx = (xo * xo).sum(axis=1)
        # load(lam) = nx / (1 + 2 lam)^2 + sum(max(w - lam, 0)) is convex and
        # decreasing, so Newton from lam = 0 climbs monotonically to the root
        lam = np.zeros(len(xo))
        for _ in range(100):
            active = wo > lam[:, None]
            load = nx / (1.0 + 2.0 * lam) ** 2 + np.where(active, wo - lam[:, None], 0.0).sum(axis=1)
            slope = -4.0 * nx / (1.0 + 2.0 * lam) ** 3 - active.sum(axis=1)
            gap = load - self.p_d
            if np.all(gap <= 1e-15 * self.p_d):
                break
            lam = lam - np.where(gap > 0, gap / slope, 0.0)
        hi = lam
        x = x.copy()
        w = w.copy()
        x[over] = xo / (1.0 + 2.0 * hi[:, None])
        w[over] = np.maximum(wo - hi[:, None], 0.0)
        return x, w

    def linear_max(self, gx, gw):
        """Maximum of ``<gx, x> + <gw, w>`` over the feasible set, per AP summed."""
        a = np.sqrt((np.maximum(gx, 0.0) ** 2).sum(axis=1))
        cw = np.maximum(gw.max(axis=1), 0.0) if gw.shape[1] else np.zeros(len(a))
        with np.errstate(divide="ignore"):
            u = np.where(cw > 0, np.minimum(self.p_d, a**2 / (4.0 * np.where(cw > 0, cw, 1.0) ** 2)), self.p_d)
        return float((a * np.sqrt(u) + cw * (self.p_d - u)).sum())

    # sensing-only optimum
    def sensing_terms(self, w):
        """Per target: CRLB, its gradient ``(n_tx,)`` and Hessian ``(n_tx, n_tx)`` in ``w[:, t]``."""
        f = self.fims(w)
        out = []
        for t in range(f.shape[0]):
            det = f[t, 0, 0] * f[t, 1, 1] - f[t, 0, 1] * f[t, 1, 0]
            if not det > 0:
                out.append((np.inf, None, None))
                continue
            inv = np.array([[f[t, 1, 1], -f[t, 0, 1]], [-f[t, 1, 0], f[t, 0, 0]]]) / det
            a = np.einsum("ij,pjk->pik", inv, self.g[:, t])  # F^-1 G_p
            u = np.einsum("pij,ji->p", a, inv)  # tr(F^-1 G_p F^-1)
            hess = 2.0 * np.einsum("pij,qjk,ki->pq", a, a, inv)
            out.append((float(np.trace(inv)), -u, hess))
        return out

    def sensing_optimum(self, config):
        """Minimize the worst approximate CRLB spending all power on sensing.

        Returns ``(min_crlb, w)``; the result is cached on the instance.
        """
        if getattr(self, "_sense", None) is not None:
            return self._sense
        n_tx, t_g = self.bt.shape
        if t_g == 0:
            self._sense = (0.0, np.zeros((n_tx, 0)))
            return self._sense
        w0 = np.full((n_tx, t_g), 0.9 * self.p_d / t_g)
        c0 = self.crlbs(w0)
        if not np.all(np.isfinite(c0)):
            self._sense = (float("inf"), w0)
            return self._sense
        n_w = n_tx * t_g
        ap_of = np.repeat(np.arange(n_tx), t_g)

        def cons(v, derivs=True):
            w = v[:n_w].reshape(n_tx, t_g)
            c = np.concatenate([v[n_w] - self.crlbs(w), self.p_d - w.sum(axis=1), v[:n_w]])
            if not derivs:
                return c
            terms = self.sensing_terms(w)
            jac = np.zeros((t_g + n_tx + n_w, n_w + 1))
            for t_i, (_, grad, _) in enumerate(terms):
                jac[t_i, np.arange(n_tx) * t_g + t_i] = -grad
                jac[t_i, n_w] = 1.0
            jac[t_g + ap_of, np.arange(n_w)] = -1.0
            jac[t_g + n_tx + np.arange(n_w), np.arange(n_w)] = 1.0

            def hess(lam):
                out = np.zeros((n_w + 1, n_w + 1))
                for t_i, (_, _, h) in enumerate(terms):
                    idx = np.arange(n_tx) * t_g + t_i
                    out[np.ix_(idx, idx)] += lam[t_i] * h
                return out

            return c, jac, hess

        obj = np.zeros(n_w + 1)
        obj[n_w] = -1.0
        v0 = np.concatenate([w0.ravel(), [1.5 * float(np.max(c0))]])
        v = _barrier(cons, obj, v0, config.ipm_tol)
        w = v[:n_w].reshape(n_tx, t_g)
        best = float(np.max(self.crlbs(w)))
        if not best <= float(np.max(c0)):
            best, w = float(np.max(c0)), w0
        self._sense = (best, w)
        return self._sense

    def enforce_sensing(self, x, w, w_sense, config):
        """Blend a start point towards the sensing optimum until every CRLB meets gamma."""
        if not self.has_sensing:
            return self.project(x, w)
        x, w = self.project(x, w)
        if np.all(self.crlbs(w) <= self.gamma):
            return x, w
        # blend in eta-space: the power is linear, the CRLB convex along the segment
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if np.all(self.crlbs((1 - mid) * w_sense + mid * w) <= self.gamma):
                lo = mid
            else:
                hi = mid
        lam = lo
        return np.sqrt(lam) * x, (1 - lam) * w_sense + lam * w

    # subproblem
    def margins(self, ys, x, w, z, z_norm):
        m = (self.surrogates(ys, x, w) - z) / z_norm
        if self.has_sensing:
            m = np.concatenate([m, 1.0 - self.crlbs(w) / self.gamma])
        return m

    def feasible_at(self, ys, z, z_norm, x0, w0, config):
        k = len(ys)
        mu = config.smoothing

        def merit(x, w):
            m = self.margins(ys, x, w, z, z_norm)
            v, wt = _softmin(m, mu)
            gx, gw = self.surrogate_grad(ys, wt[:k] / z_norm, x)
            if self.has_sensing:
                gw = gw - self.crlb_grad(wt[k:], w) / self.gamma
            return v, gx, gw

        n = k + (self.bt.shape[1] if self.has_sensing else 0)
        slack = mu * math.log(max(n, 1))

        def stop(x, w, value, gx, gw):
            if np.min(self.margins(ys, x, w, z, z_norm)) >= 0.0:
                return True
            bound = value + self.linear_max(gx, gw) - (gx * x).sum() - (gw * w).sum()
            return bound + slack < 0.0

        x, w = _spg(merit, self.project, x0, w0, config.pg_max_iters, stop)
        ok = bool(np.min(self.margins(ys, x, w, z, z_norm)) >= 0.0)
        return ok, x, w

    def maximize_surrogate(self, ys, x, w, config):
        if config.method == "interior-point":
            return self.ipm_surrogate(ys, x, w, config)
        return self.bisect_surrogate(ys, x, w, config)

    def interior_start(self, ys, x, w, config):
        """A strictly feasible point near ``(x, w)`` or ``None``."""
        n_tx, t_g = self.bt.shape
        if self.has_sensing:
            min_crlb, w_sense = self.sensing_optimum(config)
            if not min_crlb < self.gamma:
                return None
        else:
            w_sense = np.full((n_tx, t_g), self.p_d / max(t_g, 1))
        # prefer a well-centred start; shrink less only when the CRLB needs it
        for eps in (0.05, 0.2, 0.5, 0.8, 0.95, 0.99):
            for shrink in (0.05, 1e-3, 1e-6):
                xb = math.sqrt(1.0 - eps) * x
                wb = (1.0 - eps) * w + eps * w_sense
                if t_g:
                    wb = np.maximum(wb, eps * 1e-3 * self.p_d / t_g)
                used = (xb * xb).sum(axis=1) + wb.sum(axis=1)
                kappa = min(1.0, (1.0 - shrink) * self.p_d / float(np.max(used)))
                xb, wb = math.sqrt(kappa) * xb, kappa * wb
                if self.has_sensing and not np.all(self.crlbs(wb) < self.gamma):
                    continue
                return xb, wb
        return None

    def ipm_surrogate(self, ys, x, w, config):
        x, w = self.project(x, w)
        z_start = float(np.min(self.surrogates(ys, x, w)))
        start = self.interior_start(ys, x, w, config)
        if start is None:
            return x, w, z_start
        n_tx, k_u = self.b.shape
        t_g = self.bt.shape[1]
        n_x, n_w = n_tx * k_u, n_tx * t_g
        n = n_x + n_w + 1
        n_t = t_g if self.has_sensing else 0
        m = k_u + n_tx + n_w + n_t
        ys2 = ys**2
        # constant parts of the constraint Jacobian
        jac0 = np.zeros((m, n))
        jx_lin = np.zeros((k_u, n_tx, k_u))
        jx_lin[np.arange(k_u), :, np.arange(k_u)] = 2.0 * ys[:, None] * self.c.T
        jac0[:k_u, n_x : n_x + n_w] = -(ys2[:, None, None] * self.at.transpose(1, 0, 2)).reshape(k_u, n_w)
        jac0[:k_u, -1] = -1.0
        jac0[k_u + np.repeat(np.arange(n_tx), t_g), n_x + np.arange(n_w)] = -1.0
        jac0[k_u + n_tx + np.arange(n_w), n_x + np.arange(n_w)] = 1.0
        au_q = self.au.transpose(1, 0, 2)  # [q, p, r]
        x_rows = k_u + np.repeat(np.arange(n_tx), k_u)

        def cons(v, derivs=True):
            xv = v[:n_x].reshape(n_tx, k_u)
            wv = v[n_x : n_x + n_w].reshape(n_tx, t_g)
            parts = [
                self.surrogates(ys, xv, wv) - v[-1],
                self.p_d - (xv * xv).sum(axis=1) - wv.sum(axis=1),
                v[n_x : n_x + n_w],
            ]
            if n_t:
                parts.append(self.gamma - self.crlbs(wv))
            c = np.concatenate(parts)
            if not derivs:
                return c
            jac = jac0.copy()
            jac[:k_u, :n_x] = (jx_lin - 2.0 * ys2[:, None, None] * au_q * xv[None, :, :]).reshape(k_u, n_x)
            jac[x_rows, np.arange(n_x)] = -2.0 * xv.ravel()
            terms = self.sensing_terms(wv) if n_t else []
            for t_i, (_, grad, _) in enumerate(terms):
                jac[k_u + n_tx + n_w + t_i, n_x + np.arange(n_tx) * t_g + t_i] = -grad

            def hess(lam):
                out = np.zeros((n, n))
                diag_x = 2.0 * np.einsum("q,qpr->pr", lam[:k_u] * ys2, au_q) + 2.0 * lam[k_u : k_u + n_tx, None]
                out[np.arange(n_x), np.arange(n_x)] = diag_x.ravel()
                for t_i, (_, _, h) in enumerate(terms):
                    idx = n_x + np.arange(n_tx) * t_g + t_i
                    out[np.ix_(idx, idx)] += lam[k_u + n_tx + n_w + t_i] * h
                return out

            return c, jac, hess

        xi, wi = start
        s0 = self.surrogates(ys, xi, wi)
        z0 = float(np.min(s0)) - 0.05 * max(float(np.ptp(s0)), abs(float(np.min(s0))), 1e-300)
        obj = np.zeros(n)
        obj[-1] = 1.0
        v = _barrier(cons, obj, np.concatenate([xi.ravel(), wi.ravel(), [z0]]), config.ipm_tol)
        xv = v[:n_x].reshape(n_tx, k_u)
        wv = v[n_x : n_x + n_w].reshape(n_tx, t_g)
        z_new = float(np.min(self.surrogates(ys, xv, wv)))
        if z_new >= z_start:
            return xv, wv, z_new
        return x, w, z_start

    def bisect_surrogate(self, ys, x, w, config):
        x, w = self.project(x, w)
        lo = float(np.min(self.surrogates(ys, x, w)))
        # each surrogate is at most 2 y sum_p c_pq sqrt(P_d) - y^2
        hi = float(np.min(2.0 * ys * self.c.sum(axis=0) * math.sqrt(self.p_d) - ys**2))
        z_floor = 1e-9 * max(hi, 1e-300)
        for _ in range(config.bisection_max_steps):
            if hi - lo <= config.bisection_tol * max(abs(hi), 1e-300):
                break
            base = max(lo, z_floor)
            mid = math.sqrt(base * hi) if hi / base > 4.0 else 0.5 * (base + hi)
            ok, xn, wn = self.feasible_at(ys, mid, max(mid, z_floor), x, w, config)
            if ok:
                x, w = xn, wn
                lo = float(np.min(self.surrogates(ys, x, w)))
            else:
                hi = mid
        return x, w, float(np.min(self.surrogates(ys, x, w)))


def _barrier(cons, obj, v0, tol, max_iters=300, mu_factor=40.0):
    """Log-barrier path following for ``max obj @ v s.t. c(v) >= 0``.

    Every ``c_i`` must be concave. ``cons(v)`` returns ``(c, jac, hess)``
    where ``hess(lam)`` is ``-sum_i lam_i * Hessian(c_i)``; with
    ``derivs=False`` only ``c``. ``v0`` must be strictly feasible. Each outer
    step centres ``t * obj @ v + sum log c`` with damped Newton, then raises
    ``t``; the duality gap on the central path is ``m / t``. ``max_iters``
    caps the total number of Newton steps.
    """
    v = np.asarray(v0, dtype=float).copy()
    c, jac, hess = cons(v)
    m = len(c)

    def newton(t):
        inv = 1.0 / c
        lhs = hess(inv) + (jac.T * inv**2) @ jac
        return lhs, jac.T @ inv

    # initial weight: the t whose barrier gradient is closest to centred
    t = m / max(abs(float(obj @ v)), 1e-300)
    try:
        lhs, g_bar = newton(1.0)
        h_obj = np.linalg.solve(lhs, obj)
        t_ls = -float(g_bar @ h_obj) / float(obj @ h_obj)
        if t_ls > 0:
            t = t_ls
    except np.linalg.LinAlgError:
        pass
    steps = 0
    while steps < max_iters:
        # centring
        while steps < max_iters:
            steps += 1
            lhs, g_bar = newton(t)
            grad = t * obj + g_bar
            # Jacobi scaling keeps the 1 / c**2 terms from wrecking the solve
            d = 1.0 / np.sqrt(np.maximum(np.diag(lhs), 1e-300))
            try:
                dv = d * np.linalg.solve(lhs * d[:, None] * d[None, :], d * grad)
            except np.linalg.LinAlgError:
                return v
            dec = float(grad @ dv)
            if not dec > 1e-7:
                break
            # barrier change as a difference, free of cancellation
            gain = t * float(obj @ dv)
            # concave rows reach zero no later than their linearization does
            slope = jac @ dv
            neg = slope < 0
            alpha = min(1.0, 0.99 * float(np.min(-c[neg] / slope[neg]))) if np.any(neg) else 1.0
            while alpha > 1e-14:
                c_new = cons(v + alpha * dv, derivs=False)
                if np.all(c_new > 0):
                    change = alpha * gain + float(np.sum(np.log(c_new / c)))
                    if change >= 0.01 * alpha * dec:
                        break
                alpha *= 0.5
            else:
                break
            v = v + alpha * dv
            c, jac, hess = cons(v)
        if m / t <= tol * max(abs(float(obj @ v)), 1e-300):
            break
        t *= mu_factor
    return v


def _softmin(m, mu):
    """Smooth minimum ``-mu log sum exp(-m / mu)`` and its weights."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return np.inf, m
    lo = np.min(m)
    if not np.isfinite(lo):
        weights = (m == lo).astype(float)
        return -np.inf, weights / weights.sum()
    e = np.exp(-(m - lo) / mu)
    s = e.sum()
    return float(lo - mu * math.log(s)), e / s


def _spg(merit, project, x, w, max_iters, stop=None):
    """Spectral projected-gradient ascent with Armijo backtracking."""
    x, w = project(x, w)
    f, gx, gw = merit(x, w)
    if not np.isfinite(f):
        return x, w
    gnorm = math.sqrt((gx * gx).sum() + (gw * gw).sum())
    alpha = 1.0 / max(gnorm, 1e-300)
    for it in range(max_iters):
        if stop is not None and stop(x, w, f, gx, gw):
            break
        px, pw = project(x + alpha * gx, w + alpha * gw)
        dx, dw = px - x, pw - w
        slope = (gx * dx).sum() + (gw * dw).sum()
        if slope <= 1e-15 * max(abs(f), 1.0):
            break
        step = 1.0
        for _ in range(40):
            xn, wn = x + step * dx, w + step * dw
            fn, gxn, gwn = merit(xn, wn)
            if np.isfinite(fn) and fn >= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        sx, sw = xn - x, wn - w
        yx, yw = gxn - gx, gwn - gw
        ss = (sx * sx).sum() + (sw * sw).sum()
        sy = (sx * yx).sum() + (sw * yw).sum()
        # concave merit: curvature along the step is non-positive
        alpha = ss / -sy if sy < 0 else alpha * 4.0
        alpha = min(max(alpha, 1e-12 / max(gnorm, 1e-300)), 1e12)
        x, w, f, gx, gw = xn, wn, fn, gxn, gwn
    return x, w
