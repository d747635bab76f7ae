"""Minimum-jerk trajectory model and recovery of its end point and duration.

The straight-line minimum-jerk reach from ``x0`` (at time ``t0``) to ``xf``
lasting ``tf`` seconds is::

    x(t) = x0 + (xf - x0) * (6 tau^5 - 15 tau^4 + 10 tau^3),  tau = (t - t0) / tf

:func:`fit_mjt` recovers ``xf`` and ``tf`` from a partial observation with
box constraints, using Levenberg-Marquardt on a sigmoid reparameterization
of the box and several duration starts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import quintic_blend
from .exceptions import NoFeasibleFit, TooFewPoints

POSITION_BOX = 0.5  # m around the last known position
MIN_REMAINING = 0.02  # s
MAX_REMAINING = 2.0  # s
DURATION_STARTS = (0.25, 0.75, 1.25, 1.75)  # remaining-time guesses, s
MAX_ITER = 200


@dataclass(frozen=True)
class MjtParams:
    x0: np.ndarray
    xf: np.ndarray
    t0: float
    tf: float

    def __post_init__(self):
        if not self.tf > 0:
            raise ValueError(f"tf must be > 0, got {self.tf}")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "xf", np.asarray(self.xf, dtype=float))


@dataclass(frozen=True)
class MjtFit:
    params: MjtParams
    residual_rms: float
    n_points: int
    converged: bool
    starts_tried: int
    now: float

    @property
    def remaining(self) -> float:
        """Predicted time from ``now`` until the movement ends."""
        return self.params.t0 + self.params.tf - self.now


def _tau(p: MjtParams, t):
    return np.clip((np.asarray(t, dtype=float) - p.t0) / p.tf, 0.0, 1.0)


def blend_rate(tau):
    """d/dtau of the quintic blend: 30 tau^4 - 60 tau^3 + 30 tau^2."""
    tau = np.asarray(tau, dtype=float)
    return 30.0 * tau**2 * (1.0 - tau) ** 2


def mjt_position(p: MjtParams, t):
    """Position at time(s) ``t``; clamps to ``x0`` before onset and ``xf`` after the end."""
    tau = _tau(p, t)
    s = quintic_blend(tau)
    out = p.x0 + np.multiply.outer(s, p.xf - p.x0)
    # exact end point rather than x0 + (xf - x0) * 1.0
    done = np.asarray(tau) >= 1.0
    if np.ndim(done) == 0:
        return p.xf.copy() if done else out
    out[done] = p.xf
    return out


def mjt_velocity(p: MjtParams, t):
    """Velocity at time(s) ``t``; zero outside ``[t0, t0 + tf]``."""
    t = np.asarray(t, dtype=float)
    raw = (t - p.t0) / p.tf
    inside = (raw >= 0.0) & (raw <= 1.0)
    rate = np.where(inside, blend_rate(np.clip(raw, 0.0, 1.0)), 0.0)
    return np.multiply.outer(rate, (p.xf - p.x0) / p.tf)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logit(u):
    return np.log(u) - np.log1p(-u)


class _BoxedProblem:
    """Residuals and Jacobian in the unconstrained coordinates ``z``."""

    def __init__(self, t, obs, x0, t0, now, lo, hi, rlo, rhi):
        self.t, self.obs, self.x0, self.t0, self.now = t, obs, x0, t0, now
        self.lo = np.append(lo, rlo)
        self.hi = np.append(hi, rhi)

    def natural(self, z):
        u = _sigmoid(z)
        theta = self.lo + (self.hi - self.lo) * u
        return theta, (self.hi - self.lo) * u * (1.0 - u)

    def tf_of(self, remaining):
        return self.now - self.t0 + remaining

    def residual_jac(self, z):
        theta, dtheta = self.natural(z)
        xf, tf = theta[:3], self.tf_of(theta[3])
        s_time = (self.t - self.t0) / tf
        tau = np.clip(s_time, 0.0, 1.0)
        s = quintic_blend(tau)
        delta = xf - self.x0
        model = self.x0 + np.outer(s, delta)
        r = (model - self.obs).ravel()
        n = len(self.t)
        jac = np.zeros((n, 3, 4))
        for k in range(3):
            jac[:, k, k] = s
        inside = (s_time > 0.0) & (s_time < 1.0)
        dtau_dtf = np.where(inside, -s_time / tf, 0.0)
        jac[:, :, 3] = np.outer(blend_rate(tau) * dtau_dtf, delta)
        jac_nat = jac.reshape(3 * n, 4)
        return r, jac_nat * dtheta, jac_nat

    def to_z(self, theta):
        span = self.hi - self.lo
        u = np.clip((theta - self.lo) / span, 1e-9, 1.0 - 1e-9)
        return _logit(u)


def _levenberg_marquardt(problem: _BoxedProblem, z0, max_iter=MAX_ITER, ftol=1e-15, xtol=1e-12, gtol=1e-14):
    """Minimize 0.5 |r(z)|^2; returns (z, cost, converged)."""
    z = np.array(z0, dtype=float)
    r, jac, _ = problem.residual_jac(z)
    cost = 0.5 * float(r @ r)
    mu = 1e-3
    for _ in range(max_iter):
        grad = jac.T @ r
        if np.max(np.abs(grad)) <= gtol:
            return z, cost, True
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-12)
        improved = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(jtj + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            z_new = z + step
            r_new, jac_new, _ = problem.residual_jac(z_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(z) + xtol)
                z, r, jac, cost = z_new, r_new, jac_new, cost_new
                mu = max(mu / 3.0, 1e-12)
                improved = True
                if rel <= ftol or small_step or cost == 0.0:
                    return z, cost, True
                break
            mu *= 4.0
        if not improved:
            # no descent direction left: a (local) minimum within precision
            return z, cost, True
    return z, cost, False


def fit_mjt(times, positions, t0: float, x0, last_known, now: float, *,
            box: float = POSITION_BOX, min_remaining: float = MIN_REMAINING,
            max_remaining: float = MAX_REMAINING, starts=DURATION_STARTS, max_iter: int = MAX_ITER) -> MjtFit:
    """Fit the end point and duration of a minimum-jerk reach to observed positions.

    Parameters
    ----------
    times, positions : array-like, shapes (n,), (n, 3)
        Observations at or after the onset time ``t0``.
    t0, x0 : float, array-like
        Onset time and position; held fixed.
    last_known : array-like
        Each axis of ``xf`` is bounded to ``last_known +/- box``.
    now : float
        Current time; the remaining duration ``t0 + tf - now`` is bounded to
        ``[min_remaining, max_remaining]``.

    Returns
    -------
    MjtFit
        Best fit over the duration starts (ties go to the earliest start).

    Raises
    ------
    TooFewPoints
        Fewer than 4 observations.
    NoFeasibleFit
        Every start produced a non-finite cost.
    """
    t = np.asarray(times, dtype=float)
    obs = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(t) < 4:
        raise TooFewPoints(f"need at least 4 observations after onset, got {len(t)}")
    if now < t.max() - 1e-12:
        raise ValueError("now must be >= the last observation time")
    x0 = np.asarray(x0, dtype=float)
    center = np.asarray(last_known, dtype=float)
    problem = _BoxedProblem(t, obs, x0, float(t0), float(now), center - box, center + box,
                            min_remaining, max_remaining)

    best = None
    any_converged = False
    for remaining in starts:
        tf = problem.tf_of(remaining)
        tau = np.clip((t - t0) / tf, 0.0, 1.0)
        s = quintic_blend(tau)
        denom = float(s @ s)
        # xf is linear in the model for fixed tf: start from its least-squares value
        if denom > 1e-12:
            xf_init = x0 + (s @ (obs - x0)) / denom
        else:
            xf_init = center
        xf_init = np.clip(xf_init, center - 0.999 * box, center + 0.999 * box)
        z0 = problem.to_z(np.append(xf_init, remaining))
        z, cost, ok = _levenberg_marquardt(problem, z0, max_iter=max_iter)
        if not np.isfinite(cost):
            continue
        any_converged |= ok
        if best is None or cost < best[1]:
            best = (z, cost)
    if best is None:
        raise NoFeasibleFit("all starts produced non-finite residuals")

    z, cost = best
    theta, _ = problem.natural(z)
    xf, remaining = theta[:3], theta[3]
    lo, hi = center - box, center + box
    assert np.all(xf >= lo - 1e-12) and np.all(xf <= hi + 1e-12), "xf escaped its box"
    assert min_remaining - 1e-12 <= remaining <= max_remaining + 1e-12

    _, _, jac_nat = problem.residual_jac(z)
    sv = np.linalg.svd(jac_nat / np.maximum(np.linalg.norm(jac_nat, axis=0), 1e-300), compute_uv=False)
    identifiable = sv[-1] > 1e-8 * sv[0] and np.all(np.linalg.norm(jac_nat, axis=0) > 1e-12)

    params = MjtParams(x0=x0, xf=xf, t0=float(t0), tf=problem.tf_of(remaining))
    rms = float(np.sqrt(2.0 * cost / obs.size))
    return MjtFit(params, rms, len(t), bool(any_converged and identifiable), len(starts), float(now))


def start_costs(times, positions, t0, x0, last_known, now, **kw):
    """Residual RMS of the fit obtained from each duration start alone."""
    starts = kw.pop("starts", DURATION_STARTS)
    return [fit_mjt(times, positions, t0, x0, last_known, now, starts=(s,), **kw).residual_rms for s in starts]
