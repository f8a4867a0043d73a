"""Hamiltonian integration of optimal paths.

Two steppers are provided behind one interface: a fixed-step classical RK4
and an adaptive Bulirsch-Stoer (modified midpoint + polynomial extrapolation
in h^2).  Both detect momentum blow-up: paths where |p| exceeds the
configured cutoff are truncated with a Diverged status rather than raising,
because divergence is data for the manifold analyses downstream.

The adaptive stepper is forced to resolve every kick: inside
[Lambda/2 - 3.5 tau_m, Lambda/2 + 3.5 tau_m] (mod Lambda) the step size is
capped at tau_m / 4, which guarantees at least 20 accepted steps across the
+-3 tau_m core of each kick, and steps are never allowed to straddle the
boundary of that region from outside.

Dense output at caller-specified times is produced by cubic Hermite
interpolation between accepted steps (4th-order accurate).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import MeasurementSchedule, PhasePoint, h_star_grad

_CAP_REGION_HALF = 3.5  # in units of tau_m, about each kick peak
_CAP_STEP = 0.25  # max step inside the cap region, in units of tau_m


class PathStatus(enum.Enum):
    COMPLETED = "completed"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class IntegratorConfig:
    """Stepper selection and numerical policy.

    ``method`` is "rk4" (fixed step ``dt``) or "bs" (adaptive Bulirsch-Stoer
    with initial step ``dt`` and tolerances ``rel_tol``/``abs_tol``).
    ``p_max`` is the divergence cutoff on |p| and ``max_steps`` bounds the
    number of accepted steps per path.
    """

    method: str = "bs"
    dt: float = 5e-3
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    p_max: float = 50.0
    max_steps: int = 2_000_000

    def __post_init__(self):
        if self.method not in ("rk4", "bs"):
            raise ValueError(f"unknown method {self.method!r}; use 'rk4' or 'bs'")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.p_max > 0:
            raise ValueError(f"p_max must be positive, got {self.p_max}")


@dataclass
class OpPath:
    """A time-sampled optimal-path solution.

    ``times`` are strictly increasing; when the path completed they span
    [t0, t_end], otherwise they stop at the last accepted step before the
    divergence time ``t_div``.
    """

    times: np.ndarray
    thetas: np.ndarray
    ps: np.ndarray
    status: PathStatus
    t_div: float | None = None

    @property
    def completed(self) -> bool:
        return self.status is PathStatus.COMPLETED

    def final_point(self) -> PhasePoint:
        return PhasePoint(float(self.thetas[-1]), float(self.ps[-1]))

    def at(self, t: float) -> PhasePoint:
        """State at a sampled time (exact grid match required)."""
        idx = np.searchsorted(self.times, t)
        if idx >= len(self.times) or not np.isclose(self.times[idx], t, atol=1e-12):
            raise KeyError(f"t={t} is not on the sampled grid of this path")
        return PhasePoint(float(self.thetas[idx]), float(self.ps[idx]))


class IntegrationBudgetError(RuntimeError):
    """Raised when a path exceeds the configured accepted-step budget."""


def hamilton_rhs(theta, p, t, sched: MeasurementSchedule):
    """Phase-space velocity (dtheta/dt, dp/dt) = (dH*/dp, -dH*/dtheta)."""
    dh_dth, dh_dp = h_star_grad(theta, p, t, sched)
    return dh_dp, -dh_dth


def _rhs_vec(y: np.ndarray, t: float, sched: MeasurementSchedule) -> np.ndarray:
    dth, dp = hamilton_rhs(y[0], y[1], t, sched)
    return np.array([dth, dp])


def _step_cap(t: float, sched: MeasurementSchedule) -> float:
    """Largest step the adaptive integrator may attempt from time t."""
    if sched.epsilon == 0.0:
        return np.inf
    lam = sched.capital_lambda
    r = min(_CAP_REGION_HALF * sched.tau_m, 0.49 * lam)
    tp = t % lam
    center = 0.5 * lam
    if abs(tp - center) <= r + 1e-12:
        return _CAP_STEP * sched.tau_m
    if tp < center - r:
        return (center - r) - tp
    return (lam + center - r) - tp


def _modified_midpoint(y, t, h, n, sched):
    hn = h / n
    z0 = y
    z1 = y + hn * _rhs_vec(y, t, sched)
    for m in range(1, n):
        z2 = z0 + 2.0 * hn * _rhs_vec(z1, t + m * hn, sched)
        z0, z1 = z1, z2
    return 0.5 * (z0 + z1 + hn * _rhs_vec(z1, t + h, sched))


_BS_SEQ = (2, 4, 6, 8, 10, 12, 14, 16)


def _bs_step(y, t, h, sched, cfg):
    """One adaptive Bulirsch-Stoer step attempt chain.

    Returns (y_new, h_used, h_next).  Shrinks h until the extrapolation
    error passes the tolerance; gives up (returns None for y_new) when h
    underflows, which for this system signals momentum escape faster than
    any resolvable scale.
    """
    while True:
        table = []
        accepted = None
        with np.errstate(over="ignore", invalid="ignore"):
            for j, n in enumerate(_BS_SEQ):
                tj = _modified_midpoint(y, t, h, n, sched)
                row = [tj]
                for k in range(1, j + 1):
                    num = row[k - 1] - table[j - 1][k - 1]
                    fac = (_BS_SEQ[j] / _BS_SEQ[j - k]) ** 2 - 1.0
                    row.append(row[k - 1] + num / fac)
                table.append(row)
                if j == 0:
                    continue
                est = row[j]
                if not np.all(np.isfinite(est)):
                    break
                scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(est))
                err = np.sqrt(np.mean(((row[j] - row[j - 1]) / scale) ** 2))
                if err <= 1.0:
                    grow = 0.9 * err ** (-1.0 / (2 * j + 1)) if err > 0 else 5.0
                    accepted = (est, h, h * min(5.0, max(0.2, grow)))
                    break
        if accepted is not None:
            return accepted
        h *= 0.25
        if h < 1e-14 * max(1.0, abs(t)):
            return None, h, h


def integrate(
    start: PhasePoint | tuple,
    t0: float,
    t_end: float,
    sched: MeasurementSchedule,
    cfg: IntegratorConfig,
    sample_times: Sequence[float] | None = None,
) -> OpPath:
    """Integrate Hamilton's equations from t0 to t_end.

    Parameters
    ----------
    start : PhasePoint
        Initial (theta0, p0).
    sample_times : sequence of float, optional
        Times at which to sample the solution (must lie in [t0, t_end]).
        Defaults to the accepted steps of the integrator.

    Returns
    -------
    OpPath
        Dense-sampled path.  If |p| exceeds ``cfg.p_max`` the path is
        truncated with status DIVERGED at that time; this is not an error.

    Raises
    ------
    IntegrationBudgetError
        If more than ``cfg.max_steps`` accepted steps are needed.
    """
    theta0, p0 = float(start[0]), float(start[1])
    if not t_end > t0:
        raise ValueError(f"t_end must exceed t0 (got t0={t0}, t_end={t_end})")

    y = np.array([theta0, p0])
    t = t0
    if abs(p0) > cfg.p_max or not np.all(np.isfinite(y)):
        return OpPath(
            np.empty(0), np.empty(0), np.empty(0), PathStatus.DIVERGED, t_div=t0
        )

    ts = [t0]
    ys = [y.copy()]
    fs = [_rhs_vec(y, t0, sched)]
    status = PathStatus.COMPLETED
    t_div = None

    n_accepted = 0
    h = cfg.dt
    while t < t_end - 1e-13 * max(1.0, abs(t_end)):
        if n_accepted >= cfg.max_steps:
            raise IntegrationBudgetError(
                f"exceeded {cfg.max_steps} steps integrating from "
                f"(theta0={theta0}, p0={p0}) at t0={t0}"
            )
        if cfg.method == "rk4":
            h_use = min(cfg.dt, t_end - t)
            with np.errstate(over="ignore", invalid="ignore"):
                k1 = fs[-1]
                k2 = _rhs_vec(y + 0.5 * h_use * k1, t + 0.5 * h_use, sched)
                k3 = _rhs_vec(y + 0.5 * h_use * k2, t + 0.5 * h_use, sched)
                k4 = _rhs_vec(y + h_use * k3, t + h_use, sched)
                y_new = y + (h_use / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            h_next = cfg.dt
        else:
            h_try = min(h, _step_cap(t, sched), t_end - t)
            y_new, h_use, h_next = _bs_step(y, t, h_try, sched, cfg)
            if y_new is None:
                status = PathStatus.DIVERGED
                t_div = t + h_use
                break
        t_new = t + h_use
        if not np.all(np.isfinite(y_new)) or abs(y_new[1]) > cfg.p_max:
            status = PathStatus.DIVERGED
            t_div = t_new
            break
        y = y_new
        t = t_new
        h = h_next
        ts.append(t)
        ys.append(y.copy())
        fs.append(_rhs_vec(y, t, sched))
        n_accepted += 1

    t_arr = np.array(ts)
    y_arr = np.array(ys)
    f_arr = np.array(fs)
    if sample_times is None:
        return OpPath(t_arr, y_arr[:, 0].copy(), y_arr[:, 1].copy(), status, t_div)

    want = np.asarray(sample_times, dtype=float)
    keep = want <= t_arr[-1] + 1e-12
    want = want[keep]
    th_s, p_s = _hermite_sample(t_arr, y_arr, f_arr, want)
    return OpPath(want, th_s, p_s, status, t_div)


def _hermite_sample(t_arr, y_arr, f_arr, want):
    """Cubic Hermite interpolation of (theta, p) at the requested times."""
    if len(t_arr) == 1:
        ones = np.ones_like(want)
        return y_arr[0, 0] * ones, y_arr[0, 1] * ones
    idx = np.clip(np.searchsorted(t_arr, want, side="right") - 1, 0, len(t_arr) - 2)
    exact_end = want >= t_arr[-1] - 1e-15
    t0 = t_arr[idx]
    t1 = t_arr[idx + 1]
    hseg = t1 - t0
    u = np.where(exact_end, 1.0, (want - t0) / hseg)
    u2 = u * u
    u3 = u2 * u
    h00 = 2 * u3 - 3 * u2 + 1
    h10 = u3 - 2 * u2 + u
    h01 = -2 * u3 + 3 * u2
    h11 = u3 - u2
    out = []
    for col in (0, 1):
        y0 = y_arr[idx, col]
        y1 = y_arr[idx + 1, col]
        f0 = f_arr[idx, col]
        f1 = f_arr[idx + 1, col]
        out.append(h00 * y0 + h10 * hseg * f0 + h01 * y1 + h11 * hseg * f1)
    return out[0], out[1]


@dataclass(frozen=True)
class FlowResult:
    """Endpoint of a flow map: final point, or the divergence record."""

    point: PhasePoint | None
    status: PathStatus
    t_div: float | None = None

    @property
    def diverged(self) -> bool:
        return self.status is PathStatus.DIVERGED


def flow_map(
    start: PhasePoint | tuple,
    t0: float,
    t_end: float,
    sched: MeasurementSchedule,
    cfg: IntegratorConfig,
) -> FlowResult:
    """Endpoint-only convenience wrapper around `integrate`."""
    path = integrate(start, t0, t_end, sched, cfg, sample_times=(t_end,))
    if not path.completed:
        return FlowResult(None, path.status, path.t_div)
    return FlowResult(path.final_point(), path.status, None)
