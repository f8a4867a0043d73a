"""Path-pair divergence, finite-time Lyapunov exponents, phase portraits.

Chaos in the optimal paths is diagnosed by integrating a main path together
with two auxiliary paths offset by +-delta_theta0 in the initial angle (at
identical p0), measuring their separation on the Bloch sphere in the theta
direction only, and forming the finite-time exponent
lambda(t) = ln(D(t)/D0) / t.

Stroboscopic phase portraits record (theta mod 2pi, p, lambda) for a grid of
initial conditions at the times t = n * Lambda, halfway between kicks (kicks
peak at (n + 1/2) * Lambda).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .batch import integrate_batch
from .integrator import IntegratorConfig
from .model import MeasurementSchedule, PhasePoint

DEFAULT_DELTA_THETA0 = 0.01


def bloch_distance(theta_a, theta_b):
    """Euclidean chord distance on the Bloch circle, in [0, 2]."""
    return 2.0 * np.abs(np.sin(0.5 * (theta_a - theta_b)))


@dataclass
class PathTriplet:
    """A main path and its +-delta_theta0 auxiliaries on one time grid."""

    theta0: float
    p0: float
    delta_theta0: float
    times: np.ndarray
    theta_main: np.ndarray
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    p_main: np.ndarray
    alive: np.ndarray  # (3, n_times): main, plus, minus

    @property
    def d0(self) -> float:
        return float(bloch_distance(self.theta0, self.theta0 + self.delta_theta0))


class DivergedPathError(RuntimeError):
    """A member of a path triplet diverged before the requested time."""


def make_triplet(
    start: PhasePoint | tuple,
    t0: float,
    t_end: float,
    sched: MeasurementSchedule,
    cfg: IntegratorConfig,
    sample_times: Sequence[float],
    delta_theta0: float = DEFAULT_DELTA_THETA0,
) -> PathTriplet:
    """Integrate a main path plus its two auxiliaries on a shared grid."""
    if delta_theta0 <= 0:
        raise ValueError("delta_theta0 must be positive")
    theta0, p0 = float(start[0]), float(start[1])
    res = integrate_batch(
        [theta0, theta0 + delta_theta0, theta0 - delta_theta0],
        [p0, p0, p0],
        t0,
        t_end,
        sched,
        cfg,
        sample_times=np.asarray(sample_times, dtype=float),
    )
    return PathTriplet(
        theta0,
        p0,
        delta_theta0,
        res.sample_times,
        res.sample_theta[:, 0],
        res.sample_theta[:, 1],
        res.sample_theta[:, 2],
        res.sample_p[:, 0],
        res.sample_alive.T.copy(),
    )


def _grid_index(trip: PathTriplet, t: float) -> int:
    idx = int(np.searchsorted(trip.times, t))
    if idx >= len(trip.times) or abs(trip.times[idx] - t) > 1e-9:
        raise KeyError(f"t={t} is not on the triplet's time grid")
    for name, row in zip(("main", "plus", "minus"), trip.alive):
        if not row[idx]:
            raise DivergedPathError(f"{name} path diverged before t={t}")
    return idx


def triplet_distance(trip: PathTriplet, t: float) -> float:
    """Symmetrized Bloch-circle distance D(t) between main and auxiliaries."""
    i = _grid_index(trip, t)
    return float(
        0.5 * bloch_distance(trip.theta_main[i], trip.theta_plus[i])
        + 0.5 * bloch_distance(trip.theta_main[i], trip.theta_minus[i])
    )


def lyapunov(trip: PathTriplet, t: float) -> float:
    """Finite-time Lyapunov exponent lambda(t) = ln(D(t)/D0)/t, in MHz."""
    if t <= 0:
        raise ValueError("lambda(t) is undefined at t <= 0")
    return math_log(triplet_distance(trip, t) / trip.d0) / t


def math_log(x: float) -> float:
    # isolated so a zero distance produces -inf rather than an exception
    with np.errstate(divide="ignore"):
        return float(np.log(x))


@dataclass
class LyapunovSeries:
    """D(t) and lambda(t) on the triplet's grid, restricted to t > 0."""

    times: np.ndarray
    d: np.ndarray
    lam: np.ndarray


def lyapunov_series(trip: PathTriplet) -> LyapunovSeries:
    """Distance and exponent at every grid time where all three paths live."""
    ok = trip.alive.all(axis=0) & (trip.times > 0)
    t = trip.times[ok]
    d = 0.5 * bloch_distance(trip.theta_main[ok], trip.theta_plus[ok]) + (
        0.5 * bloch_distance(trip.theta_main[ok], trip.theta_minus[ok])
    )
    with np.errstate(divide="ignore"):
        lam = np.log(d / trip.d0) / t
    return LyapunovSeries(t, d, lam)


@dataclass
class PortraitRecord:
    theta0: float
    p0: float
    n: int
    theta_mod: float
    p: float
    lam: float  # NaN when an auxiliary path has diverged
    status: str  # "ok" or "aux_diverged"


@dataclass
class StroboscopicPortrait:
    """Strobe-time records for a grid of initial conditions.

    Strobes are at t_n = n * Lambda (n >= 1), halfway between kicks.
    Initial conditions whose main path has diverged stop contributing
    after their divergence time.
    """

    sched: MeasurementSchedule
    delta_theta0: float
    n_strobes: int
    records: list[PortraitRecord] = field(default_factory=list)

    def write_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(
            ["theta0", "p0", "n", "theta_mod_2pi", "p", "lambda_MHz", "status"]
        )
        for r in self.records:
            writer.writerow(
                [
                    f"{r.theta0:.12g}",
                    f"{r.p0:.12g}",
                    r.n,
                    f"{r.theta_mod:.12g}",
                    f"{r.p:.12g}",
                    "nan" if np.isnan(r.lam) else f"{r.lam:.12g}",
                    r.status,
                ]
            )


def portrait(
    ic_grid: Sequence[PhasePoint | tuple],
    n_strobes: int,
    sched: MeasurementSchedule,
    cfg: IntegratorConfig,
    delta_theta0: float = DEFAULT_DELTA_THETA0,
    threads: int = 1,
) -> StroboscopicPortrait:
    """Stroboscopic phase portrait colored by the finite-time exponent."""
    if n_strobes < 1:
        raise ValueError("need at least one strobe")
    ics = [(float(q[0]), float(q[1])) for q in ic_grid]
    n_ic = len(ics)
    theta0 = np.empty(3 * n_ic)
    p0 = np.empty(3 * n_ic)
    for i, (th, p) in enumerate(ics):
        theta0[3 * i : 3 * i + 3] = (th, th + delta_theta0, th - delta_theta0)
        p0[3 * i : 3 * i + 3] = p
    lam_grid = sched.capital_lambda
    strobe_times = lam_grid * np.arange(1, n_strobes + 1)
    res = integrate_batch(
        theta0, p0, 0.0, strobe_times[-1], sched, cfg,
        sample_times=strobe_times, threads=threads,
    )
    d0 = bloch_distance(0.0, delta_theta0)
    out = StroboscopicPortrait(sched, delta_theta0, n_strobes)
    two_pi = 2.0 * np.pi
    for i, (th_init, p_init) in enumerate(ics):
        main, plus, minus = 3 * i, 3 * i + 1, 3 * i + 2
        for k, t in enumerate(strobe_times):
            if not res.sample_alive[k, main]:
                break
            aux_ok = res.sample_alive[k, plus] and res.sample_alive[k, minus]
            if aux_ok:
                d = 0.5 * bloch_distance(
                    res.sample_theta[k, main], res.sample_theta[k, plus]
                ) + 0.5 * bloch_distance(
                    res.sample_theta[k, main], res.sample_theta[k, minus]
                )
                lam = math_log(d / d0) / t
                status = "ok"
            else:
                lam = np.nan
                status = "aux_diverged"
            out.records.append(
                PortraitRecord(
                    th_init,
                    p_init,
                    k + 1,
                    float(res.sample_theta[k, main] % two_pi),
                    float(res.sample_p[k, main]),
                    lam,
                    status,
                )
            )
    return out


def ic_mesh(p_values, theta_count: int, p_offsets=(0.0,)) -> list[PhasePoint]:
    """Initial conditions spread across theta for each p0 (+ optional offsets)."""
    thetas = np.linspace(0.0, 2.0 * np.pi, theta_count, endpoint=False)
    out = []
    for p in p_values:
        for off in p_offsets:
            for th in thetas:
                out.append(PhasePoint(float(th), float(p + off)))
    return out
