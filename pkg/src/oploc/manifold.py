"""Lagrange-manifold propagation, refinement, and multipath analysis.

The manifold of interest collects, for one initial angle theta0, the final
states (theta_T, p_T) of every initial momentum p0 in a range.  Folds of the
final curve (zeros of the Jacobian d theta_T / d p0) bound caustic regions
where several optimal paths share the same boundary conditions.

Because the final curve stretches exponentially in the chaotic regime, the
momentum grid is refined adaptively: whenever two adjacent surviving points
land too far apart at the final time, the midpoint momentum is integrated,
and the process repeats until every gap passes (or a budget is reached).
Momenta whose paths diverge are kept as data; they delimit the manifold
into live segments, and the boundary between a live and a divergent
momentum is localized by bisection down to ``min_dp0`` spacing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .batch import integrate_batch
from .chaos import bloch_distance
from .integrator import IntegratorConfig
from .model import MeasurementSchedule

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RefineConfig:
    """Gap criteria and budgets for adaptive manifold refinement."""

    max_gap_theta: float = 0.02
    max_gap_p: float = 0.05
    min_dp0: float = 1e-12
    max_points: int = 2_000_000
    max_iterations: int = 80
    n_seed: int = 513

    def __post_init__(self):
        if not (self.max_gap_theta > 0 and self.max_gap_p > 0):
            raise ValueError("gap thresholds must be positive")
        if self.n_seed < 2:
            raise ValueError("need at least two seed momenta")


@dataclass
class Manifold:
    """Refined manifold samples at time T, sorted strictly ascending in p0."""

    theta0: float
    t_final: float
    p0: np.ndarray
    theta_T: np.ndarray  # unwrapped
    p_T: np.ndarray
    alive: np.ndarray
    t_div: np.ndarray
    iterations: int
    total_integrations: int
    truncated: bool
    unresolved_gaps: int
    wall_time_s: float
    # optional dense time sampling (set when sample_times was requested)
    sample_times: np.ndarray | None = None
    sample_theta: np.ndarray | None = None  # (n_times, n_points)
    sample_p: np.ndarray | None = None
    sample_alive: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return self.p0.size

    def live_runs(self) -> list[slice]:
        """Maximal runs of consecutive surviving points, as slices."""
        return _runs(self.alive)

    def winding(self) -> np.ndarray:
        """Winding counts floor((theta_T - theta0) / 2 pi) per point."""
        return np.floor((self.theta_T - self.theta0) / TWO_PI).astype(int)


def _runs(mask: np.ndarray) -> list[slice]:
    out = []
    n = mask.size
    i = 0
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            out.append(slice(i, j))
            i = j
        else:
            i += 1
    return out


def propagate(
    theta0: float,
    p0_range: tuple[float, float],
    t_final: float,
    sched: MeasurementSchedule,
    cfg: IntegratorConfig,
    refine: RefineConfig = RefineConfig(),
    sample_times: Sequence[float] | None = None,
    threads: int = 1,
) -> Manifold:
    """Propagate and gap-refine the manifold for one initial angle.

    Returns a Manifold whose adjacent surviving points satisfy both gap
    bounds (|d theta_T| <= max_gap_theta and |d p_T| <= max_gap_p) unless a
    budget was exhausted, in which case ``truncated`` is set and
    ``unresolved_gaps`` counts the live pairs still failing.
    """
    lo, hi = float(p0_range[0]), float(p0_range[1])
    if not hi > lo:
        raise ValueError(f"empty p0 range [{lo}, {hi}]")
    t_start = time.perf_counter()
    want = np.asarray(sample_times, dtype=float) if sample_times is not None else None

    p0 = np.linspace(lo, hi, refine.n_seed)
    res = integrate_batch(
        p0 * 0.0 + theta0, p0, 0.0, t_final, sched, cfg,
        sample_times=want, threads=threads,
    )
    th_T, p_T, alive, t_div = res.theta, res.p, res.alive, res.t_div
    blocks = [(p0, res)] if want is not None else None

    total = p0.size
    iterations = 0
    truncated = False
    while iterations < refine.max_iterations:
        bad = _bad_pairs(p0, th_T, p_T, alive, refine)
        if not bad.any():
            break
        mids = 0.5 * (p0[:-1][bad] + p0[1:][bad])
        if total + mids.size > refine.max_points:
            room = refine.max_points - total
            if room <= 0:
                truncated = True
                break
            mids = mids[:room]
            truncated = True
        res = integrate_batch(
            mids * 0.0 + theta0, mids, 0.0, t_final, sched, cfg,
            sample_times=want, threads=threads,
        )
        if blocks is not None:
            blocks.append((mids, res))
        idx = np.searchsorted(p0, mids)
        p0 = np.insert(p0, idx, mids)
        th_T = np.insert(th_T, idx, res.theta)
        p_T = np.insert(p_T, idx, res.p)
        alive = np.insert(alive, idx, res.alive)
        t_div = np.insert(t_div, idx, res.t_div)
        total += mids.size
        iterations += 1
        if truncated:
            break
    else:
        truncated = True

    bad = _bad_pairs(p0, th_T, p_T, alive, refine, spacing_limited=False)
    live_bad = bad & alive[:-1] & alive[1:]
    unresolved = int(live_bad.sum())
    if unresolved:
        truncated = True

    man = Manifold(
        theta0,
        t_final,
        p0,
        th_T,
        p_T,
        alive,
        t_div,
        iterations,
        total,
        truncated,
        unresolved,
        time.perf_counter() - t_start,
    )
    if blocks is not None:
        _attach_samples(man, blocks, want)
    return man


def _bad_pairs(p0, th_T, p_T, alive, refine, spacing_limited=True):
    """Adjacent pairs needing a midpoint: live gaps too wide, or an
    unlocalized live/divergent boundary.  Divergent-divergent pairs carry
    no gap information and are never refined."""
    both = alive[:-1] & alive[1:]
    one = alive[:-1] ^ alive[1:]
    gap_bad = both & (
        (np.abs(np.diff(th_T)) > refine.max_gap_theta)
        | (np.abs(np.diff(p_T)) > refine.max_gap_p)
    )
    bad = gap_bad | one
    if spacing_limited:
        bad &= np.diff(p0) > refine.min_dp0
    return bad


def _attach_samples(man: Manifold, blocks, want):
    p_all = np.concatenate([b[0] for b in blocks])
    order = np.argsort(p_all, kind="stable")
    man.sample_times = want
    man.sample_theta = np.concatenate(
        [b[1].sample_theta for b in blocks], axis=1
    )[:, order]
    man.sample_p = np.concatenate([b[1].sample_p for b in blocks], axis=1)[:, order]
    man.sample_alive = np.concatenate(
        [b[1].sample_alive for b in blocks], axis=1
    )[:, order]


@dataclass
class JacobianField:
    """One-sided secant Jacobians and curvature at interior live points."""

    index: np.ndarray  # indices into the manifold's point arrays
    j_plus: np.ndarray
    j_minus: np.ndarray
    curvature: np.ndarray


def jacobians(man: Manifold) -> JacobianField:
    """Secant estimates J+- = d theta_T / d p0 per interior live point.

    Live segments with fewer than three points are omitted.  The curvature
    is the secant of J across the point.
    """
    idx_l, jp_l, jm_l, c_l = [], [], [], []
    for run in man.live_runs():
        n = run.stop - run.start
        if n < 3:
            continue
        p = man.p0[run]
        th = man.theta_T[run]
        sec = np.diff(th) / np.diff(p)
        jp = sec[1:]
        jm = sec[:-1]
        half_span = 0.5 * (p[2:] - p[:-2])
        idx_l.append(np.arange(run.start + 1, run.stop - 1))
        jp_l.append(jp)
        jm_l.append(jm)
        c_l.append((jp - jm) / half_span)
    if not idx_l:
        return JacobianField(
            np.empty(0, int), np.empty(0), np.empty(0), np.empty(0)
        )
    return JacobianField(
        np.concatenate(idx_l),
        np.concatenate(jp_l),
        np.concatenate(jm_l),
        np.concatenate(c_l),
    )


def catastrophe_count(man: Manifold) -> int:
    """Number of folds: sign changes of the secant Jacobian on live segments."""
    return sum(
        _sign_changes(np.diff(man.theta_T[run]) / np.diff(man.p0[run]))
        for run in man.live_runs()
        if run.stop - run.start >= 3
    )


def _sign_changes(values: np.ndarray) -> int:
    signs = np.sign(values)
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


@dataclass
class MultipathSolution:
    """One optimal-path solution linking theta0 to the target final angle."""

    p0: float
    theta_T: float  # unwrapped
    winding: int
    half_turns: float  # (theta_T - theta0)/pi rounded to halves, for display
    converged: bool
    residual: float  # |theta_T - target| at the returned p0


def find_multipaths(
    theta0: float,
    target_theta: float,
    t_final: float,
    p0_range: tuple[float, float],
    sched: MeasurementSchedule,
    cfg: IntegratorConfig,
    refine: RefineConfig = RefineConfig(),
    tol_theta: float = 1e-3,
    winding: int | None = None,
    manifold: Manifold | None = None,
    local_gap: float = 2e-3,
    local_margin: float = 0.2,
    threads: int = 1,
) -> list[MultipathSolution]:
    """All p0 in the range whose path ends at the target angle (mod 2 pi).

    Scans the refined manifold for bracketing sign changes on every winding
    branch, then bisection-refines each bracket in p0.  ``winding``
    restricts the search to one branch (useful when the target is specified
    as an unwrapped angle).  A precomputed ``manifold`` for the same
    configuration may be supplied to avoid re-propagation.

    The global gap criterion can hide a fold whose tip pokes only slightly
    past the target, so before scanning, every pair landing within
    ``local_margin`` of a target branch value is refined further, down to
    a theta gap of ``local_gap``.
    """
    target = float(target_theta) % TWO_PI
    man = manifold
    if man is None:
        man = propagate(theta0, p0_range, t_final, sched, cfg, refine, threads=threads)

    p0_arr, th_arr, alive_arr = _refine_near_targets(
        man, target, winding, local_gap, local_margin, sched, cfg, refine, threads
    )

    lo_list, hi_list, tgt_list = [], [], []
    for run in _runs(alive_arr):
        th = th_arr[run]
        p = p0_arr[run]
        for i in range(th.size - 1):
            a, b = th[i], th[i + 1]
            lo_m = math.ceil((min(a, b) - target) / TWO_PI - 1e-12)
            hi_m = math.floor((max(a, b) - target) / TWO_PI + 1e-12)
            for m in range(lo_m, hi_m + 1):
                tgt = target + TWO_PI * m
                if winding is not None and math.floor((tgt - theta0) / TWO_PI) != winding:
                    continue
                lo_list.append((p[i], a))
                hi_list.append((p[i + 1], b))
                tgt_list.append(tgt)
    if not tgt_list:
        return []

    p_lo = np.array([x[0] for x in lo_list])
    th_lo = np.array([x[1] for x in lo_list])
    p_hi = np.array([x[0] for x in hi_list])
    th_hi = np.array([x[1] for x in hi_list])
    tgt = np.array(tgt_list)

    active = np.ones(tgt.size, dtype=bool)
    broken = np.zeros(tgt.size, dtype=bool)
    best_p = 0.5 * (p_lo + p_hi)
    best_th = np.where(
        np.abs(th_lo - tgt) < np.abs(th_hi - tgt), th_lo, th_hi
    )
    max_iter = 100
    for _ in range(max_iter):
        run_idx = np.flatnonzero(
            active & (np.abs(best_th - tgt) > tol_theta) & (p_hi - p_lo > 1e-15)
        )
        if run_idx.size == 0:
            break
        mid = 0.5 * (p_lo[run_idx] + p_hi[run_idx])
        res = integrate_batch(
            np.full(run_idx.size, theta0), mid, 0.0, t_final, sched, cfg,
            threads=threads,
        )
        for j, k in enumerate(run_idx):
            if not res.alive[j]:
                # a divergent momentum inside the bracket: give up on this root
                broken[k] = True
                active[k] = False
                continue
            th_mid = res.theta[j]
            if abs(th_mid - tgt[k]) < abs(best_th[k] - tgt[k]):
                best_p[k] = mid[j]
                best_th[k] = th_mid
            if (th_lo[k] - tgt[k]) * (th_mid - tgt[k]) <= 0.0:
                p_hi[k], th_hi[k] = mid[j], th_mid
            else:
                p_lo[k], th_lo[k] = mid[j], th_mid

    out = []
    for k in range(tgt.size):
        resid = abs(best_th[k] - tgt[k])
        conv = (not broken[k]) and resid <= tol_theta
        wind = math.floor((best_th[k] - theta0) / TWO_PI)
        half = round(2.0 * (best_th[k] - theta0) / math.pi) / 2.0
        out.append(
            MultipathSolution(float(best_p[k]), float(best_th[k]), wind, half,
                              bool(conv), float(resid))
        )
    out.sort(key=lambda s: s.p0)
    return out


def _refine_near_targets(
    man: Manifold, target, winding, local_gap, local_margin,
    sched, cfg, refine, threads,
):
    """Extra gap refinement restricted to pairs near the target values.

    Returns refined (p0, theta_T, alive) copies; the manifold itself is
    left untouched.
    """
    p0 = man.p0.copy()
    th = man.theta_T.copy()
    alive = man.alive.copy()
    theta0 = man.theta0
    for _ in range(64):
        both = alive[:-1] & alive[1:]
        lo = np.minimum(th[:-1], th[1:])
        hi = np.maximum(th[:-1], th[1:])
        if winding is None:
            # distance from the pair's theta interval to the nearest branch
            # value target + 2 pi m, folded onto one period
            mid = 0.5 * (lo + hi) - target
            half = 0.5 * (hi - lo)
            folded = np.abs((mid + math.pi) % TWO_PI - math.pi)
            near = folded - half <= local_margin
        else:
            m = winding - math.floor((target - theta0) / TWO_PI)
            tgt = target + TWO_PI * m
            near = (lo - local_margin <= tgt) & (tgt <= hi + local_margin)
        bad = both & near & (hi - lo > local_gap) & (np.diff(p0) > refine.min_dp0)
        if not bad.any():
            break
        mids = 0.5 * (p0[:-1][bad] + p0[1:][bad])
        res = integrate_batch(
            np.full(mids.size, theta0), mids, 0.0, man.t_final, sched, cfg,
            threads=threads,
        )
        idx = np.searchsorted(p0, mids)
        p0 = np.insert(p0, idx, mids)
        th = np.insert(th, idx, res.theta)
        alive = np.insert(alive, idx, res.alive)
    return p0, th, alive


@dataclass
class StretchReport:
    """Deformation measures of the manifold over a list of times.

    s1, s2, s3 are logarithmic growth rates of the manifold length, of the
    weighted average |Jacobian|, and of the catastrophe count; lambda_av is
    the manifold-averaged finite-time Lyapunov exponent computed from two
    auxiliary manifolds offset by +-delta_theta0.
    """

    times: np.ndarray
    length: np.ndarray
    j_av: np.ndarray
    n_c: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    lambda_av: np.ndarray
    d_av: np.ndarray
    d_av0: float
    total_integrations: int = 0


def stretch_report(
    theta0: float,
    p0_range: tuple[float, float],
    times: Sequence[float],
    sched: MeasurementSchedule,
    cfg: IntegratorConfig,
    refine: RefineConfig = RefineConfig(),
    delta_theta0: float = 0.01,
    threads: int = 1,
) -> StretchReport:
    """Manifold stretching parameters and averaged exponent at each time.

    The momentum grid is refined once, against the gap criteria at the
    final (largest) time, and that grid is evaluated at every requested
    time; the two auxiliary manifolds are integrated on the same grid.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be strictly increasing and positive")
    t_max = float(times[-1])

    man = propagate(
        theta0, p0_range, t_max, sched, cfg, refine,
        sample_times=times, threads=threads,
    )
    p0 = man.p0
    aux = [
        integrate_batch(
            np.full(p0.size, theta0 + s * delta_theta0), p0, 0.0, t_max,
            sched, cfg, sample_times=times, threads=threads,
        )
        for s in (+1.0, -1.0)
    ]
    total = man.total_integrations + 2 * p0.size

    n_t = times.size
    length = np.empty(n_t)
    j_av = np.empty(n_t)
    n_c = np.zeros(n_t, dtype=int)
    d_av = np.empty(n_t)
    length0 = float(p0[-1] - p0[0])
    d_av0 = float(bloch_distance(0.0, delta_theta0))

    for k in range(n_t):
        th_k = man.sample_theta[k]
        alive_k = man.sample_alive[k]
        length[k] = sum(
            float(np.sum(np.sqrt(np.diff(th_k[r]) ** 2 + np.diff(p0[r]) ** 2)))
            for r in _runs(alive_k)
        )
        j_av[k] = _weighted_j_av(p0, th_k, alive_k)
        n_c[k] = sum(
            _sign_changes(np.diff(th_k[r]) / np.diff(p0[r]))
            for r in _runs(alive_k)
            if r.stop - r.start >= 3
        )
        all_alive = alive_k & aux[0].sample_alive[k] & aux[1].sample_alive[k]
        d_av[k] = _weighted_d_av(
            p0, th_k, aux[0].sample_theta[k], aux[1].sample_theta[k], all_alive
        )

    s1 = np.log(length / length0) / times
    s2 = np.log(j_av + 1.0) / times
    s3 = np.log(1.0 + n_c) / times
    with np.errstate(divide="ignore", invalid="ignore"):
        lambda_av = np.log(d_av / d_av0) / times
    return StretchReport(
        times, length, j_av, n_c, s1, s2, s3, lambda_av, d_av, d_av0, total
    )


def _interior_weights(p: np.ndarray) -> np.ndarray:
    """Momentum-fraction weights 0.5 (p_{i+1} - p_{i-1}), normalized to 1."""
    w = 0.5 * (p[2:] - p[:-2])
    return w / np.sum(w)


def _weighted_j_av(p0, th, alive) -> float:
    num = 0.0
    wsum = 0.0
    for r in _runs(alive):
        if r.stop - r.start < 3:
            continue
        p = p0[r]
        th_r = th[r]
        sec = np.diff(th_r) / np.diff(p)
        w = 0.5 * (p[2:] - p[:-2])
        num += float(np.sum(w * 0.5 * (np.abs(sec[1:]) + np.abs(sec[:-1]))))
        wsum += float(np.sum(w))
    return num / wsum if wsum > 0 else np.nan


def _weighted_d_av(p0, th, th_plus, th_minus, alive) -> float:
    num = 0.0
    wsum = 0.0
    for r in _runs(alive):
        if r.stop - r.start < 3:
            continue
        p = p0[r]
        w = 0.5 * (p[2:] - p[:-2])
        inner = slice(r.start + 1, r.stop - 1)
        d = 0.5 * bloch_distance(th[inner], th_plus[inner]) + 0.5 * bloch_distance(
            th[inner], th_minus[inner]
        )
        num += float(np.sum(w * d))
        wsum += float(np.sum(w))
    return num / wsum if wsum > 0 else np.nan
