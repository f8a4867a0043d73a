"""Monte-Carlo stochastic trajectories of the doubly monitored qubit.

Each trajectory evolves a pure state on the xz great circle by the exact
normalized two-operator Bayesian update per time step: readouts are drawn
from their Gaussian distributions given the current state, then the x and z
measurement back-actions are applied in closed form and the state is
renormalized.  This sidesteps the discretization bias of Euler SDE schemes
and preserves purity by construction.

The angle series of each trajectory is unwrapped by continuity, so winding
counts about the Bloch circle are available for post-selection grouping.
Per-trajectory random streams are derived deterministically from
(seed, trajectory index), making ensembles reproducible regardless of how
they are batched.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import MeasurementSchedule, Readouts, tau_z_of_t

_KICK_SUBSTEP_REGION = 3.5  # in units of tau_m about each kick peak
_TRAJ_BATCH = 8192


@dataclass(frozen=True)
class SqtConfig:
    """Ensemble size, update interval, seed, and initial state."""

    dt: float = 1e-3
    n_traj: int = 10_000
    seed: int = 0
    theta0: float = 0.0
    kick_substeps: int = 10
    n_record: int = 400

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_traj < 1:
            raise ValueError("need at least one trajectory")
        if self.kick_substeps < 1:
            raise ValueError("kick_substeps must be >= 1")


def sample_readout(theta, dt: float, tau_x: float, tau_z: float, rng) -> Readouts:
    """Draw (r_x, r_z) given the state: means (sin, cos) theta, variances tau/dt."""
    theta = np.asarray(theta, dtype=float)
    r_x = np.sin(theta) + math.sqrt(tau_x / dt) * rng.standard_normal(theta.shape)
    r_z = np.cos(theta) + math.sqrt(tau_z / dt) * rng.standard_normal(theta.shape)
    return Readouts(r_x, r_z)


def _apply_x(x, z, r_x, dt, tau_x):
    """Exact back-action of an x readout over dt on unit-circle coordinates."""
    u = r_x * dt / tau_x
    ch, sh = np.cosh(u), np.sinh(u)
    norm = ch + x * sh
    return (x * ch + sh) / norm, z / norm


def _apply_z(x, z, r_z, dt, tau_z):
    u = r_z * dt / tau_z
    ch, sh = np.cosh(u), np.sinh(u)
    norm = ch + z * sh
    return x / norm, (z * ch + sh) / norm


def bayes_step(theta, readouts: Readouts, dt: float, sched: MeasurementSchedule, t):
    """One exact Bayesian update of the angle; returns unwrapped theta'.

    The increment is computed from the rotation between the old and new
    unit-circle coordinates, so the result continues the unwrapped branch
    of the input angle.
    """
    theta = np.asarray(theta, dtype=float)
    x, z = np.sin(theta), np.cos(theta)
    tz = tau_z_of_t(t, sched)
    x1, z1 = _apply_x(x, z, readouts.r_x, dt, sched.tau_x)
    x2, z2 = _apply_z(x1, z1, readouts.r_z, dt, tz)
    nrm = np.sqrt(x2 * x2 + z2 * z2)
    x2, z2 = x2 / nrm, z2 / nrm
    dtheta = np.arctan2(x2 * z - z2 * x, x2 * x + z2 * z)
    return theta + dtheta


def bayes_step_bloch(bloch, r_x, r_z, dt, tau_x, tau_z):
    """Exact two-operator update of a full (x, y, z) Bloch vector.

    Used to verify that the y component stays decoupled at zero; the
    in-plane simulation then works with theta alone.
    """
    x, y, z = bloch
    u = r_x * dt / tau_x
    ch, sh = math.cosh(u), math.sinh(u)
    n1 = ch + x * sh
    x, y, z = (x * ch + sh) / n1, y / n1, z / n1
    u = r_z * dt / tau_z
    ch, sh = math.cosh(u), math.sinh(u)
    n2 = ch + z * sh
    return np.array([x / n2, y / n2, (z * ch + sh) / n2])


def _step_schedule(sched: MeasurementSchedule, t0: float, t_final: float, cfg: SqtConfig):
    """Update times over [t0, t_final]: cfg.dt grid, subdivided inside kicks."""
    if not t_final > t0:
        raise ValueError(f"t_final must exceed t0 (got t0={t0}, t_final={t_final})")
    n_main = int(round((t_final - t0) / cfg.dt))
    if abs(t0 + n_main * cfg.dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ValueError("t_final - t0 must be a multiple of dt")
    edges = t0 + cfg.dt * np.arange(n_main + 1)
    if sched.epsilon == 0.0 or cfg.kick_substeps == 1:
        return edges
    lam = sched.capital_lambda
    half = _KICK_SUBSTEP_REGION * sched.tau_m
    out = [edges[0]]
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b) % lam
        if abs(mid - 0.5 * lam) <= half + 0.5 * cfg.dt:
            out.extend(a + (b - a) * np.arange(1, cfg.kick_substeps + 1) / cfg.kick_substeps)
        else:
            out.append(b)
    return np.asarray(out)


@dataclass
class TrajectoryEnsemble:
    """Unwrapped angle histories of an ensemble on a recorded time grid."""

    config: SqtConfig
    sched: MeasurementSchedule
    t0: float
    t_final: float
    record_times: np.ndarray
    thetas: np.ndarray  # (n_traj, n_record)
    theta_final: np.ndarray  # exact state at t_final
    purity_residual: float
    min_tau_z: float


def simulate_ensemble(
    cfg: SqtConfig,
    t_final: float,
    sched: MeasurementSchedule,
    t0: float = 0.0,
) -> TrajectoryEnsemble:
    """Simulate n_traj independent monitored trajectories up to t_final.

    Warns when the effective update interval is not small compared to the
    minimum measurement time over the run.
    """
    edges = _step_schedule(sched, t0, t_final, cfg)
    dts = np.diff(edges)
    tz_mid = tau_z_of_t(edges[:-1] + 0.5 * dts, sched)
    min_tz = float(np.min(tz_mid))
    if np.max(dts / np.minimum(tz_mid, sched.tau_x)) > 0.1:
        warnings.warn(
            "update interval exceeds a tenth of the shortest measurement "
            "time; the weak-measurement update may be biased",
            stacklevel=2,
        )

    n_rec = min(cfg.n_record, len(edges))
    rec_idx = np.unique(np.linspace(0, len(edges) - 1, n_rec).round().astype(int))
    record_times = edges[rec_idx]

    thetas = np.empty((cfg.n_traj, rec_idx.size))
    theta_final = np.empty(cfg.n_traj)
    purity_residual = 0.0

    sd_x = np.sqrt(sched.tau_x / dts)
    sd_z = np.sqrt(tz_mid / dts)
    for a in range(0, cfg.n_traj, _TRAJ_BATCH):
        b = min(a + _TRAJ_BATCH, cfg.n_traj)
        noise = _batch_noise(cfg.seed, a, b, dts.size)
        th, rec, pur = _run_batch(
            cfg.theta0, edges, dts, tz_mid, sd_x, sd_z, sched.tau_x, noise, rec_idx
        )
        thetas[a:b] = rec
        theta_final[a:b] = th
        purity_residual = max(purity_residual, pur)

    return TrajectoryEnsemble(
        cfg, sched, t0, t_final, record_times, thetas, theta_final,
        purity_residual, min_tz,
    )


def _batch_noise(seed, a, b, n_steps):
    """Per-trajectory Gaussian streams, keyed by (seed, trajectory index)."""
    out = np.empty((b - a, n_steps, 2))
    for i in range(a, b):
        gen = np.random.Generator(np.random.Philox(key=np.uint64(seed) + (np.uint64(i) << np.uint64(20))))
        out[i - a] = gen.standard_normal((n_steps, 2))
    return out


def _run_batch(theta0, edges, dts, tz_mid, sd_x, sd_z, tau_x, noise, rec_idx):
    n = noise.shape[0]
    theta = np.full(n, float(theta0))
    x = np.sin(theta)
    z = np.cos(theta)
    rec = np.empty((n, rec_idx.size))
    rec_ptr = 0
    if rec_idx[0] == 0:
        rec[:, 0] = theta
        rec_ptr = 1
    purity = 0.0
    for k in range(dts.size):
        dt = dts[k]
        r_x = x + sd_x[k] * noise[:, k, 0]
        r_z = z + sd_z[k] * noise[:, k, 1]
        x1, z1 = _apply_x(x, z, r_x, dt, tau_x)
        x1, z1 = _apply_z(x1, z1, r_z, dt, tz_mid[k])
        nrm2 = x1 * x1 + z1 * z1
        purity = max(purity, float(np.max(np.abs(nrm2 - 1.0))))
        inv = 1.0 / np.sqrt(nrm2)
        x1 *= inv
        z1 *= inv
        theta = theta + np.arctan2(x1 * z - z1 * x, x1 * x + z1 * z)
        x, z = x1, z1
        if rec_ptr < rec_idx.size and rec_idx[rec_ptr] == k + 1:
            rec[:, rec_ptr] = theta
            rec_ptr += 1
    return theta, rec, purity


@dataclass(frozen=True)
class PostSelection:
    """Keep trajectories ending within ``window`` (circular) of theta_f at T."""

    t_final: float
    theta_f: float
    window: float = 0.1

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")


def _circular_distance(theta, target):
    return np.abs((theta - target + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass
class DensityHistogram:
    """Post-selected trajectory density over (time, theta).

    ``counts`` is (n_time_bins, n_theta_bins); ``normalized()`` maps the
    maximum bin to 1.  Survivors are additionally partitioned by winding
    group (integer m with theta_final ~ theta_f + 2 pi m), with per-group
    count matrices retained for ridge extraction.
    """

    times: np.ndarray
    theta_edges: np.ndarray
    counts: np.ndarray
    n_survivors: int
    n_total: int
    selection: PostSelection | None
    group_counts: dict[int, np.ndarray] = field(default_factory=dict)
    group_sizes: dict[int, int] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.n_survivors == 0

    def normalized(self) -> np.ndarray:
        peak = self.counts.max()
        return self.counts / peak if peak > 0 else self.counts.astype(float)


def postselect_density(
    ens: TrajectoryEnsemble,
    sel: PostSelection | None,
    theta_bins: int = 400,
) -> DensityHistogram:
    """Histogram the (post-selected) ensemble over time and angle bins."""
    if sel is not None:
        if sel.t_final > ens.t_final + 1e-9:
            raise ValueError("post-selection time exceeds the simulated span")
        keep = _circular_distance(ens.theta_final, sel.theta_f) < sel.window
    else:
        keep = np.ones(ens.theta_final.size, dtype=bool)
    surv = ens.thetas[keep]
    n_surv = surv.shape[0]
    if n_surv == 0:
        edges = np.linspace(-np.pi, np.pi, theta_bins + 1)
        return DensityHistogram(
            ens.record_times, edges,
            np.zeros((ens.record_times.size, theta_bins), dtype=np.int64),
            0, ens.theta_final.size, sel,
        )
    lo, hi = float(surv.min()), float(surv.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, theta_bins + 1)

    def hist(block):
        m = np.empty((ens.record_times.size, theta_bins), dtype=np.int64)
        for k in range(ens.record_times.size):
            m[k] = np.histogram(block[:, k], bins=edges)[0]
        return m

    counts = hist(surv)
    groups: dict[int, np.ndarray] = {}
    sizes: dict[int, int] = {}
    if sel is not None:
        m_id = np.round((ens.theta_final[keep] - sel.theta_f) / (2.0 * np.pi)).astype(int)
        for m in np.unique(m_id):
            block = surv[m_id == m]
            groups[int(m)] = hist(block)
            sizes[int(m)] = block.shape[0]
    return DensityHistogram(
        ens.record_times, edges, counts, n_surv, ens.theta_final.size, sel,
        groups, sizes,
    )


@dataclass
class RidgePath:
    """Per-time density maximum of one winding group (a most-likely path)."""

    winding: int
    population: int
    times: np.ndarray
    thetas: np.ndarray


def extract_mlps(hist: DensityHistogram, min_population: int = 50) -> list[RidgePath]:
    """Ridge paths: per-time-bin argmax of each winding group's density,
    smoothed by a 3-bin moving median.  Groups below ``min_population``
    are omitted."""
    if hist.empty:
        raise ValueError("cannot extract ridges from an empty histogram")
    centers = 0.5 * (hist.theta_edges[:-1] + hist.theta_edges[1:])
    out = []
    for m, counts in sorted(hist.group_counts.items()):
        pop = hist.group_sizes[m]
        if pop < min_population:
            continue
        ridge = centers[np.argmax(counts, axis=1)]
        sm = ridge.copy()
        if ridge.size >= 3:
            stack = np.stack([ridge[:-2], ridge[1:-1], ridge[2:]])
            sm[1:-1] = np.median(stack, axis=0)
        out.append(RidgePath(m, pop, hist.times.copy(), sm))
    return out
