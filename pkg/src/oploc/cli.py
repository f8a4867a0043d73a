"""Batch experiment runner.

Every analysis in the package is exposed as a subcommand that reads a
sectioned key-value config file, runs deterministically under an explicit
seed, and writes CSV data, a rendered image, and a JSON metadata sidecar
into the output directory.

Subcommands: portrait, manifold, multipath, stretch, le, sqt-density,
kicklimit, resonance.  Global flags: --config, --out, --seed, --threads,
--preset.  Thread count resolution order: --threads flag, OPLOC_THREADS
environment variable, hardware count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .chaos import ic_mesh, lyapunov_series, make_triplet, portrait
from .config import (
    PRESETS,
    ConfigError,
    RunConfig,
    config_as_dict,
    load_config,
)
from .kicklimit import gamma_sweep
from .manifold import catastrophe_count, find_multipaths, propagate, stretch_report
from .model import collapse_threshold, resonant_momenta
from .sqt import PostSelection, extract_mlps, postselect_density, simulate_ensemble

TWO_PI = 2.0 * math.pi
LAMBDA_CLIP_MHZ = 0.25  # color scale limit for exponent maps

_FLOAT_FMT = "{:.12g}"


def _fmt(x) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if isinstance(x, float):
        return _FLOAT_FMT.format(x)
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_metadata(path, cfg: RunConfig, command: str, extra: dict, wall: float):
    meta = {
        "command": command,
        "version": __version__,
        "config": config_as_dict(cfg),
        "wall_time_s": round(wall, 3),
        "conventions": {
            "strobe_times": "t_n = n * period, halfway between kicks "
            "(kicks peak at (n + 1/2) * period)",
            "winding": "floor((theta_T - theta0) / (2 pi)) with theta_T unwrapped",
            "divergence": "paths are truncated, not failed, once |p| exceeds "
            "integrator p_max; the cutoff and step policy are echoed here",
        },
    }
    meta.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


# ----------------------------------------------------------------- portrait


def cmd_portrait(cfg: RunConfig, args, out_dir) -> dict:
    p_values = args.p_values
    ics = ic_mesh(p_values, args.theta_count, args.p_offsets)
    port = portrait(
        ics, args.n_strobes, cfg.schedule, cfg.integrator,
        delta_theta0=args.delta_theta0, threads=cfg.resolved_threads(),
    )
    csv_path = out_dir / "portrait.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        port.write_csv(fh)

    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 5))
    theta = np.array([r.theta_mod for r in port.records])
    p = np.array([r.p for r in port.records])
    lam = np.array([r.lam for r in port.records])
    ok = ~np.isnan(lam)
    sc = ax.scatter(
        theta[ok], p[ok], c=np.clip(lam[ok], -LAMBDA_CLIP_MHZ, LAMBDA_CLIP_MHZ),
        s=1.5, cmap="coolwarm", vmin=-LAMBDA_CLIP_MHZ, vmax=LAMBDA_CLIP_MHZ,
    )
    ax.scatter(theta[~ok], p[~ok], s=1.5, color="0.6")
    fig.colorbar(sc, ax=ax, label="lambda (MHz)")
    ax.set_xlabel("theta mod 2 pi")
    ax.set_ylabel("p")
    ax.set_xlim(0, TWO_PI)
    fig.savefig(out_dir / "portrait.png", dpi=200)
    plt.close(fig)
    return {"records": len(port.records), "initial_conditions": len(ics)}


# ----------------------------------------------------------------- manifold


def _manifold_rows(man):
    winds = man.winding()
    for i in range(man.n_points):
        status = "ok" if man.alive[i] else f"diverged@{man.t_div[i]:.6g}"
        yield (man.p0[i], man.theta_T[i], man.p_T[i], status, int(winds[i]))


def cmd_manifold(cfg: RunConfig, args, out_dir) -> dict:
    man = propagate(
        args.theta0, (args.p0_min, args.p0_max), args.t_final,
        cfg.schedule, cfg.integrator, cfg.refine, threads=cfg.resolved_threads(),
    )
    _write_csv(
        out_dir / "manifold.csv",
        ["p0", "theta_T", "p_T", "status", "winding"],
        _manifold_rows(man),
    )
    n_c = catastrophe_count(man)

    plt = _figure()
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
    live = man.alive
    axes[0].plot(man.theta_T[live], man.p0[live], "k-", lw=0.4)
    axes[0].set_xlabel("theta_T (unwrapped)")
    axes[0].set_ylabel("p0")
    winds = man.winding()
    axes[1].scatter(
        np.mod(man.theta_T[live], TWO_PI), man.p_T[live],
        c=winds[live], s=0.6, cmap="viridis",
    )
    axes[1].set_xlabel("theta_T mod 2 pi")
    axes[1].set_ylabel("p_T")
    fig.suptitle(f"t = {args.t_final} us, folds = {n_c}")
    fig.savefig(out_dir / "manifold.png", dpi=200)
    plt.close(fig)
    print(f"{man.n_points} points, {n_c} folds, truncated={man.truncated}")
    return {
        "points": man.n_points,
        "total_integrations": man.total_integrations,
        "catastrophes": n_c,
        "iterations": man.iterations,
        "truncated": man.truncated,
        "unresolved_gaps": man.unresolved_gaps,
        "manifold_wall_time_s": round(man.wall_time_s, 3),
    }


# ---------------------------------------------------------------- multipath


def cmd_multipath(cfg: RunConfig, args, out_dir) -> dict:
    threads = cfg.resolved_threads()
    man = propagate(
        args.theta0, (args.p0_min, args.p0_max), args.t_final,
        cfg.schedule, cfg.integrator, cfg.refine, threads=threads,
    )
    rows = []
    counts = {}
    for target in args.targets:
        winding = None
        target_mod = target % TWO_PI
        if args.unwrapped:
            winding = math.floor((target - args.theta0) / TWO_PI)
        sols = find_multipaths(
            args.theta0, target_mod, args.t_final,
            (args.p0_min, args.p0_max), cfg.schedule, cfg.integrator,
            cfg.refine, tol_theta=args.tol_theta, winding=winding,
            manifold=man, threads=threads,
        )
        converged = [s for s in sols if s.converged]
        counts[str(target)] = len(converged)
        print(f"target {target}: {len(converged)} solutions")
        for s in sols:
            rows.append(
                (target, s.p0, s.theta_T, s.winding, s.half_turns,
                 "yes" if s.converged else "no", s.residual)
            )
    _write_csv(
        out_dir / "multipath.csv",
        ["target", "p0", "theta_T", "winding", "half_turns", "converged",
         "residual"],
        rows,
    )

    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 5))
    live = man.alive
    ax.plot(man.theta_T[live], man.p0[live], "k-", lw=0.4)
    for target in args.targets:
        ax.axvline(target if args.unwrapped else target % TWO_PI, ls=":", lw=1)
    sol_th = [r[2] for r in rows]
    sol_p0 = [r[1] for r in rows]
    ax.plot(sol_th, sol_p0, "ro", ms=3)
    ax.set_xlabel("theta_T (unwrapped)")
    ax.set_ylabel("p0")
    lo = min(args.targets) - 0.5
    hi = max(args.targets) + 0.5
    ax.set_xlim(lo, hi)
    fig.savefig(out_dir / "multipath.png", dpi=200)
    plt.close(fig)
    return {
        "solution_counts": counts,
        "total_integrations": man.total_integrations,
        "points": man.n_points,
    }


# ------------------------------------------------------------------ stretch


def cmd_stretch(cfg: RunConfig, args, out_dir) -> dict:
    rep = stretch_report(
        args.theta0, (args.p0_min, args.p0_max), args.times,
        cfg.schedule, cfg.integrator, cfg.refine,
        delta_theta0=args.delta_theta0, threads=cfg.resolved_threads(),
    )
    _write_csv(
        out_dir / "stretch.csv",
        ["t", "L", "J_av", "N_c", "s1", "s2", "s3", "lambda_av", "D_av"],
        zip(rep.times, rep.length, rep.j_av, rep.n_c, rep.s1, rep.s2,
            rep.s3, rep.lambda_av, rep.d_av),
    )
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    # normalize each curve to equal area over the interval, exponent last
    for series, label, marker in (
        (rep.s1, "s1 (length)", "D"),
        (rep.s2, "s2 (Jacobian)", "^"),
        (rep.s3, "s3 (folds)", "x"),
        (rep.lambda_av, "lambda_av", "o"),
    ):
        area = np.trapezoid(np.abs(series), rep.times)
        scale = 1.0 if area == 0 else np.trapezoid(np.abs(rep.lambda_av), rep.times) / area
        ax.plot(rep.times, series * scale, marker=marker, ms=4, lw=1, label=label)
    ax.set_xlabel("t (us)")
    ax.set_ylabel("rate (MHz, normalized)")
    ax.legend()
    fig.savefig(out_dir / "stretch.png", dpi=200)
    plt.close(fig)
    return {"total_integrations": rep.total_integrations,
            "catastrophes_final": int(rep.n_c[-1])}


# ----------------------------------------------------------------------- le


def cmd_le(cfg: RunConfig, args, out_dir) -> dict:
    sample = np.round(np.arange(1, int(args.t_final / 0.1) + 1) * 0.1, 10)
    rows = []
    plt = _figure()
    fig, (ax_d, ax_l) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for theta0, p0 in args.ics:
        trip = make_triplet(
            (theta0, p0), 0.0, args.t_final, cfg.schedule, cfg.integrator,
            sample, delta_theta0=args.delta_theta0,
        )
        series = lyapunov_series(trip)
        label = f"theta0={theta0}, p0={p0}"
        ax_d.plot(series.times, series.d, lw=1, label=label)
        ax_l.plot(series.times, series.lam, lw=1, label=label)
        for t, d, lam in zip(series.times, series.d, series.lam):
            rows.append((theta0, p0, t, d, lam))
    _write_csv(
        out_dir / "lyapunov.csv",
        ["theta0", "p0", "t", "D", "lambda_MHz"],
        rows,
    )
    ax_d.set_ylabel("D")
    ax_d.legend(fontsize=8)
    ax_l.set_ylabel("lambda (MHz)")
    ax_l.set_xlabel("t (us)")
    fig.savefig(out_dir / "lyapunov.png", dpi=200)
    plt.close(fig)
    return {"initial_conditions": len(args.ics)}


# -------------------------------------------------------------- sqt-density


def cmd_sqt_density(cfg: RunConfig, args, out_dir) -> dict:
    sqt_cfg = replace(cfg.sqt, seed=cfg.seed)
    ens = simulate_ensemble(sqt_cfg, args.t_final, cfg.schedule)
    sel = PostSelection(args.t_final, args.theta_f, args.window)
    hist = postselect_density(ens, sel, theta_bins=args.theta_bins)

    np.savetxt(out_dir / "density.csv", hist.normalized(), delimiter=",",
               fmt="%.6g", newline="\n")
    _write_csv(
        out_dir / "density_bins.csv",
        ["axis", "index", "value"],
        [("time", i, t) for i, t in enumerate(hist.times)]
        + [("theta_edge", i, e) for i, e in enumerate(hist.theta_edges)],
    )
    ridge_rows = []
    ridges = [] if hist.empty else extract_mlps(hist, args.min_population)
    for ridge in ridges:
        for t, th in zip(ridge.times, ridge.thetas):
            ridge_rows.append((ridge.winding, ridge.population, t, th))
    _write_csv(
        out_dir / "mlp_ridges.csv",
        ["winding", "population", "t", "theta"],
        ridge_rows,
    )

    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 5))
    if not hist.empty:
        extent = (hist.times[0], hist.times[-1], hist.theta_edges[0],
                  hist.theta_edges[-1])
        ax.imshow(hist.normalized().T, origin="lower", aspect="auto",
                  extent=extent, cmap="inferno")
        for ridge in ridges:
            ax.plot(ridge.times, ridge.thetas, lw=1.2, color="cyan")
    ax.set_xlabel("t (us)")
    ax.set_ylabel("theta")
    fig.savefig(out_dir / "density.png", dpi=200)
    plt.close(fig)
    return {
        "n_traj": sqt_cfg.n_traj,
        "survivors": hist.n_survivors,
        "ridge_groups": len(ridges),
        "purity_residual": ens.purity_residual,
        "min_tau_z": ens.min_tau_z,
        "seed": cfg.seed,
        "dt": sqt_cfg.dt,
    }


# ---------------------------------------------------------------- kicklimit


def cmd_kicklimit(cfg: RunConfig, args, out_dir) -> dict:
    gammas = np.geomspace(args.gamma_min, args.gamma_max, args.n_gamma)
    sweep = gamma_sweep(args.theta_i, gammas)
    _write_csv(
        out_dir / "kicklimit.csv",
        ["gamma", "theta1_excited", "theta1_ground"],
        zip(sweep["gamma"], sweep["excited"], sweep["ground"]),
    )
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.semilogx(sweep["gamma"], sweep["excited"], "r-.", label="excited branch")
    ax.semilogx(sweep["gamma"], sweep["ground"], "k-", label="ground branch")
    ax.set_xlabel("Gamma")
    ax.set_ylabel("theta1")
    ax.legend()
    fig.savefig(out_dir / "kicklimit.png", dpi=200)
    plt.close(fig)
    return {"n_gamma": args.n_gamma, "theta_i": args.theta_i}


# ---------------------------------------------------------------- resonance


def cmd_resonance(cfg: RunConfig, args, out_dir) -> dict:
    momenta = resonant_momenta(cfg.schedule, args.k_max)
    ks = np.arange(-args.k_max, args.k_max + 1)
    _write_csv(out_dir / "resonance.csv", ["k", "p0"], zip(ks, momenta))
    eps_star = collapse_threshold(cfg.schedule)
    print(f"collapse threshold epsilon* = {eps_star:.6g}")
    return {"k_max": args.k_max, "collapse_threshold": eps_star}


# -------------------------------------------------------------------- main


_COMMANDS = {
    "portrait": cmd_portrait,
    "manifold": cmd_manifold,
    "multipath": cmd_multipath,
    "stretch": cmd_stretch,
    "le": cmd_le,
    "sqt-density": cmd_sqt_density,
    "kicklimit": cmd_kicklimit,
    "resonance": cmd_resonance,
}


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        a, b = chunk.split(",")
        out.append((float(a), float(b)))
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to an INI run config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed override")
    common.add_argument("--threads", type=int,
                        help="worker count (default: OPLOC_THREADS or hardware)")
    common.add_argument("--preset", help="named preset supplying config and "
                        "arguments (see the 'presets' subcommand)")

    parser = argparse.ArgumentParser(
        prog="oploc",
        description="chaos diagnostics for optimal paths of a kicked, "
        "doubly monitored qubit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("portrait", parents=[common])
    p.add_argument("--n-strobes", dest="n_strobes", type=int, default=15)
    p.add_argument("--p-values", dest="p_values", type=_floats,
                   default=[0.0, math.pi / 2, math.pi])
    p.add_argument("--p-offsets", dest="p_offsets", type=_floats, default=[0.0])
    p.add_argument("--theta-count", dest="theta_count", type=int, default=20)
    p.add_argument("--delta-theta0", dest="delta_theta0", type=float, default=0.01)

    p = sub.add_parser("manifold", parents=[common])
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--p0-min", dest="p0_min", type=float, default=0.0)
    p.add_argument("--p0-max", dest="p0_max", type=float, default=1.5)
    p.add_argument("--t-final", dest="t_final", type=float, default=3.0)

    p = sub.add_parser("multipath", parents=[common])
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--targets", type=_floats, default=[9.28, 9.32])
    p.add_argument("--t-final", dest="t_final", type=float, default=5.0)
    p.add_argument("--p0-min", dest="p0_min", type=float, default=0.0)
    p.add_argument("--p0-max", dest="p0_max", type=float, default=1.5)
    p.add_argument("--tol-theta", dest="tol_theta", type=float, default=1e-3)
    p.add_argument("--unwrapped", action="store_true", default=True,
                   help="treat targets as unwrapped angles (fixed winding)")
    p.add_argument("--mod", dest="unwrapped", action="store_false",
                   help="treat targets mod 2 pi (all windings)")

    p = sub.add_parser("stretch", parents=[common])
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--p0-min", dest="p0_min", type=float, default=-2.0)
    p.add_argument("--p0-max", dest="p0_max", type=float, default=2.0)
    p.add_argument("--times", type=_floats,
                   default=[0.25 * k for k in range(1, 21)])
    p.add_argument("--delta-theta0", dest="delta_theta0", type=float, default=0.01)

    p = sub.add_parser("le", parents=[common])
    p.add_argument("--ics", type=_pairs, default=[(0.286, 1.227)],
                   help="semicolon-separated theta0,p0 pairs")
    p.add_argument("--t-final", dest="t_final", type=float, default=15.0)
    p.add_argument("--delta-theta0", dest="delta_theta0", type=float, default=0.01)

    p = sub.add_parser("sqt-density", parents=[common])
    p.add_argument("--t-final", dest="t_final", type=float, default=3.0)
    p.add_argument("--theta-f", dest="theta_f", type=float, default=math.pi)
    p.add_argument("--window", type=float, default=0.1)
    p.add_argument("--theta-bins", dest="theta_bins", type=int, default=400)
    p.add_argument("--min-population", dest="min_population", type=int, default=50)

    p = sub.add_parser("kicklimit", parents=[common])
    p.add_argument("--theta-i", dest="theta_i", type=float, default=math.pi / 2)
    p.add_argument("--gamma-min", dest="gamma_min", type=float, default=0.01)
    p.add_argument("--gamma-max", dest="gamma_max", type=float, default=100.0)
    p.add_argument("--n-gamma", dest="n_gamma", type=int, default=50)

    p = sub.add_parser("resonance", parents=[common])
    p.add_argument("--k-max", dest="k_max", type=int, default=3)

    sub.add_parser("presets", parents=[common],
                   help="list the named presets and exit")
    return parser


def _apply_preset(args, cfg: RunConfig) -> RunConfig:
    name = args.preset
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r}; available: {known}")
    preset = PRESETS[name]
    if preset["command"] != args.command:
        raise ConfigError(
            f"preset {name!r} belongs to the '{preset['command']}' command"
        )
    overrides = preset["config"]
    if "schedule" in overrides:
        cfg.schedule = replace(cfg.schedule, **overrides["schedule"])
    if "integrator" in overrides:
        cfg.integrator = replace(cfg.integrator, **overrides["integrator"])
    if "refine" in overrides:
        cfg.refine = replace(cfg.refine, **overrides["refine"])
    if "sqt" in overrides:
        cfg.sqt = replace(cfg.sqt, **overrides["sqt"])
    for key, value in preset["args"].items():
        setattr(args, key, value)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "presets":
        for name in sorted(PRESETS):
            print(f"{name}: {PRESETS[name]['description']}")
        return 0

    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.preset:
            cfg = _apply_preset(args, cfg)
        if args.out:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    from pathlib import Path

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    try:
        extra = _COMMANDS[args.command](cfg, args, out_dir)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_metadata(
        out_dir / f"{args.command.replace('-', '_')}_meta.json",
        cfg, args.command, extra, time.perf_counter() - start,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
