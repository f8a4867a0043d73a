"""Run configuration: flat INI-style files, validation, presets.

A run config collects the measurement schedule, integrator policy,
manifold-refinement policy, and trajectory-ensemble settings in one
sectioned key-value file.  Schedule keys use the external names
(tau_x, epsilon, tau_m, period).  Validation failures report the file line
carrying the offending key.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, replace

from .integrator import IntegratorConfig
from .manifold import RefineConfig
from .model import MeasurementSchedule
from .sqt import SqtConfig


class ConfigError(ValueError):
    """A config file failed validation; the message locates the problem."""


@dataclass
class RunConfig:
    schedule: MeasurementSchedule = field(default_factory=MeasurementSchedule)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    sqt: SqtConfig = field(default_factory=SqtConfig)
    out_dir: str = "oploc-out"
    seed: int = 12345
    threads: int = 0  # 0 = resolve from OPLOC_THREADS or the hardware count

    def resolved_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("OPLOC_THREADS", "")
        if env.strip():
            try:
                n = int(env)
            except ValueError as exc:
                raise ConfigError(f"OPLOC_THREADS={env!r} is not an integer") from exc
            if n > 0:
                return n
        return os.cpu_count() or 1


_SCHEMA = {
    "schedule": {
        "tau_x": float,
        "epsilon": float,
        "tau_m": float,
        "period": float,
    },
    "integrator": {
        "method": str,
        "dt": float,
        "rel_tol": float,
        "abs_tol": float,
        "p_max": float,
        "max_steps": int,
    },
    "refine": {
        "max_gap_theta": float,
        "max_gap_p": float,
        "min_dp0": float,
        "max_points": int,
        "max_iterations": int,
        "n_seed": int,
    },
    "sqt": {
        "dt": float,
        "n_traj": int,
        "theta0": float,
        "kick_substeps": int,
        "n_record": int,
    },
    "run": {
        "out": str,
        "seed": int,
        "threads": int,
    },
}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip().lower()
        elif current == section and stripped.split("=")[0].strip() == key:
            return i
    return None


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    """Parse and validate an INI config, raising ConfigError with the line."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    values: dict[str, dict] = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        values[sec] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[sec]:
                line = _line_of(text, sec, key)
                raise ConfigError(
                    f"{path}:{line}: unknown key '{key}' in section [{section}]"
                )
            typ = _SCHEMA[sec][key]
            try:
                values[sec][key] = typ(raw) if typ is not str else raw.strip()
            except ValueError:
                line = _line_of(text, sec, key)
                raise ConfigError(
                    f"{path}:{line}: '{key} = {raw}' is not a valid {typ.__name__}"
                ) from None

    cfg = RunConfig()
    try:
        if "schedule" in values:
            v = dict(values["schedule"])
            if "period" in v:
                v["capital_lambda"] = v.pop("period")
            cfg.schedule = replace(cfg.schedule, **v)
        if "integrator" in values:
            cfg.integrator = replace(cfg.integrator, **values["integrator"])
        if "refine" in values:
            cfg.refine = replace(cfg.refine, **values["refine"])
        if "sqt" in values:
            cfg.sqt = replace(cfg.sqt, **values["sqt"])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    run = values.get("run", {})
    if "out" in run:
        cfg.out_dir = run["out"]
    if "seed" in run:
        cfg.seed = run["seed"]
    if "threads" in run:
        cfg.threads = run["threads"]
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), path)


def config_as_dict(cfg: RunConfig) -> dict:
    """Flat echo of every setting, for output metadata sidecars."""
    s = cfg.schedule
    return {
        "schedule": {
            "tau_x": s.tau_x,
            "epsilon": s.epsilon,
            "tau_m": s.tau_m,
            "period": s.capital_lambda,
        },
        "integrator": vars(cfg.integrator).copy(),
        "refine": vars(cfg.refine).copy(),
        "sqt": vars(cfg.sqt).copy(),
        "run": {"out": cfg.out_dir, "seed": cfg.seed, "threads": cfg.threads},
    }


# Named presets reproducing the analyses highlighted in the package docs.
# Each entry is (description, config overrides, command arguments).
PRESETS: dict[str, dict] = {
    "weak-kick-portrait": {
        "description": "100-strobe portrait at epsilon = 0.1 with initial "
        "momenta on and around the resonance lines",
        "command": "portrait",
        "config": {"schedule": {"epsilon": 0.1}},
        "args": {
            "n_strobes": 100,
            "p_values": [0.0, math.pi / 3, math.pi / 2, 2 * math.pi / 3,
                         math.pi, 3 * math.pi / 2, 2 * math.pi, 3 * math.pi],
            "p_offsets": [-0.2, 0.0, 0.2],
            "theta_count": 20,
        },
    },
    "strong-kick-portrait": {
        "description": "15-strobe portrait at epsilon = 0.99 (chaotic sea "
        "with residual islands at p = 0)",
        "command": "portrait",
        "config": {"schedule": {"epsilon": 0.99}},
        "args": {
            "n_strobes": 15,
            "p_values": [round(-3.0 + 0.25 * i, 3) for i in range(25)],
            "p_offsets": [0.0],
            "theta_count": 40,
        },
    },
    "chaotic-pair": {
        "description": "divergence of two chaotic path triplets at "
        "epsilon = 0.99 over 15 us",
        "command": "le",
        "config": {"schedule": {"epsilon": 0.99}},
        "args": {"ics": [(0.286, 1.227), (1.142, -0.545)], "t_final": 15.0},
    },
    "manifold-weak": {
        "description": "manifold at epsilon = 0.1 after 20 us, showing "
        "deviations localized at the resonant momenta",
        "command": "manifold",
        "config": {"schedule": {"epsilon": 0.1}},
        "args": {"theta0": 0.0, "p0_min": 0.0, "p0_max": 10.0, "t_final": 20.0},
    },
    "manifold-3us": {
        "description": "strong-kick manifold (theta0 = 0, p0 in [0, 1.5]) "
        "after 3 kicks; 9 folds",
        "command": "manifold",
        "config": {
            "schedule": {"epsilon": 0.99},
            "integrator": {"dt": 1.25e-3, "p_max": 500.0},
            "refine": {"max_gap_theta": 0.05, "max_gap_p": 0.5},
        },
        "args": {"theta0": 0.0, "p0_min": 0.0, "p0_max": 1.5, "t_final": 3.0},
    },
    "manifold-4us": {
        "description": "same after 4 kicks; roughly 140 folds",
        "command": "manifold",
        "config": {
            "schedule": {"epsilon": 0.99},
            "integrator": {"dt": 1.25e-3, "p_max": 500.0},
            "refine": {"max_gap_theta": 0.05, "max_gap_p": 0.5},
        },
        "args": {"theta0": 0.0, "p0_min": 0.0, "p0_max": 1.5, "t_final": 4.0},
    },
    "manifold-5us": {
        "description": "same after 5 kicks; thousands of folds (long-running)",
        "command": "manifold",
        "config": {
            "schedule": {"epsilon": 0.99},
            "integrator": {"dt": 1.25e-3, "p_max": 500.0},
            "refine": {"max_gap_theta": 0.05, "max_gap_p": 0.5},
        },
        "args": {"theta0": 0.0, "p0_min": 0.0, "p0_max": 1.5, "t_final": 5.0},
    },
    "multipath-bitflip-window": {
        "description": "solution counts at two nearby unwrapped targets "
        "(9.28 and 9.32) after 5 us at epsilon = 0.99",
        "command": "multipath",
        "config": {
            "schedule": {"epsilon": 0.99},
            "integrator": {"dt": 1.25e-3, "p_max": 500.0},
            "refine": {"max_gap_theta": 0.05, "max_gap_p": 0.5},
        },
        "args": {
            "theta0": 0.0,
            "targets": [9.28, 9.32],
            "t_final": 5.0,
            "p0_min": 0.0,
            "p0_max": 1.5,
            "unwrapped": True,
        },
    },
    "stretch-origin": {
        "description": "stretching parameters and averaged exponent for the "
        "manifold at theta0 = 0, p0 in [-2, 2], over 5 us",
        "command": "stretch",
        "config": {
            "schedule": {"epsilon": 0.99},
            "integrator": {"dt": 2.5e-3, "p_max": 500.0},
            "refine": {"max_gap_theta": 0.2, "max_gap_p": 2.0},
        },
        "args": {
            "theta0": 0.0,
            "p0_min": -2.0,
            "p0_max": 2.0,
            "times": [round(0.25 * k, 2) for k in range(1, 21)],
        },
    },
    "bitflip-density": {
        "description": "post-selected trajectory density for a bit flip "
        "(theta0 = 0 to the ground state) after 3 us at epsilon = 0.99",
        "command": "sqt-density",
        "config": {"schedule": {"epsilon": 0.99}, "sqt": {"n_traj": 40000}},
        "args": {"t_final": 3.0, "theta_f": math.pi, "window": 0.1},
    },
    "kicklimit-sweep": {
        "description": "optimal pre-kick angle against Gamma on both "
        "collapse branches, theta_i = pi/2",
        "command": "kicklimit",
        "config": {},
        "args": {"theta_i": math.pi / 2, "gamma_min": 0.01, "gamma_max": 100.0,
                 "n_gamma": 50},
    },
    "resonance-lines": {
        "description": "resonant momenta and the projective-collapse "
        "threshold for the configured schedule",
        "command": "resonance",
        "config": {},
        "args": {"k_max": 3},
    },
}
