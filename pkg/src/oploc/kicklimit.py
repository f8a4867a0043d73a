"""Analytic model of optimal paths under projective kicks.

In the limit of a vanishing kick width and unit kick strength, one period
consists of free isotropic diffusion for half a period, an instantaneous
projective z-measurement collapsing the state to one of the poles, and
another half-period of diffusion to the post-selected final angle.  The
only free coordinate of the optimal path is the pre-kick angle theta1; its
optimal value solves a transcendental equation per collapse branch, with
the single dimensionless control Gamma = Lambda / tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_BISECT_TOL = 1e-12
_BISECT_MAX = 200
_EDGE = 1e-9

BRANCHES = ("excited", "ground")


@dataclass(frozen=True)
class KickLimitParams:
    """Diffusion ratio Gamma = Lambda/tau and the boundary angles (radians)."""

    gamma: float
    theta_i: float = 0.5 * math.pi
    theta_f: float = 0.5 * math.pi

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def collapse_probs(theta1):
    """Probabilities of projective collapse to the poles from angle theta1.

    Returns (P_excited, P_ground) = (cos^2(theta1/2), sin^2(theta1/2)).
    """
    c = np.cos(0.5 * np.asarray(theta1, dtype=float))
    p_ex = c * c
    return p_ex, 1.0 - p_ex


def branch_density(theta1, params: KickLimitParams, branch: str):
    """Unnormalized density of the diffusion-kick-diffusion path via theta1."""
    _check_branch(branch)
    th1 = np.asarray(theta1, dtype=float)
    inv_gamma = 1.0 / params.gamma
    spread = (th1 - params.theta_i) ** 2
    if branch == "excited":
        jump = np.cos(0.5 * th1) ** 2
        tail = params.theta_f**2
    else:
        jump = np.sin(0.5 * th1) ** 2
        tail = (params.theta_f - math.pi) ** 2
    return jump * np.exp(-inv_gamma * (tail + spread))


def _check_branch(branch: str):
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")


def _stationarity(theta1: float, params: KickLimitParams, branch: str) -> float:
    if branch == "excited":
        return math.tan(0.5 * theta1) + (2.0 / params.gamma) * (theta1 - params.theta_i)
    return 1.0 / math.tan(0.5 * theta1) - (2.0 / params.gamma) * (
        theta1 - params.theta_i
    )


def solve_theta1(params: KickLimitParams, branch: str) -> float:
    """Pre-kick angle maximizing the branch density, by bisection on (0, pi).

    The stationarity function is monotone on the open interval for either
    branch, with the tangent/cotangent singularity at the far endpoint, so
    a sign change over (0, pi) brackets the unique root.
    """
    _check_branch(branch)
    if not 0.0 < params.theta_i < math.pi:
        raise ValueError("theta_i must lie strictly inside (0, pi)")
    lo, hi = _EDGE, math.pi - _EDGE
    f_lo = _stationarity(lo, params, branch)
    f_hi = _stationarity(hi, params, branch)
    if f_lo * f_hi > 0:
        raise ValueError(
            f"no sign change on ({lo:.2g}, {math.pi - _EDGE:.6f}) for the "
            f"{branch} branch at gamma={params.gamma}, theta_i={params.theta_i}"
        )
    for _ in range(_BISECT_MAX):
        mid = 0.5 * (lo + hi)
        f_mid = _stationarity(mid, params, branch)
        if f_lo * f_mid <= 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
        if hi - lo < _BISECT_TOL:
            break
    return 0.5 * (lo + hi)


def gamma_sweep(theta_i: float, gammas) -> dict[str, np.ndarray]:
    """Optimal theta1 on both branches across a range of Gamma values."""
    gammas = np.asarray(gammas, dtype=float)
    out = {"gamma": gammas}
    for branch in BRANCHES:
        out[branch] = np.array(
            [solve_theta1(KickLimitParams(g, theta_i), branch) for g in gammas]
        )
    return out
