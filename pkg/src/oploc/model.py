"""Kicked two-measurement stochastic Hamiltonian for a monitored qubit.

A pure qubit state confined to the xz great circle of the Bloch sphere is
monitored along two non-commuting axes.  The x-measurement has a fixed
characteristic time ``tau_x`` while the z-measurement time ``tau_z(t)`` is
periodically "kicked" (strengthened) by a narrow Gaussian envelope.  The
extremal-probability paths of the monitored state are generated by the
effective Hamiltonian

    H*(theta, p, t) = a(theta, t) (p^2 - 1) + b(theta, t) p

on the phase space of the Bloch angle ``theta`` (kept unwrapped on the real
line) and its conjugate momentum ``p``.

Times are in microseconds, rates in MHz, throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import mpmath
import numpy as np


class PhasePoint(NamedTuple):
    """One point (theta, p) of the optimal-path phase space.

    ``theta`` is the unwrapped Bloch angle (radians, not reduced mod 2*pi);
    ``p`` is the dimensionless conjugate momentum.
    """

    theta: float
    p: float


class Readouts(NamedTuple):
    """A pair of dimensionless measurement readouts (x channel, z channel)."""

    r_x: float
    r_z: float


@dataclass(frozen=True)
class MeasurementSchedule:
    """Configuration of the kicked two-measurement scheme.

    Parameters
    ----------
    tau_x : float
        Characteristic time of the x-measurement (us).
    epsilon : float
        Dimensionless kick strength in [0, 1).  At the kick peak the
        z-measurement time dips to ``tau_x * (1 - epsilon)``; epsilon = 1
        would make it vanish and is rejected.
    tau_m : float
        Width of the Gaussian kick envelope (us).
    capital_lambda : float
        Kick repetition period (us).  Kicks peak at half-integer multiples
        of the period.
    """

    tau_x: float = 1.0
    epsilon: float = 0.0
    tau_m: float = 0.025
    capital_lambda: float = 1.0

    def __post_init__(self):
        if not self.tau_x > 0:
            raise ValueError(f"tau_x must be positive, got {self.tau_x}")
        if not self.tau_m > 0:
            raise ValueError(f"tau_m must be positive, got {self.tau_m}")
        if not self.capital_lambda > 0:
            raise ValueError(
                f"capital_lambda must be positive, got {self.capital_lambda}"
            )
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(
                "epsilon must lie in [0, 1); epsilon = 1 makes the kicked "
                f"measurement singular (got {self.epsilon})"
            )

    @property
    def kick_amplitude(self) -> float:
        """Amplitude A = epsilon * tau_x of the dip in tau_z (us)."""
        return self.epsilon * self.tau_x

    @property
    def gamma_x(self) -> float:
        """Rate 1/tau_x (MHz)."""
        return 1.0 / self.tau_x

    def kick_half_width(self, negligible: float = 1e-17) -> float:
        """Half-width (us) outside which the kick envelope is negligible.

        Returns the distance from a kick peak beyond which
        ``epsilon * g(t) <= negligible``, i.e. where the dynamics are a plain
        rotor to double precision.  Zero when epsilon is effectively zero.
        """
        if self.epsilon <= negligible:
            return 0.0
        w = self.tau_m * math.sqrt(2.0 * math.log(self.epsilon / negligible))
        return min(w, 0.5 * self.capital_lambda)


def kick_envelope(t, sched: MeasurementSchedule):
    """Periodic Gaussian envelope g(t), peaking at 1 every half-period."""
    lam = sched.capital_lambda
    tp = np.mod(t, lam)
    return np.exp(-((tp - 0.5 * lam) ** 2) / (2.0 * sched.tau_m**2))


def tau_z_of_t(t, sched: MeasurementSchedule):
    """Kicked z-measurement time tau_z(t) = tau_x (1 - epsilon g(t)) > 0."""
    return sched.tau_x * (1.0 - sched.epsilon * kick_envelope(t, sched))


def coeffs_ab(theta, t, sched: MeasurementSchedule):
    """Hamiltonian coefficients (a, b) at angle theta and time t, in MHz."""
    gz = 1.0 / tau_z_of_t(t, sched)
    gx = sched.gamma_x
    s, c = np.sin(theta), np.cos(theta)
    a = 0.5 * (s * s * gz + c * c * gx)
    b = s * c * (gx - gz)
    return a, b


def h_star(theta, p, t, sched: MeasurementSchedule):
    """Stochastic energy H*(theta, p, t) = a (p^2 - 1) + b p (MHz)."""
    a, b = coeffs_ab(theta, t, sched)
    return a * (p * p - 1.0) + b * p


def h_star_grad(theta, p, t, sched: MeasurementSchedule):
    """Analytic partials (dH*/dtheta, dH*/dp).

    Uses d(a)/dtheta = -b and d(b)/dtheta = (gamma_x - gamma_z) cos(2 theta),
    which follow directly from the closed forms of a and b.
    """
    gz = 1.0 / tau_z_of_t(t, sched)
    gx = sched.gamma_x
    s, c = np.sin(theta), np.cos(theta)
    a = 0.5 * (s * s * gz + c * c * gx)
    b = s * c * (gx - gz)
    da_dth = -b
    db_dth = (gx - gz) * np.cos(2.0 * theta)
    dh_dth = da_dth * (p * p - 1.0) + db_dth * p
    dh_dp = 2.0 * a * p + b
    return dh_dth, dh_dp


def optimal_readouts(theta, p) -> Readouts:
    """Readout values extremizing the path probability at (theta, p)."""
    s, c = np.sin(theta), np.cos(theta)
    return Readouts(s + p * c, c - p * s)


def f_drift(theta, readouts: Readouts, t, sched: MeasurementSchedule):
    """State drift dtheta/dt given readouts (MHz)."""
    r_x, r_z = readouts
    tz = tau_z_of_t(t, sched)
    return (r_x / sched.tau_x) * np.cos(theta) - (r_z / tz) * np.sin(theta)


def g_cost(theta, readouts: Readouts, t, sched: MeasurementSchedule):
    """Log-probability rate of the readout pair given the state (MHz).

    Strictly negative: the quadratic penalty per channel never vanishes
    because of the +1 noise-floor terms.
    """
    r_x, r_z = readouts
    tz = tau_z_of_t(t, sched)
    s, c = np.sin(theta), np.cos(theta)
    return -(r_x * r_x - 2.0 * r_x * s + 1.0) / (2.0 * sched.tau_x) - (
        r_z * r_z - 2.0 * r_z * c + 1.0
    ) / (2.0 * tz)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def fourier_coeff_exact(n: int, k: int, sched: MeasurementSchedule) -> float:
    """Fourier coefficient of g(t)^n on the kick period, by quadrature.

    Computes  C_{n,k} = 2 (-1)^k  int_0^{1/2} exp(-n x^2 / (2 tm^2)) cos(2 pi k x) dx
    with time measured in units of the period (tm = tau_m / Lambda).

    For narrow kicks and large |k| the oscillation cancels the integral down
    to ~1e-7 of the lobe mass, so double precision cannot deliver the 1e-8
    relative accuracy the closed-form cross-check requires.  The adaptive
    quadrature therefore runs in extended precision, with the interval split
    at the cosine zeros.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    k = abs(k)
    tm = sched.tau_m / sched.capital_lambda
    with mpmath.workdps(30):
        a = mpmath.mpf(n) / (2 * mpmath.mpf(tm) ** 2)
        w = 2 * mpmath.pi * k

        def integrand(x):
            return mpmath.exp(-a * x * x) * mpmath.cos(w * x)

        half = mpmath.mpf(1) / 2
        points = [mpmath.mpf(0)]
        if k > 0:
            j = 0
            while True:
                zero = (2 * j + 1) / mpmath.mpf(4 * k)
                if zero >= half:
                    break
                points.append(zero)
                j += 1
        points.append(half)
        val, err = mpmath.quad(integrand, points, error=True)
        if err > mpmath.mpf(10) ** (-20) * max(1, abs(val)):
            raise QuadratureError(
                f"coefficient quadrature (n={n}, k={k}) reached only "
                f"error {mpmath.nstr(err, 3)}"
            )
        return float(2 * (-1) ** (k % 2) * val)


def fourier_coeff_gaussian(n: int, k: int, sched: MeasurementSchedule) -> float:
    """Closed-form approximation of the coefficient for tau_m << Lambda.

    Extends the integration bounds to the whole real line, giving
    (-1)^k tm sqrt(2 pi / n) exp(-2 pi^2 k^2 tm^2 / n).  Serves as an
    independent oracle for `fourier_coeff_exact`.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    tm = sched.tau_m / sched.capital_lambda
    return (
        (-1) ** (k % 2)
        * tm
        * math.sqrt(2.0 * math.pi / n)
        * math.exp(-2.0 * math.pi**2 * k**2 * tm**2 / n)
    )


def h_star_series(theta, p, t, sched: MeasurementSchedule, n_max: int, k_max: int = 40):
    """Truncated kick-harmonic reconstruction of H*.

    Expands the kicked part of the Hamiltonian in powers of epsilon (orders
    1..n_max) and kick harmonics |k| <= k_max:

        H* ~ (p^2-1)/(2 tau_x)
             + [ (p^2-1)/4 (1 - cos 2 theta) - (p/2) sin 2 theta ] / tau_x
               * sum_n eps^n sum_k C_{n,k} e^{2 pi i k t / Lambda}

    The full `h_star` is always the ground truth; the series order needed at
    intermediate epsilon must be checked against it.
    """
    lam = sched.capital_lambda
    envelope = np.zeros_like(np.asarray(t, dtype=float))
    for n in range(1, n_max + 1):
        c0 = fourier_coeff_gaussian(n, 0, sched)
        harm = np.full_like(envelope, c0)
        for k in range(1, k_max + 1):
            ck = fourier_coeff_gaussian(n, k, sched)
            harm = harm + 2.0 * ck * np.cos(2.0 * np.pi * k * np.asarray(t) / lam)
        envelope = envelope + sched.epsilon**n * harm
    base = (p * p - 1.0) / (2.0 * sched.tau_x)
    shape = (p * p - 1.0) / 4.0 * (1.0 - np.cos(2.0 * theta)) - 0.5 * p * np.sin(
        2.0 * theta
    )
    return base + shape * envelope / sched.tau_x


def resonant_momenta(sched: MeasurementSchedule, k_max: int) -> np.ndarray:
    """Momenta p0 = k pi tau_x / Lambda, k = -k_max..k_max, of resonance lines.

    These are the initial momenta at which the unperturbed rotor period
    divides the kick period, seeding island chains as the kick strengthens.
    """
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")
    ks = np.arange(-k_max, k_max + 1)
    return ks * math.pi * sched.tau_x / sched.capital_lambda


def collapse_threshold(sched: MeasurementSchedule) -> float:
    """Kick strength above which a single kick projectively collapses the state.

    Defined as the epsilon at which twice the minimum of tau_z equals twice
    the kick width: epsilon* = 1 - tau_m / tau_x.
    """
    return 1.0 - sched.tau_m / sched.tau_x
