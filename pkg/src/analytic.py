"""
Closed-form engine for the two-mode model

Steady-state amplitudes, phase-dependent gain, two-mode dissipation,
drift/diffusion matrices of the quadrature fluctuations, their spectra and
stationary correlations, and cross-quadrature squeezing statistics.

Frame convention: the fluctuation drift matrices are written in the frame
where the pump enters as a real positive |A_S| (pump phase 0). A general
pump phase is a rotation of both membrane quadrature frames by phi_S / 2,
see rotate_quadratures and canonical_frame_angles.
"""

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, linalg

from src.errors import ConfigError, NumericalError
from src.model import (
    K_B,
    TWO_PI,
    Drive,
    SystemConfig,
    loss_asymmetry,
    mean_linewidth,
    normalized_pump,
    susceptibility,
    thermal_amplitude,
    threshold,
    with_mu,
    xi_scale,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# maximal deamplification of a degenerate amplifier below threshold
DEGENERATE_MIN_GAIN = 0.5

SPECTRUM_RTOL = 1e-8
SPECTRUM_CUTOFF = 50.0  # in units of the largest linewidth
_BREAKPOINTS_PER_DECADE = 8


@dataclass(frozen=True)
class ComplexAmplitude:
    """Slowly varying complex mode amplitude A (z = A exp(-i omega t)), m"""

    re: float
    im: float

    def __post_init__(self):
        if not (math.isfinite(self.re) and math.isfinite(self.im)):
            raise NumericalError(f"non-finite amplitude ({self.re}, {self.im})")

    @classmethod
    def from_complex(cls, value: complex) -> "ComplexAmplitude":
        return cls(re=float(value.real), im=float(value.imag))

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

    @property
    def magnitude(self) -> float:
        return abs(self.value)

    @property
    def phase(self) -> float:
        return cmath.phase(self.value)


@dataclass(frozen=True)
class MeanAmplitudes:
    """Magnitudes |A_i|, |A_j|, |A_S| of the mean fields, m"""

    i: float = 0.0
    j: float = 0.0
    s: float = 0.0


@dataclass(frozen=True, eq=False)
class DriftMatrices:
    """Drift of the alpha and beta quadrature fluctuations, 1/s"""

    m_alpha: np.ndarray
    m_beta: np.ndarray
    mean_amps: MeanAmplitudes


@dataclass(frozen=True, eq=False)
class DiffusionMatrix:
    """Diagonal white-noise strengths gamma_k k_B T / (m_k omega_k^2), m^2/s"""

    matrix: np.ndarray

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).copy()


@dataclass(frozen=True, eq=False)
class CorrelationSet:
    """
    Stationary second moments of the quadrature fluctuations (m^2), order
    (i, j, S), together with the thermomechanical amplitudes used to
    normalize them.
    """

    c_alpha: np.ndarray
    c_beta: np.ndarray
    x_th: np.ndarray
    source: str = ""

    def __post_init__(self):
        for name in ("c_alpha", "c_beta"):
            value = getattr(self, name)
            if value.shape != (3, 3):
                raise ConfigError(f"{name} must be 3x3, got {value.shape}")

    @property
    def normalized_alpha(self) -> np.ndarray:
        return self.c_alpha / np.outer(self.x_th, self.x_th)

    @property
    def normalized_beta(self) -> np.ndarray:
        return self.c_beta / np.outer(self.x_th, self.x_th)

    def as_phase_space(self) -> np.ndarray:
        """6x6 covariance in (alpha_i, beta_i, alpha_j, beta_j, alpha_S, beta_S) order"""
        cov = np.zeros((6, 6))
        cov[0::2, 0::2] = self.c_alpha
        cov[1::2, 1::2] = self.c_beta
        return cov

    @classmethod
    def from_phase_space(
        cls, cov: np.ndarray, x_th: np.ndarray, source: str = ""
    ) -> "CorrelationSet":
        return cls(
            c_alpha=np.array(cov[0::2, 0::2]),
            c_beta=np.array(cov[1::2, 1::2]),
            x_th=np.asarray(x_th, dtype=float),
            source=source,
        )


@dataclass(frozen=True)
class CrossQuadratureStats:
    """Normalized cross-quadrature statistics x_{a,b}, y_{a,b}"""

    variances: Dict[str, float]
    squeezed: Tuple[str, str]
    amplified: Tuple[str, str]
    stds: Dict[str, float] = field(default_factory=dict)
    squeezing_db: Dict[str, float] = field(default_factory=dict)


class DampingRate(NamedTuple):
    gamma: float
    overcoupled: bool


# --- amplitudes and gain ----------------------------------------------------


def steady_state_amplitudes(
    config: SystemConfig, force_i: Drive, force_j: Drive
) -> Tuple[ComplexAmplitude, ComplexAmplitude]:
    """
    Below-threshold driven steady state of both membrane modes.

    Each amplitude is the direct response chi |F| exp(i(phi - pi/2)) plus the
    coherently down-converted response to the partner's drive, with
    interference phase delta_phi = phi_S - phi_i - phi_j. The interference
    sign is the one for which |A_j| / |A_j(mu=0)| is the phase_gain law.
    """
    mu = normalized_pump(config)
    if mu >= 1.0:
        raise NumericalError("no below-threshold steady state")
    chi_i = susceptibility(config.mode_i)
    chi_j = susceptibility(config.mode_j)
    delta_phi = config.pump_phase - force_i.phase - force_j.phase
    cross = mu * math.sqrt(chi_i * chi_j) * cmath.exp(1j * delta_phi)
    scale = 1.0 / (1.0 - mu**2)
    a_i = (
        cmath.exp(1j * (force_i.phase - math.pi / 2))
        * scale
        * (chi_i * force_i.magnitude - cross * force_j.magnitude)
    )
    a_j = (
        cmath.exp(1j * (force_j.phase - math.pi / 2))
        * scale
        * (chi_j * force_j.magnitude - cross * force_i.magnitude)
    )
    return ComplexAmplitude.from_complex(a_i), ComplexAmplitude.from_complex(a_j)


def phase_gain(mu: float, eta: float, phi: ArrayLike) -> ArrayLike:
    """Signal gain sqrt(1 + mu^2 eta^2 - 2 mu eta cos phi) / (1 - mu^2)"""
    if mu < 0:
        raise ConfigError(f"mu must be >= 0, got {mu}")
    if eta < 0:
        raise ConfigError(f"eta must be >= 0, got {eta}")
    if mu >= 1.0:
        raise NumericalError(f"gain undefined at or above threshold (mu = {mu})")
    radicand = 1.0 + (mu * eta) ** 2 - 2.0 * mu * eta * np.cos(phi)
    gain = np.sqrt(np.maximum(radicand, 0.0)) / (1.0 - mu**2)
    return float(gain) if np.ndim(gain) == 0 else gain


def eta_from_drives(config: SystemConfig, force_i: Drive, force_j: Drive) -> float:
    """Drive ratio sqrt(chi_i/chi_j) |F_i| / |F_j| entering the gain law"""
    if force_j.magnitude <= 0:
        raise ConfigError("signal drive (force_j) must be nonzero to define eta")
    chi_i = susceptibility(config.mode_i)
    chi_j = susceptibility(config.mode_j)
    return math.sqrt(chi_i / chi_j) * force_i.magnitude / force_j.magnitude


def drives_from_amplitudes(
    config: SystemConfig,
    x_i: float,
    x_j: float,
    phase_i: float = 0.0,
    phase_j: float = 0.0,
) -> Tuple[Drive, Drive]:
    """Resonant forces producing unpumped amplitudes x_i, x_j (x = chi F)"""
    return (
        Drive(x_i / susceptibility(config.mode_i), phase_i),
        Drive(x_j / susceptibility(config.mode_j), phase_j),
    )


def experiment_drives(
    config: SystemConfig, signal_xth: float = 35.0, idler_xth: float = 400.0
) -> Tuple[Drive, Drive]:
    """Idler (mode i) and signal (mode j) drives in thermomechanical units"""
    x_th_i = thermal_amplitude(config.mode_i, config.temperature)
    x_th_j = thermal_amplitude(config.mode_j, config.temperature)
    return drives_from_amplitudes(config, idler_xth * x_th_i, signal_xth * x_th_j)


def deamplification_window(mu: float, max_gain: float) -> Tuple[float, float]:
    """Range of eta for which G(phi=0) < max_gain at pump mu"""
    if not 0 < mu < 1:
        raise ConfigError(f"mu must lie in (0, 1), got {mu}")
    half_width = max_gain * (1.0 - mu**2)
    return (max(1.0 - half_width, 0.0) / mu, (1.0 + half_width) / mu)


# --- two-mode dissipation ---------------------------------------------------


def two_mode_damping(
    gamma_damped: float, gamma_s: float, x: ArrayLike, xi: float
) -> Tuple[ArrayLike, ArrayLike]:
    """
    Energy decay rate of a mode whose partner oscillates at amplitude x.

    Returns (gamma, overcoupled). Where the radicand is negative the rate is
    the saturated (gamma_s + gamma_damped)/2 and overcoupled is True.
    """
    x = np.asarray(x, dtype=float)
    radicand = (gamma_s - gamma_damped) ** 2 - gamma_s**2 * (x / xi) ** 2
    overcoupled = radicand < 0
    root = np.sqrt(np.where(overcoupled, 0.0, radicand))
    gamma = 0.5 * (gamma_s + gamma_damped - root)
    if gamma.ndim == 0:
        return float(gamma), bool(overcoupled)
    return gamma, overcoupled


def two_mode_damping_approx(
    gamma_damped: float, gamma_s: float, x: ArrayLike, xi: float
) -> Tuple[ArrayLike, ArrayLike]:
    """Small-linewidth form (gamma_S/2)[1 + 2 gamma/gamma_S - sqrt(1 - (x/xi)^2)]"""
    x = np.asarray(x, dtype=float)
    radicand = 1.0 - (x / xi) ** 2
    saturated = radicand < 0
    root = np.sqrt(np.where(saturated, 0.0, radicand))
    gamma = 0.5 * gamma_s * (1.0 + 2.0 * gamma_damped / gamma_s - root)
    if gamma.ndim == 0:
        return float(gamma), bool(saturated)
    return gamma, saturated


def _damped_and_xi(config: SystemConfig, damped: str) -> Tuple[float, float]:
    mode = config.mode_j if damped == "j" else config.mode_i
    return mode.gamma, xi_scale(config, damped)


def nonlinear_linewidth(
    config: SystemConfig, x_partner: float, damped: str = "j"
) -> DampingRate:
    """Linewidth of the damped mode (default j) with its partner held at x_partner"""
    if x_partner < 0:
        raise ConfigError(f"partner amplitude must be >= 0, got {x_partner}")
    gamma_d, xi = _damped_and_xi(config, damped)
    gamma, overcoupled = two_mode_damping(gamma_d, config.substrate.gamma, x_partner, xi)
    if overcoupled:
        logger.debug(f"overcoupled energy exchange at x = {x_partner:.3e} m")
    return DampingRate(gamma, overcoupled)


def linewidth_approx(
    config: SystemConfig, x_partner: float, damped: str = "j"
) -> DampingRate:
    if x_partner < 0:
        raise ConfigError(f"partner amplitude must be >= 0, got {x_partner}")
    gamma_d, xi = _damped_and_xi(config, damped)
    gamma, saturated = two_mode_damping_approx(
        gamma_d, config.substrate.gamma, x_partner, xi
    )
    return DampingRate(gamma, saturated)


def normalized_quality(
    config: SystemConfig, x_partner: ArrayLike, damped: str = "j", exact: bool = True
) -> ArrayLike:
    """Q(x)/Q_0 of the damped mode"""
    gamma_d, xi = _damped_and_xi(config, damped)
    rate = two_mode_damping if exact else two_mode_damping_approx
    gamma, _ = rate(gamma_d, config.substrate.gamma, x_partner, xi)
    return gamma_d / gamma


# --- fluctuation dynamics ---------------------------------------------------


def mean_amplitudes(config: SystemConfig) -> MeanAmplitudes:
    """Mean fields of the pure squeezing configuration: pumped substrate only"""
    return MeanAmplitudes(i=0.0, j=0.0, s=config.pump_amplitude)


def drift_matrices(
    config: SystemConfig, mean_amps: Optional[MeanAmplitudes] = None
) -> DriftMatrices:
    """M_alpha and M_beta; they differ only in the sign of the pump entries"""
    if mean_amps is None:
        mean_amps = mean_amplitudes(config)
    g = config.g
    modes = (config.mode_i, config.mode_j, config.substrate)
    c_i, c_j, c_s = (m.gamma * susceptibility(m) * g / 2.0 for m in modes)
    a_i, a_j, a_s = mean_amps.i, mean_amps.j, mean_amps.s

    def build(sign: float) -> np.ndarray:
        return 0.5 * np.array(
            [
                [-config.mode_i.gamma, sign * c_i * a_s, c_i * a_j],
                [sign * c_j * a_s, -config.mode_j.gamma, -c_j * a_i],
                [-c_s * a_j, c_s * a_i, -config.substrate.gamma],
            ]
        )

    return DriftMatrices(m_alpha=build(1.0), m_beta=build(-1.0), mean_amps=mean_amps)


def diffusion_matrix(config: SystemConfig) -> DiffusionMatrix:
    modes = (config.mode_i, config.mode_j, config.substrate)
    entries = [m.gamma * K_B * config.temperature / (m.mass * m.omega**2) for m in modes]
    return DiffusionMatrix(matrix=np.diag(entries))


def thermal_amplitudes(config: SystemConfig) -> np.ndarray:
    modes = (config.mode_i, config.mode_j, config.substrate)
    return np.array([thermal_amplitude(m, config.temperature) for m in modes])


def instability_growth_rate(config: SystemConfig) -> float:
    """Largest real eigenvalue of the membrane drift block, 1/s"""
    mu = config.pump_amplitude / threshold(config)
    gamma_bar = mean_linewidth(config)
    delta = loss_asymmetry(config)
    root = math.sqrt(
        (delta * gamma_bar) ** 2 + config.mode_i.gamma * config.mode_j.gamma * mu**2
    )
    return -0.5 * gamma_bar + 0.5 * root


def _require_hurwitz(matrix: np.ndarray, what: str) -> None:
    leading = np.max(np.linalg.eigvals(matrix).real)
    if leading >= 0:
        raise NumericalError(
            f"unstable, no stationary {what} (leading eigenvalue {leading:.3e} 1/s)"
        )


def _spectral_density(m: np.ndarray, d: np.ndarray, omega: ArrayLike) -> np.ndarray:
    eye = np.eye(m.shape[0])
    w = np.asarray(omega, dtype=float)[..., None, None]
    left = np.linalg.inv(m + 1j * w * eye)
    right = np.linalg.inv(m.T - 1j * w * eye)
    return left @ d @ right / TWO_PI


def spectrum(
    config: SystemConfig,
    mean_amps: Optional[MeanAmplitudes],
    omega: ArrayLike,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stationary spectra S(omega) = (M + i omega)^-1 D (M^T - i omega)^-1 / 2 pi
    of the alpha and beta sectors, m^2 s. omega may be an array, in which
    case the matrices are stacked along the leading axes.
    """
    drift = drift_matrices(config, mean_amps)
    d = diffusion_matrix(config).matrix
    _require_hurwitz(drift.m_alpha, "spectrum")
    _require_hurwitz(drift.m_beta, "spectrum")
    return (
        _spectral_density(drift.m_alpha, d, omega),
        _spectral_density(drift.m_beta, d, omega),
    )


def _breakpoints(drifts: Sequence[np.ndarray], upper: float) -> np.ndarray:
    rates = np.concatenate([np.abs(np.linalg.eigvals(m)) for m in drifts])
    low = max(rates.min() / 100.0, 1e-300)
    if low >= upper:
        return np.array([])
    n = int(math.ceil(math.log10(upper / low) * _BREAKPOINTS_PER_DECADE)) + 1
    return np.geomspace(low, upper, n)[:-1]


def _integrate_spectra(
    drifts: Sequence[np.ndarray], d: np.ndarray, upper: float
) -> np.ndarray:
    """
    Integral of the spectra over [-upper, upper] (upper may be inf).

    Uses S(-omega) = S(omega)^T to fold onto [0, upper]; the result is real.
    """

    def folded(w: float) -> np.ndarray:
        out = []
        for m in drifts:
            s = _spectral_density(m, d, w)
            out.append((s + s.T).real)
        return np.array(out)

    largest = max(float(np.max(-np.diag(m))) for m in drifts)
    cutoff = SPECTRUM_CUTOFF * 2.0 * largest
    finite_upper = min(upper, cutoff)
    points = _breakpoints(drifts, finite_upper)
    total, _ = integrate.quad_vec(
        folded,
        0.0,
        finite_upper,
        epsrel=SPECTRUM_RTOL,
        points=points if len(points) else None,
        limit=20000,
    )
    if upper > cutoff:
        tail, _ = integrate.quad_vec(folded, cutoff, upper, epsrel=SPECTRUM_RTOL)
        total = total + tail
    return total


def correlations_closed_form(config: SystemConfig) -> CorrelationSet:
    """Stationary correlations from the two-mode closed-form expressions"""
    mu = normalized_pump(config)
    if mu >= 1.0:
        raise NumericalError(f"no stationary correlations above threshold (mu = {mu})")
    x_th = thermal_amplitudes(config)
    mode_i, mode_j = config.mode_i, config.mode_j
    delta = loss_asymmetry(config)
    gamma_bar = mean_linewidth(config)
    w_ij = mode_i.omega / mode_j.omega
    w_ji = mode_j.omega / mode_i.omega
    denom = 1.0 - mu**2

    var_i = (
        x_th[0] ** 2
        / denom
        * (1.0 - delta * mu**2 + mu**2 * mode_j.gamma / (2.0 * gamma_bar) * (w_ij - 1.0))
    )
    var_j = (
        x_th[1] ** 2
        / denom
        * (1.0 + delta * mu**2 + mu**2 * mode_i.gamma / (2.0 * gamma_bar) * (w_ji - 1.0))
    )
    cross = (
        x_th[0]
        * x_th[1]
        * mu
        * math.sqrt(1.0 - delta**2)
        / (2.0 * denom)
        * (math.sqrt(w_ij) + math.sqrt(w_ji))
    )
    var_s = x_th[2] ** 2

    c_alpha = np.array([[var_i, cross, 0.0], [cross, var_j, 0.0], [0.0, 0.0, var_s]])
    c_beta = c_alpha.copy()
    c_beta[0, 1] = c_beta[1, 0] = -cross
    return CorrelationSet(c_alpha, c_beta, x_th, source="closed_form")


def correlations_lyapunov(
    config: SystemConfig, mean_amps: Optional[MeanAmplitudes] = None
) -> CorrelationSet:
    """Stationary covariance solving M C + C M^T + D = 0 in each sector"""
    drift = drift_matrices(config, mean_amps)
    d = diffusion_matrix(config).matrix
    sectors = []
    for m in (drift.m_alpha, drift.m_beta):
        _require_hurwitz(m, "covariance")
        c = linalg.solve_continuous_lyapunov(m, -d)
        sectors.append(0.5 * (c + c.T))
    return CorrelationSet(
        sectors[0], sectors[1], thermal_amplitudes(config), source="lyapunov"
    )


def correlations_from_spectrum(
    config: SystemConfig, mean_amps: Optional[MeanAmplitudes] = None
) -> CorrelationSet:
    """Zero-time correlations by integrating the spectra over all frequencies"""
    return _band_integrated(config, math.inf, mean_amps, source="spectrum")


def band_limited_correlations(
    config: SystemConfig,
    bandwidth_hz: float,
    mean_amps: Optional[MeanAmplitudes] = None,
) -> CorrelationSet:
    """Correlations seen through a filter passing |omega| <= pi * bandwidth_hz"""
    if not bandwidth_hz > 0:
        raise ConfigError(f"bandwidth_hz must be positive, got {bandwidth_hz}")
    return _band_integrated(
        config, math.pi * bandwidth_hz, mean_amps, source=f"band_{bandwidth_hz:g}Hz"
    )


def _band_integrated(
    config: SystemConfig,
    upper: float,
    mean_amps: Optional[MeanAmplitudes],
    source: str,
) -> CorrelationSet:
    drift = drift_matrices(config, mean_amps)
    d = diffusion_matrix(config).matrix
    for m in (drift.m_alpha, drift.m_beta):
        _require_hurwitz(m, "spectrum")
    total = _integrate_spectra((drift.m_alpha, drift.m_beta), d, upper)
    c_alpha = 0.5 * (total[0] + total[0].T)
    c_beta = 0.5 * (total[1] + total[1].T)
    return CorrelationSet(c_alpha, c_beta, thermal_amplitudes(config), source=source)


def band_limited_squeezing(config: SystemConfig, bandwidth_hz: float) -> Dict[str, float]:
    """Cross-quadrature variances in the band relative to the unpumped system"""
    pumped = cross_quadrature_stats(band_limited_correlations(config, bandwidth_hz))
    unpumped = cross_quadrature_stats(
        band_limited_correlations(with_mu(config, 0.0), bandwidth_hz)
    )
    return {
        name: pumped.variances[name] / unpumped.variances[name]
        for name in pumped.variances
    }


# --- cross quadratures ------------------------------------------------------


def variance_to_db(variance: float) -> float:
    """Squeezing in dB: positive below the thermal level"""
    return -10.0 * math.log10(variance)


def cross_quadrature_stats(correlations: CorrelationSet) -> CrossQuadratureStats:
    a = correlations.normalized_alpha
    b = correlations.normalized_beta
    variances = {
        "x_a": 0.5 * (a[0, 0] + a[1, 1] + 2.0 * a[0, 1]),
        "x_b": 0.5 * (a[0, 0] + a[1, 1] - 2.0 * a[0, 1]),
        "y_a": 0.5 * (b[0, 0] + b[1, 1] + 2.0 * b[0, 1]),
        "y_b": 0.5 * (b[0, 0] + b[1, 1] - 2.0 * b[0, 1]),
    }
    variances = {k: float(v) for k, v in variances.items()}
    x_pair = ("x_b", "x_a") if variances["x_b"] <= variances["x_a"] else ("x_a", "x_b")
    y_pair = ("y_a", "y_b") if variances["y_a"] <= variances["y_b"] else ("y_b", "y_a")
    return CrossQuadratureStats(
        variances=variances,
        squeezed=(x_pair[0], y_pair[0]),
        amplified=(x_pair[1], y_pair[1]),
        stds={k: math.sqrt(v) for k, v in variances.items()},
        squeezing_db={k: variance_to_db(v) for k, v in variances.items()},
    )


def canonical_frame_angles(pump_phase: float, n_modes: int = 3) -> np.ndarray:
    """Per-mode rotation angles taking a pump of phase phi_S to the canonical frame"""
    angles = np.full(n_modes, 0.5 * pump_phase)
    if n_modes == 3:
        angles[2] = pump_phase
    return angles


def quadrature_rotation(angles: Sequence[float]) -> np.ndarray:
    """
    Block-diagonal map x -> R x rotating mode k's amplitude by exp(-i angles[k]).

    Quadratures are ordered (alpha_1, beta_1, ..., alpha_n, beta_n).
    """
    angles = np.asarray(angles, dtype=float)
    rotation = np.zeros((2 * angles.size, 2 * angles.size))
    for k, theta in enumerate(angles):
        c, s = math.cos(theta), math.sin(theta)
        rotation[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = [[c, s], [-s, c]]
    return rotation


def rotate_quadratures(covariance: np.ndarray, angles: Sequence[float]) -> np.ndarray:
    """Covariance R C R^T after rotating mode k's amplitude by exp(-i angles[k])"""
    rotation = quadrature_rotation(angles)
    if covariance.shape[-2:] != rotation.shape:
        raise ConfigError(
            f"covariance shape {covariance.shape} does not match "
            f"{rotation.shape[0] // 2} modes"
        )
    return rotation @ covariance @ rotation.T


def membrane_drift_block(config: SystemConfig) -> np.ndarray:
    """2x2 membrane block of M_alpha for the pure squeezing configuration"""
    return drift_matrices(config).m_alpha[:2, :2].copy()
