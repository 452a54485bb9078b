"""
Physical parameter types and derived scalar quantities

All quantities are SI internally. Frequencies and linewidths are angular
(rad/s); the INI front end accepts Hz and converts by 2π.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from scipy import constants

from src.errors import ConfigError

logger = logging.getLogger(__name__)

K_B = constants.k
TWO_PI = 2.0 * math.pi

DEFAULT_MEMBRANE_MASS_KG = 2.0e-9
DEFAULT_SUBSTRATE_MASS_KG = 1.0e-4
DEFAULT_SUBSTRATE_Q = 1.0e4
DEFAULT_TEMPERATURE_K = 295.0
DEFAULT_THRESHOLD_M = 40.0e-15

# gamma_S / gamma_{i,j} below this triggers a warning; closed forms that
# eliminate the substrate assume the ratio is large
SUBSTRATE_RATIO_WARN = 100.0
RESONANCE_RTOL = 1e-9
Q_GAMMA_RTOL = 1e-9


class Mode(Enum):
    I = "i"
    J = "j"
    S = "S"


@dataclass(frozen=True)
class ModeParams:
    """One mechanical mode: angular frequency, energy linewidth, effective mass"""

    omega: float
    gamma: float
    mass: float

    def __post_init__(self):
        for name in ("omega", "gamma", "mass"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be positive and finite, got {value}")
        if self.gamma >= self.omega:
            raise ConfigError(
                f"mode is not underdamped: gamma={self.gamma} >= omega={self.omega}"
            )

    @classmethod
    def from_hz(
        cls,
        freq_hz: float,
        gamma_hz: Optional[float] = None,
        q: Optional[float] = None,
        mass_kg: float = DEFAULT_MEMBRANE_MASS_KG,
    ) -> "ModeParams":
        """Build a mode from Hz inputs, accepting either a linewidth or a Q"""
        if gamma_hz is None and q is None:
            raise ConfigError("one of gamma_hz or q is required")
        if q is not None and q <= 0:
            raise ConfigError(f"q must be positive, got {q}")
        if gamma_hz is not None and q is not None:
            implied = freq_hz / q
            if abs(implied - gamma_hz) > Q_GAMMA_RTOL * abs(gamma_hz):
                raise ConfigError(
                    f"gamma_hz={gamma_hz} and q={q} are inconsistent "
                    f"(freq_hz/q = {implied})"
                )
        if gamma_hz is None:
            gamma_hz = freq_hz / q
        return cls(omega=TWO_PI * freq_hz, gamma=TWO_PI * gamma_hz, mass=mass_kg)

    @property
    def freq_hz(self) -> float:
        return self.omega / TWO_PI

    @property
    def gamma_hz(self) -> float:
        return self.gamma / TWO_PI


@dataclass(frozen=True)
class Drive:
    """Slowly varying coherent force on one mode: magnitude (N) and phase (rad)"""

    magnitude: float
    phase: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.magnitude) or self.magnitude < 0:
            raise ConfigError(f"drive magnitude must be >= 0, got {self.magnitude}")


@dataclass(frozen=True)
class SystemConfig:
    """Two membrane modes, the substrate (pump) mode, coupling and environment"""

    mode_i: ModeParams
    mode_j: ModeParams
    substrate: ModeParams
    g: float
    pump_amplitude: float = 0.0
    pump_phase: float = 0.0
    temperature: float = DEFAULT_TEMPERATURE_K

    def __post_init__(self):
        if not math.isfinite(self.g) or self.g < 0:
            raise ConfigError(f"g must be >= 0, got {self.g}")
        if not math.isfinite(self.temperature) or self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not math.isfinite(self.pump_amplitude) or self.pump_amplitude < 0:
            raise ConfigError(
                f"pump_amplitude must be >= 0, got {self.pump_amplitude}"
            )
        omega_sum = self.mode_i.omega + self.mode_j.omega
        if abs(self.substrate.omega - omega_sum) > RESONANCE_RTOL * omega_sum:
            raise ConfigError(
                "pump detuning is not supported: substrate omega "
                f"{self.substrate.omega} != omega_i + omega_j = {omega_sum}"
            )
        slowest = max(self.mode_i.gamma, self.mode_j.gamma)
        if self.substrate.gamma < SUBSTRATE_RATIO_WARN * slowest:
            logger.warning(
                f"substrate linewidth {self.substrate.gamma:.3g} rad/s is not much "
                f"larger than the membrane linewidths ({slowest:.3g} rad/s)"
            )


@dataclass(frozen=True)
class DerivedQuantities:
    """Scalars derived from a SystemConfig"""

    chi_i: float
    chi_j: float
    chi_S: float
    x_th_i: float
    x_th_j: float
    X_S_th: float
    xi: float
    mu: float
    delta: float
    gamma_bar: float


def susceptibility(mode: ModeParams) -> float:
    """On-resonance susceptibility 1/(m omega gamma), m/N"""
    return 1.0 / (mode.mass * mode.omega * mode.gamma)


def quality_factor(mode: ModeParams) -> float:
    return mode.omega / mode.gamma


def thermal_amplitude(mode: ModeParams, temperature: float) -> float:
    """Thermomechanical amplitude sqrt(k_B T / (m omega^2)), m"""
    return math.sqrt(K_B * temperature / (mode.mass * mode.omega**2))


def threshold(config: SystemConfig) -> float:
    """Substrate amplitude at which the membrane pair self-oscillates, m"""
    if config.g == 0:
        raise ConfigError("no coupling, threshold undefined")
    chi_i = susceptibility(config.mode_i)
    chi_j = susceptibility(config.mode_j)
    return 2.0 / (config.g * math.sqrt(chi_i * chi_j))


def back_solve_coupling(
    mode_i: ModeParams, mode_j: ModeParams, threshold_m: float
) -> float:
    """Coupling g (N/m^2) that puts the threshold at threshold_m"""
    if threshold_m <= 0:
        raise ConfigError(f"threshold_m must be positive, got {threshold_m}")
    chi_i = susceptibility(mode_i)
    chi_j = susceptibility(mode_j)
    return 2.0 / (threshold_m * math.sqrt(chi_i * chi_j))


def xi_scale(config: SystemConfig, damped: str = "i") -> float:
    """
    Up-conversion length scale for the mode whose damping is modified.

    damped="i" gives the scale of the partner (mode j) amplitude at which
    mode i's dissipation saturates, 1/2 (gS/gi)^1/2 (chi_j/chi_S)^1/2 X_S_th;
    damped="j" is the same relation with i and j exchanged.
    """
    if damped not in ("i", "j"):
        raise ConfigError(f"damped must be 'i' or 'j', got {damped!r}")
    damped_mode, partner = (
        (config.mode_i, config.mode_j)
        if damped == "i"
        else (config.mode_j, config.mode_i)
    )
    gamma_ratio = config.substrate.gamma / damped_mode.gamma
    chi_ratio = susceptibility(partner) / susceptibility(config.substrate)
    return 0.5 * math.sqrt(gamma_ratio) * math.sqrt(chi_ratio) * threshold(config)


def normalized_pump(config: SystemConfig) -> float:
    """Pump amplitude in units of the threshold amplitude"""
    mu = config.pump_amplitude / threshold(config)
    if mu >= 1.0:
        logger.warning(f"pump is above threshold (mu = {mu:.6g})")
    return mu


def is_above_threshold(config: SystemConfig) -> bool:
    return config.pump_amplitude >= threshold(config)


def loss_asymmetry(config: SystemConfig) -> float:
    g_i, g_j = config.mode_i.gamma, config.mode_j.gamma
    return (g_i - g_j) / (g_i + g_j)


def mean_linewidth(config: SystemConfig) -> float:
    return 0.5 * (config.mode_i.gamma + config.mode_j.gamma)


def derived(config: SystemConfig) -> DerivedQuantities:
    return DerivedQuantities(
        chi_i=susceptibility(config.mode_i),
        chi_j=susceptibility(config.mode_j),
        chi_S=susceptibility(config.substrate),
        x_th_i=thermal_amplitude(config.mode_i, config.temperature),
        x_th_j=thermal_amplitude(config.mode_j, config.temperature),
        X_S_th=threshold(config),
        xi=xi_scale(config),
        mu=normalized_pump(config),
        delta=loss_asymmetry(config),
        gamma_bar=mean_linewidth(config),
    )


def with_mu(config: SystemConfig, mu: float) -> SystemConfig:
    """Copy of config with the pump set to mu times the threshold"""
    if mu < 0:
        raise ConfigError(f"mu must be >= 0, got {mu}")
    return replace(config, pump_amplitude=mu * threshold(config))


def swapped(config: SystemConfig) -> SystemConfig:
    """Copy of config with the two membrane modes exchanged"""
    return replace(config, mode_i=config.mode_j, mode_j=config.mode_i)


def resonant_substrate(
    mode_i: ModeParams,
    mode_j: ModeParams,
    gamma: Optional[float] = None,
    q: float = DEFAULT_SUBSTRATE_Q,
    mass: float = DEFAULT_SUBSTRATE_MASS_KG,
) -> ModeParams:
    """Substrate mode at omega_i + omega_j"""
    omega = mode_i.omega + mode_j.omega
    return ModeParams(omega=omega, gamma=gamma if gamma else omega / q, mass=mass)


def default_config(mu: float = 0.0) -> SystemConfig:
    """
    Demo configuration: 1.5/1.6 MHz membrane pair, substrate at the sum
    frequency with Q_S = 1e4, room temperature, threshold at 40 fm.
    """
    mode_i = ModeParams.from_hz(1.5e6, gamma_hz=0.100)
    mode_j = ModeParams.from_hz(1.6e6, gamma_hz=0.028)
    substrate = resonant_substrate(mode_i, mode_j)
    g = back_solve_coupling(mode_i, mode_j, DEFAULT_THRESHOLD_M)
    config = SystemConfig(mode_i=mode_i, mode_j=mode_j, substrate=substrate, g=g)
    return with_mu(config, mu) if mu else config
