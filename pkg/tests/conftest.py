"""
Shared fixtures for the paramp test suite
"""

import math

import pytest

from src.model import ModeParams, SystemConfig, back_solve_coupling, default_config


def symmetric_config(
    gamma: float = 1.0,
    gamma_s: float = 1000.0,
    omega: float = 2 * math.pi * 1.5e6,
    mass: float = 2e-9,
    threshold_m: float = 40e-15,
) -> SystemConfig:
    """Degenerate-frequency, equal-loss pair (delta = 0) with a fast substrate"""
    mode = ModeParams(omega=omega, gamma=gamma, mass=mass)
    substrate = ModeParams(omega=2 * omega, gamma=gamma_s, mass=1e-4)
    g = back_solve_coupling(mode, mode, threshold_m)
    return SystemConfig(mode_i=mode, mode_j=mode, substrate=substrate, g=g)


def asymmetric_config(
    delta: float, omega_ratio: float = 1.0, gamma_bar: float = 1.0, gamma_s: float = 1000.0
) -> SystemConfig:
    """Pair with loss asymmetry delta and omega_j / omega_i = omega_ratio"""
    omega_i = 2 * math.pi * 1.5e6
    mode_i = ModeParams(omega=omega_i, gamma=gamma_bar * (1 + delta), mass=2e-9)
    mode_j = ModeParams(omega=omega_i * omega_ratio, gamma=gamma_bar * (1 - delta), mass=2e-9)
    substrate = ModeParams(omega=mode_i.omega + mode_j.omega, gamma=gamma_s, mass=1e-4)
    g = back_solve_coupling(mode_i, mode_j, 40e-15)
    return SystemConfig(mode_i=mode_i, mode_j=mode_j, substrate=substrate, g=g)


@pytest.fixture
def demo_config() -> SystemConfig:
    return default_config()


@pytest.fixture
def squeeze_config() -> SystemConfig:
    return symmetric_config()


@pytest.fixture
def euler_config() -> SystemConfig:
    """Substrate only ten times faster than the membranes, for Euler-Maruyama runs"""
    return symmetric_config(gamma_s=10.0)


MINIMAL_INI = """\
[mode_i]
freq_hz = 1.5e6
gamma_hz = 0.1

[mode_j]
freq_hz = 1.6e6
q = 5.7142857142857146e7

[coupling]
threshold_m = 40e-15
"""


@pytest.fixture
def minimal_ini(tmp_path):
    path = tmp_path / "pair.ini"
    path.write_text(MINIMAL_INI)
    return path


@pytest.fixture
def make_symmetric():
    return symmetric_config


@pytest.fixture
def make_asymmetric():
    return asymmetric_config
