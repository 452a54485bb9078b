"""
Time-domain integrator for the slow-amplitude three-mode system

Every run is a linear SDE dx = (A x + b) dt + dW with <dW dW^T> = Q dt on
real quadrature vectors. Two steppers are available: explicit
Euler-Maruyama and the exact propagator (matrix exponential for the drift,
matrix-fraction discretization for the noise).

Quadrature vectors are interleaved (alpha_i, beta_i, alpha_j, beta_j,
alpha_S, beta_S). Drives follow F~ = -|F| exp(i phi) and the pump enters as
A_S = -i X_S exp(i phi_S); statistics are reported in the canonical pump
frame (phi_S = 0).
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from src import metrics
from src.analytic import (
    CorrelationSet,
    MeanAmplitudes,
    canonical_frame_angles,
    drift_matrices,
    diffusion_matrix,
    quadrature_rotation,
    thermal_amplitudes,
)
from src.errors import ConfigError, ConvergenceError, NumericalError
from src.model import (
    Drive,
    SystemConfig,
    normalized_pump,
    susceptibility,
    thermal_amplitude,
    with_mu,
)

logger = logging.getLogger(__name__)

EULER_DT_GUARD = 50.0  # dt <= 1 / (EULER_DT_GUARD * gamma_S)
WARMUP_RELAXATIONS = 10.0
SETTLE_RELAXATIONS = 20.0
DEFAULT_BLOWUP_FACTOR = 1.0e6
_NOISE_CHUNK = 512
_STATE_LABELS = ("alpha_i", "beta_i", "alpha_j", "beta_j", "alpha_S", "beta_S")


class Stepper(Enum):
    EULER_MARUYAMA = "euler"
    EXACT = "exact"


@dataclass(frozen=True)
class FluctuationState:
    """Quadrature fluctuations of the three slow amplitudes, m"""

    alpha_i: float = 0.0
    beta_i: float = 0.0
    alpha_j: float = 0.0
    beta_j: float = 0.0
    alpha_S: float = 0.0
    beta_S: float = 0.0

    def __post_init__(self):
        for name in _STATE_LABELS:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite state component {name}={value}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in _STATE_LABELS])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "FluctuationState":
        if len(values) != len(_STATE_LABELS):
            raise ConfigError(f"state needs {len(_STATE_LABELS)} components")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class SimPlan:
    """Integration plan shared by every run type"""

    dt: float
    duration: float
    n_traj: int = 1
    seed: int = 0
    record_stride: int = 1
    drives: Optional[Tuple[Drive, Drive]] = None
    noise_on: bool = True
    stepper: Stepper = Stepper.EULER_MARUYAMA
    allow_above_threshold: bool = False
    blowup_factor: float = DEFAULT_BLOWUP_FACTOR
    batch_size: int = 256
    workers: int = 0
    keep_records: int = 8

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (math.isfinite(self.duration) and self.duration >= self.dt):
            raise ConfigError(
                f"duration must be at least one step, got {self.duration}"
            )
        if self.n_traj < 1:
            raise ConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for name in ("record_stride", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.workers < 0 or self.keep_records < 0:
            raise ConfigError("workers and keep_records must be >= 0")
        if self.blowup_factor <= 0:
            raise ConfigError(f"blowup_factor must be positive, got {self.blowup_factor}")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def check_step(self, config: SystemConfig) -> None:
        """Reject Euler-Maruyama steps that do not resolve the substrate"""
        if self.stepper is Stepper.EULER_MARUYAMA:
            limit = 1.0 / (EULER_DT_GUARD * config.substrate.gamma)
            if self.dt > limit:
                raise ConfigError(
                    f"dt={self.dt:.3e} s exceeds the Euler-Maruyama guard "
                    f"1/(50 gamma_S) = {limit:.3e} s; reduce dt or use the exact stepper"
                )

    def validate_for(self, config: SystemConfig) -> List[str]:
        """check_step plus the stationary-statistics duration check; returns warnings"""
        self.check_step(config)
        warnings: List[str] = []
        gamma_min = min(config.mode_i.gamma, config.mode_j.gamma)
        if self.duration < WARMUP_RELAXATIONS / gamma_min:
            message = (
                f"duration {self.duration:g} s is shorter than 10/gamma_min "
                f"= {WARMUP_RELAXATIONS / gamma_min:g} s"
            )
            logger.warning(message)
            warnings.append(message)
        return warnings


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """dx = (generator x + forcing) dt + noise with covariance diffusion * dt"""

    generator: np.ndarray
    forcing: np.ndarray
    diffusion: np.ndarray
    scales: np.ndarray

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    def fixed_point(self) -> np.ndarray:
        if not np.any(self.forcing):
            return np.zeros(self.dim)
        return -np.linalg.solve(self.generator, self.forcing)

    def leading_eigenvalue(self) -> float:
        return float(np.max(np.linalg.eigvals(self.generator).real))


@dataclass(frozen=True, eq=False)
class StepMap:
    """One-step affine map x -> transition x + offset + noise_factor z"""

    transition: np.ndarray
    offset: np.ndarray
    noise_factor: np.ndarray


@dataclass(eq=False)
class TrajectoryRecord:
    """Recorded samples of one trajectory (canonical pump frame)"""

    index: int
    seed: int
    times: np.ndarray
    states: np.ndarray
    moments: np.ndarray


@dataclass(eq=False)
class EnsembleResult:
    """Stationary second moments about the deterministic mean, canonical frame"""

    correlations: CorrelationSet
    covariance: np.ndarray
    standard_errors: np.ndarray
    per_trajectory: np.ndarray
    records: List[TrajectoryRecord]
    mean: np.ndarray
    warmup: float
    samples_per_trajectory: int
    warnings: List[str] = field(default_factory=list)

    @property
    def n_traj(self) -> int:
        return self.per_trajectory.shape[0]


@dataclass(eq=False)
class RingdownRecord:
    """Deterministic free decay of the damped mode with its partner held"""

    times: np.ndarray
    envelope: np.ndarray
    x_hold: float
    x_initial: float
    damped: str
    prepare: str
    transient_time: float
    omega: float


@dataclass(eq=False)
class GainSweepResult:
    """Signal (mode j) and idler (mode i) gain versus pump phase"""

    phases: np.ndarray
    delta_phi: np.ndarray
    gain_signal: np.ndarray
    gain_idler: np.ndarray
    residuals: np.ndarray
    mu: float
    settle_time: float


@dataclass(eq=False)
class GrowthRecord:
    times: np.ndarray
    amplitude: np.ndarray
    growth_rate: float


# --- system builders --------------------------------------------------------


def _forcing_term(config: SystemConfig, drives: Optional[Tuple[Drive, Drive]]) -> np.ndarray:
    b = np.zeros(6)
    if drives is None:
        return b
    for k, (mode, drive) in enumerate(zip((config.mode_i, config.mode_j), drives)):
        # i (gamma chi / 2) F~ with F~ = -|F| exp(i phi)
        f = -0.5j * mode.gamma * susceptibility(mode) * drive.magnitude
        f *= complex(math.cos(drive.phase), math.sin(drive.phase))
        b[2 * k] = f.real
        b[2 * k + 1] = f.imag
    return b


def fluctuation_system(
    config: SystemConfig,
    mean_amps: Optional[MeanAmplitudes] = None,
    drives: Optional[Tuple[Drive, Drive]] = None,
) -> LinearSystem:
    """Three-mode quadrature system in the lab frame of the configured pump phase"""
    drift = drift_matrices(config, mean_amps)
    canonical = np.zeros((6, 6))
    canonical[0::2, 0::2] = drift.m_alpha
    canonical[1::2, 1::2] = drift.m_beta
    rotation = quadrature_rotation(canonical_frame_angles(config.pump_phase))
    generator = rotation.T @ canonical @ rotation
    noise = np.repeat(diffusion_matrix(config).diagonal, 2)
    return LinearSystem(
        generator=generator,
        forcing=_forcing_term(config, drives),
        diffusion=np.diag(noise),
        scales=np.repeat(thermal_amplitudes(config), 2),
    )


def ringdown_system(config: SystemConfig, x_hold: float, damped: str = "j") -> LinearSystem:
    """(A_d, A_S) pair with the partner amplitude held at x_hold, noise free"""
    if damped not in ("i", "j"):
        raise ConfigError(f"damped must be 'i' or 'j', got {damped!r}")
    mode = config.mode_j if damped == "j" else config.mode_i
    sub = config.substrate
    g = config.g
    pair = np.array(
        [
            [-0.5 * mode.gamma, 0.25 * mode.gamma * susceptibility(mode) * g * x_hold],
            [-0.25 * sub.gamma * susceptibility(sub) * g * x_hold, -0.5 * sub.gamma],
        ]
    )
    generator = np.kron(pair, np.eye(2))
    scales = np.repeat(
        [thermal_amplitude(mode, config.temperature), thermal_amplitude(sub, config.temperature)],
        2,
    )
    return LinearSystem(
        generator=generator,
        forcing=np.zeros(4),
        diffusion=np.zeros((4, 4)),
        scales=scales,
    )


def _matrix_sqrt_factor(covariance: np.ndarray) -> np.ndarray:
    if np.count_nonzero(covariance - np.diag(np.diagonal(covariance))) == 0:
        return np.diag(np.sqrt(np.maximum(np.diagonal(covariance), 0.0)))
    sym = 0.5 * (covariance + covariance.T)
    w, v = np.linalg.eigh(sym)
    return v * np.sqrt(np.maximum(w, 0.0))


def one_step_map(system: LinearSystem, dt: float, stepper: Stepper) -> StepMap:
    n = system.dim
    if stepper is Stepper.EULER_MARUYAMA:
        return StepMap(
            transition=np.eye(n) + system.generator * dt,
            offset=system.forcing * dt,
            noise_factor=_matrix_sqrt_factor(system.diffusion * dt),
        )
    augmented = np.zeros((n + 1, n + 1))
    augmented[:n, :n] = system.generator
    augmented[:n, n] = system.forcing
    propagator = linalg.expm(augmented * dt)
    fraction = np.block(
        [[system.generator, system.diffusion], [np.zeros((n, n)), -system.generator.T]]
    )
    blocks = linalg.expm(fraction * dt)[:n, :]
    noise_cov = blocks[:, n:] @ blocks[:, :n].T
    return StepMap(
        transition=propagator[:n, :n],
        offset=propagator[:n, n],
        noise_factor=_matrix_sqrt_factor(noise_cov),
    )


def _affine_power(step_map: StepMap, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Transition and offset of `count` noise-free steps"""
    n = step_map.transition.shape[0]
    augmented = np.eye(n + 1)
    augmented[:n, :n] = step_map.transition
    augmented[:n, n] = step_map.offset
    power = np.linalg.matrix_power(augmented, count)
    return power[:n, :n], power[:n, n]


def _check_blowup(
    x: np.ndarray, system: LinearSystem, plan: SimPlan, time: Optional[float] = None
) -> None:
    if plan.allow_above_threshold:
        return
    where = "" if time is None else f" at t = {time:g} s"
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite state{where}, integration diverged")
    ratio = np.abs(x) / system.scales
    if np.any(ratio > plan.blowup_factor):
        worst = np.unravel_index(np.argmax(ratio), ratio.shape)
        label = _STATE_LABELS[worst[-1]] if system.dim == 6 else f"component {worst[-1]}"
        raise NumericalError(
            f"blow-up guard exceeded: |{label}| = {ratio[worst]:.3e} x_th "
            f"> {plan.blowup_factor:g} x_th{where}; pump above threshold or dt too large"
        )


def _trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _resolve_workers(requested: int) -> int:
    if requested:
        return requested
    from_env = int(os.environ.get("PARAMP_THREADS", "0") or 0)
    return from_env if from_env > 0 else (os.cpu_count() or 1)


# --- single step ------------------------------------------------------------


def step(
    state: FluctuationState,
    config: SystemConfig,
    mean_amps: Optional[MeanAmplitudes],
    plan: SimPlan,
    rng: Optional[np.random.Generator] = None,
) -> FluctuationState:
    """Advance one state by plan.dt with plan.stepper"""
    plan.check_step(config)
    system = fluctuation_system(config, mean_amps, plan.drives)
    step_map = one_step_map(system, plan.dt, plan.stepper)
    x = step_map.transition @ state.as_array() + step_map.offset
    if plan.noise_on:
        rng = rng if rng is not None else _trajectory_rng(plan.seed, 0)
        x = x + step_map.noise_factor @ rng.standard_normal(system.dim)
    _check_blowup(x, system, plan)
    return FluctuationState.from_array(x)


# --- ensembles --------------------------------------------------------------


def _rowwise(matrix: np.ndarray, x: np.ndarray) -> np.ndarray:
    """matrix @ x[b] for every row b, summed in a fixed column order"""
    # elementwise ufuncs only: trajectory b gets the same bits in any batch
    out = x[:, :1] * matrix[:, 0]
    for j in range(1, matrix.shape[1]):
        out = out + x[:, j : j + 1] * matrix[:, j]
    return out


@dataclass(frozen=True)
class _BatchJob:
    start: int
    stop: int


def _run_batch(
    job: _BatchJob,
    step_map: StepMap,
    system: LinearSystem,
    plan: SimPlan,
    x0: np.ndarray,
    mean: np.ndarray,
    warmup_steps: int,
    rotation: np.ndarray,
) -> Tuple[np.ndarray, List[TrajectoryRecord], int]:
    indices = range(job.start, job.stop)
    rngs = [_trajectory_rng(plan.seed, idx) for idx in indices]
    batch = len(rngs)
    n = system.dim
    x = np.tile(x0, (batch, 1))
    acc = np.zeros((batch, n, n))
    samples = 0
    n_steps = plan.n_steps
    keep = [idx < plan.keep_records for idx in indices]
    kept_states: List[List[np.ndarray]] = [[] for _ in indices]
    kept_times: List[float] = []

    for chunk_start in range(0, n_steps, _NOISE_CHUNK):
        chunk = min(_NOISE_CHUNK, n_steps - chunk_start)
        if plan.noise_on:
            noise = np.stack([rng.standard_normal((chunk, n)) for rng in rngs], axis=1)
        for offset in range(chunk):
            k = chunk_start + offset + 1
            x = _rowwise(step_map.transition, x) + step_map.offset
            if plan.noise_on:
                x = x + _rowwise(step_map.noise_factor, noise[offset])
            _check_blowup(x, system, plan, time=k * plan.dt)
            if k % plan.record_stride:
                continue
            if k <= warmup_steps:
                continue
            d = x - mean
            acc += np.einsum("bi,bj->bij", d, d)
            samples += 1
            if any(keep):
                kept_times.append(k * plan.dt)
                for b in range(batch):
                    if keep[b]:
                        kept_states[b].append(rotation @ d[b])  # canonical frame
    if samples == 0:
        raise NumericalError("no samples recorded after warm-up")
    moments = rotation @ (acc / samples) @ rotation.T
    records = [
        TrajectoryRecord(
            index=idx,
            seed=plan.seed,
            times=np.array(kept_times),
            states=np.array(kept_states[b]),
            moments=moments[b],
        )
        for b, idx in enumerate(indices)
        if keep[b]
    ]
    metrics.TRAJECTORIES.inc(batch)
    metrics.STEPS.inc(batch * n_steps)
    return moments, records, samples


def warmup_time(config: SystemConfig, system: Optional[LinearSystem] = None) -> float:
    """10 relaxation times of the slowest second moment"""
    system = system if system is not None else fluctuation_system(config)
    gamma_min = min(config.mode_i.gamma, config.mode_j.gamma)
    leading = system.leading_eigenvalue()
    return WARMUP_RELAXATIONS / min(gamma_min, 2.0 * abs(leading))


def run_ensemble(
    config: SystemConfig,
    plan: SimPlan,
    mean_amps: Optional[MeanAmplitudes] = None,
) -> EnsembleResult:
    """
    Stationary second moments from time-and-ensemble averages.

    Moments are taken about the deterministic mean -A^-1 b over the samples
    recorded after the warm-up and reduced in trajectory index order, so the
    result does not depend on batch size or worker count.
    """
    mu = normalized_pump(config)
    if mu >= 1.0 and not plan.allow_above_threshold:
        raise NumericalError(f"no stationary statistics above threshold (mu = {mu:.6g})")
    warnings = plan.validate_for(config)
    system = fluctuation_system(config, mean_amps, plan.drives)
    if system.leading_eigenvalue() >= 0:
        raise NumericalError("fluctuation dynamics are unstable, no stationary statistics")
    step_map = one_step_map(system, plan.dt, plan.stepper)
    rotation = quadrature_rotation(canonical_frame_angles(config.pump_phase))

    warmup = warmup_time(config, system)
    warmup_steps = int(math.ceil(warmup / plan.dt))
    if warmup_steps >= plan.n_steps:
        message = (
            f"insufficient duration: warm-up {warmup:g} s is not shorter than "
            f"duration {plan.duration:g} s; using the second half of each run"
        )
        logger.warning(message)
        warnings.append(message)
        warmup_steps = plan.n_steps // 2
        warmup = warmup_steps * plan.dt

    mean = system.fixed_point()
    x0 = mean.copy()
    jobs = [
        _BatchJob(start, min(start + plan.batch_size, plan.n_traj))
        for start in range(0, plan.n_traj, plan.batch_size)
    ]
    workers = min(_resolve_workers(plan.workers), len(jobs))
    logger.info(
        f"ensemble: {plan.n_traj} trajectories x {plan.n_steps} {plan.stepper.value} "
        f"steps (dt={plan.dt:g} s, warm-up {warmup:g} s) on {workers} worker(s)"
    )

    def work(job: _BatchJob):
        return _run_batch(job, step_map, system, plan, x0, mean, warmup_steps, rotation)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(work, jobs))
    else:
        outputs = [work(job) for job in jobs]

    per_trajectory = np.concatenate([out[0] for out in outputs], axis=0)
    records = [rec for out in outputs for rec in out[1]]
    covariance = np.mean(per_trajectory, axis=0)
    covariance = 0.5 * (covariance + covariance.T)
    if plan.n_traj > 1:
        standard_errors = np.std(per_trajectory, axis=0, ddof=1) / math.sqrt(plan.n_traj)
    else:
        standard_errors = np.full_like(covariance, np.nan)
        warnings.append("single trajectory, no ensemble standard errors")

    return EnsembleResult(
        correlations=CorrelationSet.from_phase_space(
            covariance, thermal_amplitudes(config), source="ensemble"
        ),
        covariance=covariance,
        standard_errors=standard_errors,
        per_trajectory=per_trajectory,
        records=records,
        mean=rotation @ mean,
        warmup=warmup,
        samples_per_trajectory=outputs[0][2],
        warnings=warnings,
    )


# --- deterministic runs -----------------------------------------------------


def _strided_path(
    step_map: StepMap, x0: np.ndarray, stride: int, n_records: int
) -> np.ndarray:
    transition, offset = _affine_power(step_map, stride)
    path = np.empty((n_records + 1, x0.size))
    path[0] = x0
    for k in range(n_records):
        path[k + 1] = transition @ path[k] + offset
    return path


def _dressed_start(system: LinearSystem, x_initial: float) -> np.ndarray:
    """Slowest eigenvector of the (A_d, A_S) pair scaled so A_d = x_initial"""
    pair = system.generator[0::2, 0::2]
    values, vectors = np.linalg.eig(pair)
    slowest = vectors[:, int(np.argmax(values.real))]
    a_s = slowest[1] / slowest[0] * x_initial
    return np.array([x_initial, 0.0, a_s.real, a_s.imag])


def run_ringdown(
    config: SystemConfig,
    x_i_hold: float,
    x_j_initial: float,
    plan: Optional[SimPlan] = None,
    prepare: str = "dressed",
    damped: str = "j",
) -> RingdownRecord:
    """
    Free decay of the damped mode while its partner is held at x_i_hold.

    prepare="dressed" releases the mode from the slowest eigenstate of the
    coupled pair, so the envelope is a single exponential; "bare" starts
    with the substrate at rest and carries a transient of a few 1/gamma_S.
    """
    if x_i_hold < 0:
        raise ConfigError(f"x_i_hold must be >= 0, got {x_i_hold}")
    if x_j_initial <= 0:
        raise ConfigError(f"x_j_initial must be positive, got {x_j_initial}")
    if prepare not in ("dressed", "bare"):
        raise ConfigError(f"prepare must be 'dressed' or 'bare', got {prepare!r}")
    system = ringdown_system(config, x_i_hold, damped)
    slow_rate = abs(system.leading_eigenvalue())
    if plan is None:
        duration = 3.0 / slow_rate
        plan = SimPlan(dt=duration / 2000, duration=duration, stepper=Stepper.EXACT)
    plan.check_step(config)
    step_map = one_step_map(system, plan.dt, plan.stepper)

    if prepare == "dressed":
        x0 = _dressed_start(system, x_j_initial)
        transient = 0.0
    else:
        x0 = np.array([x_j_initial, 0.0, 0.0, 0.0])
        transient = WARMUP_RELAXATIONS / config.substrate.gamma

    n_records = plan.n_steps // plan.record_stride
    path = _strided_path(step_map, x0, plan.record_stride, n_records)
    envelope = np.hypot(path[:, 0], path[:, 1])
    times = np.arange(n_records + 1) * plan.record_stride * plan.dt
    mode = config.mode_j if damped == "j" else config.mode_i
    metrics.STEPS.inc(plan.n_steps)
    logger.debug(
        f"ring-down x_hold={x_i_hold:.3e} m: {n_records} records over {times[-1]:g} s"
    )
    return RingdownRecord(
        times=times,
        envelope=envelope,
        x_hold=x_i_hold,
        x_initial=x_j_initial,
        damped=damped,
        prepare=prepare,
        transient_time=transient,
        omega=mode.omega,
    )


def settle_time(config: SystemConfig, system: LinearSystem) -> float:
    gamma_min = min(config.mode_i.gamma, config.mode_j.gamma)
    return max(
        SETTLE_RELAXATIONS / gamma_min,
        SETTLE_RELAXATIONS / abs(system.leading_eigenvalue()),
    )


def _settled_amplitudes(
    config: SystemConfig,
    drives: Tuple[Drive, Drive],
    plan: SimPlan,
    n_steps: int,
    tol: float,
) -> Tuple[float, float, float]:
    system = fluctuation_system(config, drives=drives)
    if system.leading_eigenvalue() >= 0:
        raise NumericalError("driven system is unstable, no steady state")
    step_map = one_step_map(system, plan.dt, plan.stepper)
    stride = max(1, n_steps // 100)
    _, before = _affine_power(step_map, n_steps - stride)
    after_t, after_o = _affine_power(step_map, stride)
    after = after_t @ before + after_o
    residual = float(
        np.linalg.norm(after[:4] - before[:4]) / max(np.linalg.norm(after[:4]), 1e-300)
    )
    if residual > tol:
        raise ConvergenceError(
            f"gain sweep did not settle at pump phase {config.pump_phase:.6g}", residual
        )
    metrics.STEPS.inc(n_steps)
    return float(np.hypot(after[0], after[1])), float(np.hypot(after[2], after[3])), residual


def run_gain_sweep(
    config: SystemConfig,
    drives: Tuple[Drive, Drive],
    phase_grid: Sequence[float],
    plan: Optional[SimPlan] = None,
    tol: float = 1e-7,
) -> GainSweepResult:
    """
    Noise-free steady state for each pump phase in phase_grid.

    The pump amplitude is held fixed. Gains are |A(phi)| / |A(mu=0)| for the
    signal (mode j) and idler (mode i).
    """
    mu = normalized_pump(config)
    if mu >= 1.0:
        raise NumericalError(f"no steady state above threshold (mu = {mu:.6g})")
    if drives[1].magnitude <= 0:
        raise ConfigError("signal drive (mode j) must be nonzero")
    phases = np.asarray(phase_grid, dtype=float)
    free_system = fluctuation_system(config, drives=drives)
    t_settle = settle_time(config, free_system)
    if plan is None:
        plan = SimPlan(
            dt=t_settle / 4096, duration=t_settle, noise_on=False, stepper=Stepper.EXACT
        )
    plan.check_step(config)
    n_steps = max(int(math.ceil(t_settle / plan.dt)), plan.n_steps)

    bare = with_mu(config, 0.0)
    bare_steps = int(math.ceil(settle_time(bare, fluctuation_system(bare)) / plan.dt))
    ref_i, ref_j, _ = _settled_amplitudes(bare, drives, plan, bare_steps, tol)

    gain_signal = np.empty(phases.size)
    gain_idler = np.empty(phases.size)
    residuals = np.empty(phases.size)
    for k, phi in enumerate(phases):
        a_i, a_j, residuals[k] = _settled_amplitudes(
            replace(config, pump_phase=float(phi)), drives, plan, n_steps, tol
        )
        gain_signal[k] = a_j / ref_j
        gain_idler[k] = a_i / ref_i if ref_i > 0 else np.nan
    logger.info(
        f"gain sweep mu={mu:.4g}: {phases.size} phases, min G={gain_signal.min():.4g}, "
        f"max residual {residuals.max():.2e}"
    )
    return GainSweepResult(
        phases=phases,
        delta_phi=phases - drives[0].phase - drives[1].phase,
        gain_signal=gain_signal,
        gain_idler=gain_idler,
        residuals=residuals,
        mu=mu,
        settle_time=n_steps * plan.dt,
    )


def run_growth(config: SystemConfig, plan: SimPlan) -> GrowthRecord:
    """Noise-free run from a thermal-scale kick; fitted amplitude rate, 1/s"""
    mu = normalized_pump(config)
    if mu >= 1.0 and not plan.allow_above_threshold:
        raise ConfigError("above-threshold run requires allow_above_threshold")
    plan.check_step(config)
    system = fluctuation_system(config)
    step_map = one_step_map(system, plan.dt, plan.stepper)
    x0 = np.zeros(6)
    x0[0] = system.scales[0]
    n_records = plan.n_steps // plan.record_stride
    path = _strided_path(step_map, x0, plan.record_stride, n_records)
    _check_blowup(path, system, plan)
    times = np.arange(n_records + 1) * plan.record_stride * plan.dt
    amplitude = np.linalg.norm(path[:, :4], axis=1)
    tail = slice(n_records // 2, None)
    fit = stats.linregress(times[tail], np.log(amplitude[tail]))
    metrics.STEPS.inc(plan.n_steps)
    return GrowthRecord(times=times, amplitude=amplitude, growth_rate=float(fit.slope))
