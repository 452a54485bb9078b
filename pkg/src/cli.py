"""
Command-line surface for paramp

Parses the INI-style system configuration, dispatches subcommands, writes
plot-ready CSV tables plus a JSON run manifest, and maps errors onto exit
codes (0 success, 2 configuration error, 3 numerical error).

Usage:
    python main.py gain --config pair.ini --out-dir out/gain --both
    python main.py squeeze --mu-list 0,0.5 --ntraj 512 --out-dir out/sq
    python main.py rerun out/sq/manifest.json --out-dir out/sq2
"""

import argparse
import configparser
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from src import __version__, metrics
from src.analytic import (
    band_limited_correlations,
    band_limited_squeezing,
    correlations_closed_form,
    correlations_from_spectrum,
    correlations_lyapunov,
    cross_quadrature_stats,
    diffusion_matrix,
    eta_from_drives,
    experiment_drives,
    instability_growth_rate,
    nonlinear_linewidth,
    phase_gain,
    spectrum,
    variance_to_db,
)
from src.errors import ConfigError, ConvergenceError, NumericalError, ParampError
from src.estimators import (
    FIT_COLUMNS,
    FitResult,
    fit_dissipation_curve,
    fit_gain_curve,
    fit_ringdown,
    quadrature_histogram,
    quadrature_standard_errors,
    read_table,
    xi_vs_threshold_regression,
)
from src.model import (
    DEFAULT_MEMBRANE_MASS_KG,
    DEFAULT_SUBSTRATE_MASS_KG,
    DEFAULT_SUBSTRATE_Q,
    DEFAULT_TEMPERATURE_K,
    RESONANCE_RTOL,
    ModeParams,
    SystemConfig,
    back_solve_coupling,
    default_config,
    thermal_amplitude,
    threshold,
    with_mu,
    xi_scale,
)
from src.sde import (
    EULER_DT_GUARD,
    SimPlan,
    Stepper,
    ringdown_system,
    run_ensemble,
    run_gain_sweep,
    run_growth,
    run_ringdown,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
MANIFEST_NAME = "manifest.json"
RUN_LOG_NAME = "run.log"
METRICS_NAME = "metrics.prom"

EXPERIMENT_MU_LIST = "0,0.021,0.038,0.042"

_SECTIONS: Dict[str, Sequence[str]] = {
    "mode_i": ("freq_hz", "gamma_hz", "q", "mass_kg"),
    "mode_j": ("freq_hz", "gamma_hz", "q", "mass_kg"),
    "substrate": ("freq_hz", "gamma_hz", "q", "mass_kg"),
    "coupling": ("g", "threshold_m"),
    "pump": ("amplitude_m", "mu", "phase_rad"),
    "env": ("temperature_k",),
}
_REQUIRED_SECTIONS = ("mode_i", "mode_j", "coupling")


# --- configuration ----------------------------------------------------------


def _float(section: configparser.SectionProxy, key: str) -> Optional[float]:
    if key not in section:
        return None
    raw = section[key]
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"[{section.name}] {key}: must be finite, got {raw!r}")
    return value


def _mode_from_section(
    section: configparser.SectionProxy,
    default_mass: float,
    default_q: Optional[float] = None,
) -> ModeParams:
    freq = _float(section, "freq_hz")
    if freq is None:
        raise ConfigError(f"[{section.name}] missing key freq_hz")
    gamma_hz, q = _float(section, "gamma_hz"), _float(section, "q")
    if gamma_hz is None and q is None:
        if default_q is None:
            raise ConfigError(f"[{section.name}] needs one of gamma_hz or q")
        q = default_q
    mass = _float(section, "mass_kg")
    try:
        return ModeParams.from_hz(
            freq, gamma_hz=gamma_hz, q=q, mass_kg=default_mass if mass is None else mass
        )
    except ConfigError as e:
        raise ConfigError(f"[{section.name}] {e}") from e


def parse_config_text(text: str, source: str = "<config>") -> SystemConfig:
    """Build a SystemConfig from INI text; every error names the offending key"""
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"[{e.section}] duplicate key {e.option}") from e
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]") from e
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e.message}") from e

    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        for key in parser[name]:
            if key not in _SECTIONS[name]:
                raise ConfigError(f"[{name}] unknown key {key}")
    for name in _REQUIRED_SECTIONS:
        if not parser.has_section(name):
            raise ConfigError(f"missing section [{name}]")

    mode_i = _mode_from_section(parser["mode_i"], DEFAULT_MEMBRANE_MASS_KG)
    mode_j = _mode_from_section(parser["mode_j"], DEFAULT_MEMBRANE_MASS_KG)
    omega_sum = mode_i.omega + mode_j.omega
    if parser.has_section("substrate"):
        sub = parser["substrate"]
        freq = _float(sub, "freq_hz")
        if freq is not None and abs(2 * math.pi * freq - omega_sum) > RESONANCE_RTOL * omega_sum:
            raise ConfigError(
                f"[substrate] freq_hz: pump detuning is not supported "
                f"(expected {omega_sum / (2 * math.pi)} Hz)"
            )
        gamma_hz, q = _float(sub, "gamma_hz"), _float(sub, "q")
        if gamma_hz is None and q is None:
            q = DEFAULT_SUBSTRATE_Q
        mass = _float(sub, "mass_kg")
        try:
            substrate = ModeParams.from_hz(
                omega_sum / (2 * math.pi),
                gamma_hz=gamma_hz,
                q=q,
                mass_kg=DEFAULT_SUBSTRATE_MASS_KG if mass is None else mass,
            )
        except ConfigError as e:
            raise ConfigError(f"[substrate] {e}") from e
    else:
        substrate = ModeParams(
            omega=omega_sum, gamma=omega_sum / DEFAULT_SUBSTRATE_Q, mass=DEFAULT_SUBSTRATE_MASS_KG
        )

    coupling = parser["coupling"]
    g, threshold_m = _float(coupling, "g"), _float(coupling, "threshold_m")
    if (g is None) == (threshold_m is None):
        raise ConfigError("[coupling] give exactly one of g or threshold_m")
    if g is None:
        g = back_solve_coupling(mode_i, mode_j, threshold_m)

    temperature = DEFAULT_TEMPERATURE_K
    if parser.has_section("env"):
        value = _float(parser["env"], "temperature_k")
        temperature = temperature if value is None else value

    config = SystemConfig(
        mode_i=mode_i, mode_j=mode_j, substrate=substrate, g=g, temperature=temperature
    )
    if parser.has_section("pump"):
        pump = parser["pump"]
        amplitude, mu = _float(pump, "amplitude_m"), _float(pump, "mu")
        if amplitude is not None and mu is not None:
            raise ConfigError("[pump] amplitude_m and mu are mutually exclusive")
        phase = _float(pump, "phase_rad") or 0.0
        if mu is not None:
            config = with_mu(config, mu)
        elif amplitude is not None:
            config = replace(config, pump_amplitude=amplitude)
        config = replace(config, pump_phase=phase)
    return config


def parse_config(path: Path) -> SystemConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def config_snapshot(config: SystemConfig) -> Dict[str, Any]:
    """SI snapshot of a SystemConfig for the manifest"""
    return asdict(config)


# --- outputs ----------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to re-run a subcommand and reproduce its tables"""

    command: str
    arguments: Dict[str, Any]
    config: Dict[str, Any]
    config_text: Optional[str]
    seed: int
    version: str
    started_at: str
    finished_at: str = ""
    outputs: List[str] = field(default_factory=list)
    plan: Dict[str, Any] = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"manifest not found: {path}")
        try:
            data = json.loads(path.read_text())
            return cls(**data)
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigError(f"invalid manifest {path}: {e}") from e


class OutputSet:
    """Files written by one run; removed again if the run fails"""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: List[Path] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        self.files.append(path)
        logger.info(f"wrote {path} ({len(frame)} rows)")
        return path

    def remove_all(self) -> None:
        for path in self.files:
            if path.exists():
                path.unlink()
                logger.info(f"removed partial output {path}")
        self.files.clear()


# --- helpers ----------------------------------------------------------------


def _parse_float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _stepper(args: argparse.Namespace) -> Stepper:
    return Stepper(args.stepper)


def _default_dt(config: SystemConfig, stepper: Stepper) -> float:
    if stepper is Stepper.EULER_MARUYAMA:
        return 1.0 / (EULER_DT_GUARD * config.substrate.gamma)
    return 0.1 / max(config.mode_i.gamma, config.mode_j.gamma)


def _workers() -> int:
    raw = os.getenv("PARAMP_THREADS", "0") or "0"
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"PARAMP_THREADS must be an integer, got {raw!r}") from None
    if workers < 0:
        raise ConfigError(f"PARAMP_THREADS must be >= 0, got {workers}")
    return workers


COUNT_MINIMUMS = {"ntraj": 1, "phase_points": 1, "points": 2, "bins": 1, "keep_records": 0}


def _check_counts(args: argparse.Namespace) -> None:
    # manifest arguments never pass through argparse
    for name, minimum in COUNT_MINIMUMS.items():
        value = getattr(args, name, None)
        if value is not None and value < minimum:
            flag = "--" + name.replace("_", "-")
            raise ConfigError(f"{flag} must be >= {minimum}, got {value}")


def _wants(args: argparse.Namespace, part: str) -> bool:
    return args.mode == "both" or args.mode == part


# --- subcommands ------------------------------------------------------------


def cmd_threshold(
    args: argparse.Namespace, config: SystemConfig, outputs: OutputSet
) -> Dict[str, Any]:
    """Threshold and xi over a coupling sweep, xi regression, growth rates"""
    couplings = config.g * np.logspace(-1.5, 1.5, args.points)
    rows = []
    for g in couplings:
        cfg = replace(config, g=float(g), pump_amplitude=0.0)
        rows.append(
            {
                "g": g,
                "threshold_m": threshold(cfg),
                "xi_i_m": xi_scale(cfg, "i"),
                "xi_j_m": xi_scale(cfg, "j"),
                "growth_rate_mu1": instability_growth_rate(with_mu(cfg, 1.0)),
            }
        )
    table = pd.DataFrame(rows)
    outputs.write_csv(table, "threshold.csv")
    fit = xi_vs_threshold_regression(table["threshold_m"], table["xi_i_m"])
    outputs.write_csv(fit.to_frame(), "xi_fit.csv")
    logger.info(
        f"xi/threshold slope {fit['slope']:.10g}, intercept {fit['intercept']:.3g} m"
    )

    mu_list = args.mu_list or [0.0, 0.5, 1.0, 2.0]
    plan_info: Dict[str, Any] = {}
    growth_rows = []
    for mu in mu_list:
        cfg = with_mu(config, mu)
        row: Dict[str, Any] = {"mu": mu}
        if _wants(args, "analytic"):
            row["growth_rate_analytic"] = instability_growth_rate(cfg)
        if _wants(args, "sde"):
            rate = abs(instability_growth_rate(cfg)) or 0.5 * min(
                cfg.mode_i.gamma, cfg.mode_j.gamma
            )
            duration = args.duration or 10.0 / rate
            dt = args.dt or duration / 1000
            plan = SimPlan(
                dt=dt,
                duration=duration,
                noise_on=False,
                stepper=_stepper(args),
                allow_above_threshold=True,
                record_stride=max(1, int(round(duration / dt)) // 1000),
            )
            row["growth_rate_sde"] = run_growth(cfg, plan).growth_rate
            plan_info[f"growth_mu_{mu:g}"] = {"dt": dt, "duration": duration}
        growth_rows.append(row)
    outputs.write_csv(pd.DataFrame(growth_rows), "growth.csv")
    return plan_info


def cmd_gain(
    args: argparse.Namespace, config: SystemConfig, outputs: OutputSet
) -> Dict[str, Any]:
    """Phase-dependent gain for each pump amplitude in --mu-list"""
    mu_list = args.mu_list or _parse_float_list(EXPERIMENT_MU_LIST)
    phases = np.linspace(0.0, 2.0 * math.pi, args.phase_points, endpoint=False)
    drives = experiment_drives(config, args.signal_xth, args.idler_xth)
    eta = eta_from_drives(config, *drives)
    logger.info(f"drive ratio eta = {eta:.6g}")
    plan = None
    if args.dt is not None:
        plan = SimPlan(dt=args.dt, duration=args.dt, noise_on=False, stepper=_stepper(args))
    frames = []
    for mu in mu_list:
        cfg = with_mu(config, mu)
        frame = pd.DataFrame({"phi_rad": phases, "mu": mu})
        if _wants(args, "analytic"):
            frame["G_analytic"] = phase_gain(mu, eta, phases)
        if _wants(args, "sde"):
            sweep = run_gain_sweep(cfg, drives, phases, plan=plan)
            frame["G_sde"] = sweep.gain_signal
        if _wants(args, "analytic"):
            frame["G_idler_analytic"] = phase_gain(mu, 1.0 / eta, phases)
        if _wants(args, "sde"):
            frame["G_idler_sde"] = sweep.gain_idler
        frames.append(frame)
    outputs.write_csv(pd.concat(frames, ignore_index=True), "gain_vs_phase.csv")
    return {"eta": eta, "dt": args.dt, "stepper": args.stepper}


def cmd_ringdown(
    args: argparse.Namespace, config: SystemConfig, outputs: OutputSet
) -> Dict[str, Any]:
    """Ring-down of mode j for partner hold amplitudes given in units of xi"""
    xi = xi_scale(config, "j")
    x_initial = args.initial_xth * thermal_amplitude(config.mode_j, config.temperature)
    curves = []
    rows = []
    for fraction in args.hold_fractions:
        x_hold = fraction * xi
        analytic = nonlinear_linewidth(config, x_hold)
        row: Dict[str, Any] = {"x_hold_m": x_hold, "x_over_xi": fraction}
        row["gamma_eff_analytic"] = analytic.gamma
        row["overcoupled"] = analytic.overcoupled
        gamma = analytic.gamma
        if _wants(args, "sde"):
            plan = None
            if args.dt is not None:
                slow = abs(ringdown_system(config, x_hold).leading_eigenvalue())
                duration = args.duration or 3.0 / slow
                n_steps = int(round(duration / args.dt))
                plan = SimPlan(
                    dt=args.dt,
                    duration=duration,
                    noise_on=False,
                    stepper=_stepper(args),
                    record_stride=max(1, n_steps // 2000),
                )
            record = run_ringdown(config, x_hold, x_initial, plan=plan, prepare=args.prepare)
            fit = fit_ringdown(
                record.times, record.envelope, start_time=record.transient_time, omega=record.omega
            )
            row["gamma_eff_sde"] = fit["gamma_eff"]
            row["fit_converged"] = fit.converged
            gamma = fit["gamma_eff"]
            curves.append(
                pd.DataFrame({"x_hold_m": x_hold, "t_s": record.times, "envelope_m": record.envelope})
            )
        row["q_ratio"] = config.mode_j.gamma / gamma
        rows.append(row)
    table = pd.DataFrame(rows)
    if curves:
        outputs.write_csv(pd.concat(curves, ignore_index=True), "ringdown.csv")
    outputs.write_csv(table, "ringdown_fit.csv")

    usable = table[np.isfinite(table["q_ratio"])]
    if len(usable) >= 6:
        fit = fit_dissipation_curve(
            usable["x_hold_m"], usable["q_ratio"], gamma_j=config.mode_j.gamma
        )
        frame = fit.to_frame()
        frame.loc[len(frame)] = ["xi_model", xi, 0.0, True, 0.0]
        outputs.write_csv(frame, "dissipation_fit.csv")
    else:
        logger.info("fewer than 6 hold amplitudes, skipping the dissipation fit")
    return {"prepare": args.prepare, "x_initial_m": x_initial, "dt": args.dt}


def cmd_squeeze(
    args: argparse.Namespace, config: SystemConfig, outputs: OutputSet
) -> Dict[str, Any]:
    """Cross-quadrature statistics, analytic and from stochastic ensembles"""
    mu_list = args.mu_list or _parse_float_list(EXPERIMENT_MU_LIST)
    stepper = _stepper(args)
    dt = args.dt or _default_dt(config, stepper)
    plan = SimPlan(
        dt=dt,
        duration=args.duration or 300.0,
        n_traj=args.ntraj,
        seed=args.seed,
        stepper=stepper,
        workers=_workers(),
        keep_records=args.keep_records,
    )
    rows = []
    histograms = []
    for mu in mu_list:
        cfg = with_mu(config, mu)
        analytic = cross_quadrature_stats(correlations_closed_form(cfg)) if _wants(args, "analytic") else None
        band = band_limited_squeezing(cfg, args.bandwidth_hz) if args.bandwidth_hz else None
        variances: Dict[str, float] = {}
        errors: Dict[str, float] = {}
        if _wants(args, "sde"):
            result = run_ensemble(cfg, plan)
            x_th = result.correlations.x_th
            variances, errors = quadrature_standard_errors(result.per_trajectory, x_th)
            if result.records:
                samples = np.concatenate([rec.states for rec in result.records])
                for pair in ("alpha", "beta", "x", "y"):
                    hist = quadrature_histogram(samples, x_th[:2], bins=args.bins, pair=pair)
                    frame = hist.to_frame()
                    frame.columns = ["u", "v", "count"]
                    frame.insert(0, "pair", pair)
                    frame.insert(0, "mu", mu)
                    histograms.append(frame)
        for quad in ("x_a", "x_b", "y_a", "y_b"):
            row: Dict[str, Any] = {"mu": mu, "quadrature": quad}
            if analytic is not None:
                row["std_analytic"] = analytic.stds[quad]
            if variances:
                std = math.sqrt(variances[quad])
                row["std_sde"] = std
                row["stderr_sde"] = errors[quad] / (2.0 * std)
            reference = analytic.variances[quad] if analytic is not None else variances[quad]
            row["squeezing_db"] = variance_to_db(reference)
            if band is not None:
                row["var_ratio_band"] = band[quad]
            rows.append(row)
    outputs.write_csv(pd.DataFrame(rows), "squeeze.csv")
    if histograms:
        outputs.write_csv(pd.concat(histograms, ignore_index=True), "phase_space.csv")
    return {
        "dt": plan.dt,
        "duration": plan.duration,
        "n_traj": plan.n_traj,
        "stepper": plan.stepper.value,
        "workers": plan.workers,
    }


def cmd_spectrum(
    args: argparse.Namespace, config: SystemConfig, outputs: OutputSet
) -> Dict[str, Any]:
    """Fluctuation spectra and the correlation cross-check table"""
    mu_list = args.mu_list or [0.0]
    gamma_max = max(config.mode_i.gamma, config.mode_j.gamma)
    omega = np.linspace(0.0, args.omega_span * gamma_max, args.points)
    d_ii = diffusion_matrix(config).diagonal[0]
    frames = []
    corr_rows = []
    for mu in mu_list:
        cfg = with_mu(config, mu)
        s_alpha, s_beta = spectrum(cfg, None, omega)
        frames.append(
            pd.DataFrame(
                {
                    "mu": mu,
                    "omega_rad_s": omega,
                    "S_alpha_ii": s_alpha[:, 0, 0].real,
                    "S_alpha_jj": s_alpha[:, 1, 1].real,
                    "S_alpha_ij_re": s_alpha[:, 0, 1].real,
                    "S_alpha_ij_im": s_alpha[:, 0, 1].imag,
                    "S_beta_ij_re": s_beta[:, 0, 1].real,
                    "lorentzian_ii": d_ii / (2 * math.pi * (omega**2 + cfg.mode_i.gamma**2 / 4)),
                }
            )
        )
        sources = [correlations_closed_form(cfg), correlations_lyapunov(cfg), correlations_from_spectrum(cfg)]
        if args.bandwidth_hz:
            sources.append(band_limited_correlations(cfg, args.bandwidth_hz))
        for corr in sources:
            n = corr.normalized_alpha
            corr_rows.append(
                {"mu": mu, "source": corr.source, "C_ii": n[0, 0], "C_jj": n[1, 1], "C_ij": n[0, 1]}
            )
    outputs.write_csv(pd.concat(frames, ignore_index=True), "spectrum.csv")
    outputs.write_csv(pd.DataFrame(corr_rows), "correlations.csv")
    return {"points": args.points, "omega_span": args.omega_span}


def cmd_fit(
    args: argparse.Namespace, config: SystemConfig, outputs: OutputSet
) -> Dict[str, Any]:
    """Fit externally supplied data; columns per --fit-kind"""
    if args.data is None:
        raise ConfigError("fit needs --data")
    columns = FIT_COLUMNS[args.fit_kind]
    table = read_table(Path(args.data), columns)
    u, v = (table[c].to_numpy(dtype=float) for c in columns)
    result: FitResult
    if args.fit_kind == "gain":
        result = fit_gain_curve(u, v, eta=args.eta, fit_phase_offset=args.fit_phase_offset)
    elif args.fit_kind == "dissipation":
        result = fit_dissipation_curve(u, v, gamma_j=config.mode_j.gamma, model=args.model)
    elif args.fit_kind == "ringdown":
        result = fit_ringdown(u, v, omega=config.mode_j.omega)
    else:
        result = xi_vs_threshold_regression(u, v)
    if not result.converged:
        raise ConvergenceError(f"{args.fit_kind} fit did not converge: {result.message}")
    outputs.write_csv(result.to_frame(), "fit.csv")
    return {"fit_kind": args.fit_kind, "data": str(args.data)}


COMMANDS: Dict[str, Callable[[argparse.Namespace, SystemConfig, OutputSet], Dict[str, Any]]] = {
    "threshold": cmd_threshold,
    "gain": cmd_gain,
    "ringdown": cmd_ringdown,
    "squeeze": cmd_squeeze,
    "spectrum": cmd_spectrum,
    "fit": cmd_fit,
}


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI system configuration (default: demo pair)")
    common.add_argument("--out-dir", default="out", help="Output directory")
    common.add_argument("--seed", type=int, default=0, help="Base random seed")
    common.add_argument("--ntraj", type=int, default=256, help="Trajectories per ensemble")
    common.add_argument("--dt", type=float, help="Time step, s")
    common.add_argument("--duration", type=float, help="Run duration, s")
    common.add_argument("--bandwidth-hz", type=float, help="Measurement filter bandwidth, Hz")
    common.add_argument("--phase-points", type=int, default=20, help="Pump phases per sweep")
    common.add_argument("--mu-list", type=_parse_float_list, help="Comma-separated pump values")
    common.add_argument(
        "--stepper", choices=[s.value for s in Stepper], default=Stepper.EXACT.value
    )
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--analytic-only", dest="mode", action="store_const", const="analytic")
    mode.add_argument("--sde-only", dest="mode", action="store_const", const="sde")
    mode.add_argument("--both", dest="mode", action="store_const", const="both")
    common.set_defaults(mode="both")
    common.add_argument("--verbose", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(
        prog="paramp",
        description="Nondegenerate mechanical parametric amplifier: analytic engine and simulator",
    )
    parser.add_argument("--version", action="version", version=f"paramp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("threshold", parents=[common], help="Threshold, xi and growth rates")
    p.add_argument("--points", type=int, default=13, help="Coupling values over 3 decades")

    p = sub.add_parser("gain", parents=[common], help="Phase-dependent gain")
    p.add_argument("--signal-xth", type=float, default=35.0, help="Signal drive, x_th_j units")
    p.add_argument("--idler-xth", type=float, default=400.0, help="Idler drive, x_th_i units")

    p = sub.add_parser("ringdown", parents=[common], help="Two-mode dissipation ring-downs")
    p.add_argument(
        "--hold-fractions",
        type=_parse_float_list,
        default=[0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0],
        help="Partner hold amplitudes in units of xi",
    )
    p.add_argument("--initial-xth", type=float, default=10.0, help="Initial amplitude, x_th units")
    p.add_argument("--prepare", choices=["dressed", "bare"], default="dressed")

    p = sub.add_parser("squeeze", parents=[common], help="Two-mode thermomechanical squeezing")
    p.add_argument("--bins", type=int, default=41, help="Histogram bins per axis")
    p.add_argument("--keep-records", type=int, default=8, help="Trajectories kept for histograms")

    p = sub.add_parser("spectrum", parents=[common], help="Fluctuation spectra and correlations")
    p.add_argument("--points", type=int, default=401)
    p.add_argument("--omega-span", type=float, default=5.0, help="Grid end in units of max gamma")

    p = sub.add_parser("fit", parents=[common], help="Fit external CSV data")
    p.add_argument("--data", help="CSV file with the columns of --fit-kind")
    p.add_argument("--fit-kind", choices=sorted(FIT_COLUMNS), default="gain")
    p.add_argument("--eta", type=float, help="Known drive ratio for gain fits")
    p.add_argument("--fit-phase-offset", action="store_true")
    p.add_argument("--model", choices=["exact", "approx"], default="exact")

    p = sub.add_parser("rerun", help="Re-run from a manifest")
    p.add_argument("manifest", help="manifest.json of an earlier run")
    p.add_argument("--out-dir", help="Output directory (default: new run next to the manifest)")
    p.add_argument("--verbose", action="store_true")
    return parser


def configure_logging(out_dir: Path, verbose: bool) -> logging.Handler:
    level_name = "DEBUG" if verbose else os.getenv("PARAMP_LOG_LEVEL", "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)
    file_handler = logging.FileHandler(out_dir / RUN_LOG_NAME)
    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        handlers=[file_handler, logging.StreamHandler()],
        force=True,
    )
    return file_handler


def _arguments_for_manifest(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k not in ("out_dir", "verbose")}


def execute(
    args: argparse.Namespace, config_text: Optional[str], out_dir: Path
) -> int:
    """Run one subcommand into out_dir; returns the exit code"""
    outputs = OutputSet(out_dir)
    started = datetime.now(timezone.utc).isoformat()
    try:
        if config_text is not None:
            config = parse_config_text(config_text, source=args.config or "<manifest>")
        else:
            config = default_config()
        _check_counts(args)
        logger.info(f"paramp {__version__}: {args.command} -> {out_dir}")
        with metrics.time_command(args.command):
            plan = COMMANDS[args.command](args, config, outputs)
        manifest = RunManifest(
            command=args.command,
            arguments=_arguments_for_manifest(args),
            config=config_snapshot(config),
            config_text=config_text,
            seed=args.seed,
            version=__version__,
            started_at=started,
            finished_at=datetime.now(timezone.utc).isoformat(),
            outputs=[p.name for p in outputs.files],
            plan=plan,
        )
        manifest.write(out_dir / MANIFEST_NAME)
        return EXIT_OK
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        outputs.remove_all()
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"numerical error: {e}")
        outputs.remove_all()
        return EXIT_NUMERIC
    except ParampError as e:
        logger.error(f"error: {e}")
        outputs.remove_all()
        return EXIT_NUMERIC
    except Exception as e:
        logger.exception(f"unexpected error in {args.command}: {e}")
        outputs.remove_all()
        return EXIT_NUMERIC
    finally:
        metrics.write_metrics(out_dir / METRICS_NAME)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "rerun":
        try:
            manifest = RunManifest.load(Path(args.manifest))
        except ConfigError as e:
            logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, force=True)
            logger.error(str(e))
            return EXIT_CONFIG
        out_dir = Path(args.out_dir or Path(args.manifest).parent / "rerun")
        verbose = args.verbose
        args = argparse.Namespace(**manifest.arguments, out_dir=str(out_dir), verbose=verbose)
        config_text = manifest.config_text
    else:
        out_dir = Path(args.out_dir)
        config_text = None
        if args.config is not None:
            path = Path(args.config)
            if not path.exists():
                logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, force=True)
                logger.error(f"configuration error: config file not found: {path}")
                return EXIT_CONFIG
            config_text = path.read_text()

    out_dir.mkdir(parents=True, exist_ok=True)
    handler = configure_logging(out_dir, args.verbose)
    try:
        return execute(args, config_text, out_dir)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
