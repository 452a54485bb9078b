"""
Statistical reduction and least-squares parameter extraction

Ring-down rates, phase-dependent gain fits, two-mode dissipation fits,
the xi-vs-threshold regression, quadrature histograms and consistency checks
of ensemble estimates against analytic values.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, stats

from src import metrics
from src.analytic import CorrelationSet, cross_quadrature_stats, phase_gain
from src.errors import ConfigError

logger = logging.getLogger(__name__)

LM_OPTIONS = dict(method="lm", xtol=1e-10, ftol=1e-12, gtol=1e-12)
LINEAR_REGIME_Q = 0.9
MIN_RINGDOWN_SAMPLES = 10
MIN_GAIN_POINTS = 8
MIN_DISSIPATION_POINTS = 6
MIN_REGRESSION_POINTS = 3


@dataclass
class FitResult:
    """Parameter estimates from a least-squares fit"""

    params: Dict[str, float]
    covariance: np.ndarray
    residual_norm: float
    n_points: int
    converged: bool
    kind: str = ""
    message: str = ""
    extras: Dict[str, float] = field(default_factory=dict)

    @property
    def stderr(self) -> Dict[str, float]:
        diag = np.diag(self.covariance) if self.covariance.size else []
        return {
            name: float(math.sqrt(v)) if v >= 0 else float("nan")
            for name, v in zip(self.params, diag)
        }

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def to_frame(self) -> pd.DataFrame:
        """One row per parameter: parameter, value, stderr, converged, residual_norm"""
        errors = self.stderr
        rows = [
            {
                "parameter": name,
                "value": value,
                "stderr": errors.get(name, float("nan")),
                "converged": self.converged,
                "residual_norm": self.residual_norm,
            }
            for name, value in {**self.params, **self.extras}.items()
        ]
        return pd.DataFrame(
            rows, columns=["parameter", "value", "stderr", "converged", "residual_norm"]
        )


def _failed(kind: str, names: Sequence[str], n_points: int, message: str) -> FitResult:
    logger.warning(f"{kind} fit not converged: {message}")
    metrics.record_fit(kind, converged=False)
    k = len(names)
    return FitResult(
        params={name: float("nan") for name in names},
        covariance=np.full((k, k), np.nan),
        residual_norm=float("nan"),
        n_points=n_points,
        converged=False,
        kind=kind,
        message=message,
    )


def _lm_covariance(jac: np.ndarray, residuals: np.ndarray, absolute: bool) -> np.ndarray:
    """(J^T J)^-1, scaled by the reduced chi-square unless sigma is absolute"""
    m, n = jac.shape
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        return np.full((n, n), np.inf)
    if not absolute and m > n:
        cov = cov * float(residuals @ residuals) / (m - n)
    return cov


# --- ring-down --------------------------------------------------------------


def fit_ringdown(
    times: Sequence[float],
    envelope: Sequence[float],
    start_time: float = 0.0,
    omega: Optional[float] = None,
) -> FitResult:
    """
    Energy decay rate from a log-linear fit of an amplitude envelope.

    The amplitude decays as exp(-t / tau); gamma_eff = 2 / tau and, when the
    mode frequency is given, Q_eff = omega tau / 2.
    """
    t = np.asarray(times, dtype=float)
    a = np.asarray(envelope, dtype=float)
    if t.shape != a.shape:
        raise ConfigError("times and envelope must have the same length")
    keep = t >= start_time
    t, a = t[keep], a[keep]
    if t.size < MIN_RINGDOWN_SAMPLES:
        raise ConfigError(
            f"ring-down fit needs >= {MIN_RINGDOWN_SAMPLES} samples, got {t.size}"
        )
    if np.any(a <= 0):
        return _failed("ringdown", ["gamma_eff"], t.size, "non-positive envelope")

    log_a = np.log(a)
    fit = stats.linregress(t, log_a)
    residuals = log_a - (fit.intercept + fit.slope * t)
    noise = float(np.std(residuals))
    if fit.slope >= 0:
        return _failed("ringdown", ["gamma_eff"], t.size, "envelope does not decay")
    if np.any(np.diff(log_a) > 3.0 * math.sqrt(2.0) * noise + 1e-12):
        return _failed(
            "ringdown", ["gamma_eff"], t.size, "non-monotone envelope beyond noise"
        )

    tau = -1.0 / fit.slope
    span = (t[-1] - t[0]) / tau
    gamma = 2.0 / tau
    extras = {"tau": tau}
    if omega is not None:
        extras["q_eff"] = omega * tau / 2.0
    converged = span >= 2.0
    message = "" if converged else f"record spans only {span:.2f} decay constants"
    metrics.record_fit("ringdown", converged)
    return FitResult(
        params={"gamma_eff": gamma},
        covariance=np.array([[(2.0 * fit.stderr) ** 2]]),
        residual_norm=float(np.linalg.norm(residuals)),
        n_points=int(t.size),
        converged=converged,
        kind="ringdown",
        message=message,
        extras=extras,
    )


# --- phase-dependent gain ---------------------------------------------------


def _gain_model(
    theta: np.ndarray, phi: np.ndarray, eta: Optional[float], offset: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """Gain and Jacobian; theta = (mu, p=mu*eta | -, [phi0])"""
    mu = theta[0]
    p = theta[1] if eta is None else mu * eta
    phi0 = theta[-1] if offset else 0.0
    cos = np.cos(phi - phi0)
    sin = np.sin(phi - phi0)
    denom = 1.0 - mu**2
    s = np.sqrt(np.maximum(1.0 + p**2 - 2.0 * p * cos, 1e-300))
    gain = s / denom
    d_mu = 2.0 * mu * s / denom**2
    d_p = (p - cos) / (s * denom)
    columns = [d_mu + eta * d_p] if eta is not None else [d_mu, d_p]
    if offset:
        columns.append(-p * sin / (s * denom))
    return gain, np.column_stack(columns)


def _nearest(phi: np.ndarray, values: np.ndarray, target: float) -> float:
    distance = np.abs(np.angle(np.exp(1j * (phi - target))))
    return float(values[int(np.argmin(distance))])


def _gain_start(phi: np.ndarray, g: np.ndarray, eta: Optional[float]) -> Tuple[float, float]:
    g0 = _nearest(phi, g, 0.0)
    g_pi = _nearest(phi, g, math.pi)
    if eta is not None:
        disc = eta**2 - 4.0 * g_pi * (1.0 - g_pi)
        mu = (-eta + math.sqrt(disc)) / (2.0 * g_pi) if disc >= 0 else 0.0
        return min(max(mu, 0.0), 0.99), mu * eta
    mu_sq = 1.0 - 2.0 / (g0 + g_pi)
    p = g_pi * (1.0 - mu_sq) - 1.0
    if not (0.0 <= mu_sq < 1.0 and p < 1.0):
        mu_sq = 1.0 - 2.0 / max(g_pi - g0, 2.0 + 1e-6)
        p = g_pi * (1.0 - mu_sq) - 1.0
    mu = math.sqrt(min(max(mu_sq, 1e-6), 0.98))
    return mu, max(p, 1e-6)


def fit_gain_curve(
    phi: Sequence[float],
    gain: Sequence[float],
    eta: Optional[float] = None,
    fit_phase_offset: bool = False,
    sigma: Optional[Sequence[float]] = None,
) -> FitResult:
    """
    Least squares of the phase-dependent gain law on (phi, G) samples.

    With eta known only mu (and optionally a phase offset) is fitted. With
    eta free the fit runs in (mu, mu*eta), in which the problem is well
    conditioned, and reports (mu, eta) with the transformed covariance.
    """
    phi = np.asarray(phi, dtype=float)
    g = np.asarray(gain, dtype=float)
    if phi.shape != g.shape:
        raise ConfigError("phi and gain must have the same length")
    if phi.size < MIN_GAIN_POINTS:
        raise ConfigError(f"gain fit needs >= {MIN_GAIN_POINTS} points, got {phi.size}")
    if np.ptp(phi) < math.pi:
        raise ConfigError("gain fit needs phase samples spanning at least pi")
    if eta is not None and eta < 0:
        raise ConfigError(f"eta must be >= 0, got {eta}")
    weights = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else np.ones_like(g)

    names = ["mu"] + (["eta"] if eta is None else []) + (["phi0"] if fit_phase_offset else [])
    if eta is None and np.ptp(g) <= 1e-12 * np.mean(np.abs(g)):
        return _failed("gain", names, phi.size, "degenerate data (constant gain)")

    mu0, p0 = _gain_start(phi, g, eta)
    theta0 = [mu0] + ([p0] if eta is None else []) + ([0.0] if fit_phase_offset else [])

    def residual(theta: np.ndarray) -> np.ndarray:
        return (_gain_model(theta, phi, eta, fit_phase_offset)[0] - g) * weights

    def jacobian(theta: np.ndarray) -> np.ndarray:
        return _gain_model(theta, phi, eta, fit_phase_offset)[1] * weights[:, None]

    result = optimize.least_squares(residual, theta0, jac=jacobian, **LM_OPTIONS)
    theta = result.x
    cov = _lm_covariance(result.jac, result.fun, absolute=sigma is not None)
    mu = float(theta[0])
    converged = bool(result.success) and abs(mu) < 1.0 and np.all(np.isfinite(theta))

    params = {"mu": mu}
    if eta is None:
        p = float(theta[1])
        if abs(mu) > 0:
            # (mu, p) -> (mu, eta = p / mu)
            transform = np.eye(len(theta))
            transform[1, 0] = -p / mu**2
            transform[1, 1] = 1.0 / mu
            cov = transform @ cov @ transform.T
            params["eta"] = p / mu
        else:
            params["eta"] = float("nan")
    if fit_phase_offset:
        params["phi0"] = float(np.angle(np.exp(1j * theta[-1])))
    message = "" if converged else f"optimizer status {result.status}: {result.message}"
    metrics.record_fit("gain", converged)
    logger.debug(f"gain fit: {params} ({result.nfev} evaluations)")
    return FitResult(
        params=params,
        covariance=cov,
        residual_norm=float(np.linalg.norm(result.fun)),
        n_points=int(phi.size),
        converged=converged,
        kind="gain",
        message=message,
    )


def monte_carlo_gain_recovery(
    mu: float,
    eta: float,
    phi: Sequence[float],
    rel_noise: float,
    n_draws: int,
    seed: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """Fitted mu for n_draws noisy realizations of the gain law (eta known)"""
    phi = np.asarray(phi, dtype=float)
    clean = phase_gain(mu, eta, phi)

    def draw(k: int) -> float:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        noisy = clean * (1.0 + rel_noise * rng.standard_normal(phi.size))
        fit = fit_gain_curve(phi, noisy, eta=eta, sigma=rel_noise * noisy)
        return fit["mu"] if fit.converged else float("nan")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(draw, range(n_draws))))
    return np.array([draw(k) for k in range(n_draws)])


# --- two-mode dissipation ---------------------------------------------------


def _q_ratio_model(
    theta: np.ndarray, x: np.ndarray, exact: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """Q(x)/Q0 and its Jacobian in theta = (ln xi, ln r), r = gamma_S / gamma_j"""
    xi, r = math.exp(theta[0]), math.exp(theta[1])
    u2 = (x / xi) ** 2
    if exact:
        radicand = (r - 1.0) ** 2 - r**2 * u2
        root = np.sqrt(np.maximum(radicand, 0.0))
        denom = r + 1.0 - root
        safe = np.maximum(root, 1e-300)
        d_den_dxi = np.where(radicand > 0, -(r**2) * u2 / safe, 0.0)
        d_root_dr = np.where(radicand > 0, ((r - 1.0) - r * u2) / safe, 0.0)
        d_den_dr = r * (1.0 - d_root_dr)
    else:
        radicand = 1.0 - u2
        root = np.sqrt(np.maximum(radicand, 0.0))
        denom = r + 2.0 - r * root
        safe = np.maximum(root, 1e-300)
        d_den_dxi = np.where(radicand > 0, -r * u2 / safe, 0.0)
        d_den_dr = r * (1.0 - root)
    q = 2.0 / denom
    scale = -0.5 * q**2
    return q, np.column_stack([scale * d_den_dxi, scale * d_den_dr])


def _xi_for_ratio(x: float, q: float, r: float, exact: bool) -> float:
    """Invert the Q-ratio curve at one point for xi, given r"""
    if exact:
        root = r + 1.0 - 2.0 / q
        u2 = ((r - 1.0) ** 2 - root**2) / r**2
    else:
        root = (r + 2.0 - 2.0 / q) / r
        u2 = 1.0 - root**2
    return x / math.sqrt(u2) if u2 > 0 else float("nan")


def fit_dissipation_curve(
    x: Sequence[float],
    q_ratio: Sequence[float],
    gamma_j: float = 1.0,
    model: str = "exact",
    sigma: Optional[Sequence[float]] = None,
) -> FitResult:
    """
    Fit Q(x)/Q0 of the damped mode to the two-mode model.

    Reports xi (same units as x) and gamma_S (units of gamma_j; only the
    ratio gamma_S / gamma_j is identifiable from normalized data).
    """
    if model not in ("exact", "approx"):
        raise ConfigError(f"model must be 'exact' or 'approx', got {model!r}")
    exact = model == "exact"
    x = np.asarray(x, dtype=float)
    q = np.asarray(q_ratio, dtype=float)
    if x.shape != q.shape:
        raise ConfigError("x and q_ratio must have the same length")
    if x.size < MIN_DISSIPATION_POINTS:
        raise ConfigError(
            f"dissipation fit needs >= {MIN_DISSIPATION_POINTS} points, got {x.size}"
        )
    names = ["xi", "gamma_S"]
    if q.min() > LINEAR_REGIME_Q:
        return _failed(
            "dissipation", names, x.size, "all points in the linear regime, xi unidentifiable"
        )
    weights = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else np.ones_like(q)

    # start: best r on a log grid, xi from the point nearest the curve's midpoint
    q_mid = 0.5 * (1.0 + q.min())
    k = int(np.argmin(np.abs(q - q_mid)))
    best = None
    for r in np.logspace(0.3, 8.0, 120):
        xi = _xi_for_ratio(x[k], q[k], r, exact)
        if not math.isfinite(xi) or xi <= 0:
            continue
        theta = np.array([math.log(xi), math.log(r)])
        cost = float(np.sum(((_q_ratio_model(theta, x, exact)[0] - q) * weights) ** 2))
        if best is None or cost < best[0]:
            best = (cost, theta)
    if best is None:
        return _failed("dissipation", names, x.size, "no starting point found")

    def residual(theta: np.ndarray) -> np.ndarray:
        return (_q_ratio_model(theta, x, exact)[0] - q) * weights

    def jacobian(theta: np.ndarray) -> np.ndarray:
        return _q_ratio_model(theta, x, exact)[1] * weights[:, None]

    result = optimize.least_squares(residual, best[1], jac=jacobian, **LM_OPTIONS)
    xi, ratio = math.exp(result.x[0]), math.exp(result.x[1])
    cov_log = _lm_covariance(result.jac, result.fun, absolute=sigma is not None)
    transform = np.diag([xi, gamma_j * ratio])
    converged = bool(result.success) and math.isfinite(xi)
    metrics.record_fit("dissipation", converged)
    return FitResult(
        params={"xi": xi, "gamma_S": gamma_j * ratio},
        covariance=transform @ cov_log @ transform.T,
        residual_norm=float(np.linalg.norm(result.fun)),
        n_points=int(x.size),
        converged=converged,
        kind="dissipation",
        message="" if converged else str(result.message),
        extras={"model_exact": float(exact)},
    )


# --- xi vs threshold --------------------------------------------------------


def xi_vs_threshold_regression(
    thresholds: Sequence[float],
    xis: Sequence[float],
    weights: Optional[Sequence[float]] = None,
) -> FitResult:
    """Straight line xi = slope * X_S_th + intercept; unweighted by default"""
    x = np.asarray(thresholds, dtype=float)
    y = np.asarray(xis, dtype=float)
    if x.shape != y.shape:
        raise ConfigError("thresholds and xis must have the same length")
    if x.size < MIN_REGRESSION_POINTS:
        raise ConfigError(
            f"regression needs >= {MIN_REGRESSION_POINTS} points, got {x.size}"
        )
    if weights is None:
        fit = stats.linregress(x, y)
        slope, intercept = float(fit.slope), float(fit.intercept)
        cov = np.diag([fit.stderr**2, fit.intercept_stderr**2])
    else:
        w = np.asarray(weights, dtype=float)
        scaled = "unscaled" if x.size <= MIN_REGRESSION_POINTS else True
        coeffs, cov = np.polyfit(x, y, 1, w=w, cov=scaled)
        slope, intercept = float(coeffs[0]), float(coeffs[1])
    residuals = y - (slope * x + intercept)
    metrics.record_fit("xi", True)
    return FitResult(
        params={"slope": slope, "intercept": intercept},
        covariance=np.asarray(cov),
        residual_norm=float(np.linalg.norm(residuals)),
        n_points=int(x.size),
        converged=True,
        kind="xi",
    )


# --- quadratures ------------------------------------------------------------


@dataclass
class Histogram2D:
    """Uniform-bin 2-D histogram in normalized quadrature units"""

    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    total: int
    labels: Tuple[str, str]
    quadrature_std: Dict[str, float] = field(default_factory=dict)

    def std_from_counts(self) -> Tuple[float, float]:
        """Standard deviations along both axes from the binned counts"""
        xc = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        yc = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        px = self.counts.sum(axis=1) / self.total
        py = self.counts.sum(axis=0) / self.total
        mx, my = px @ xc, py @ yc
        return (
            float(math.sqrt(px @ (xc - mx) ** 2)),
            float(math.sqrt(py @ (yc - my) ** 2)),
        )

    def to_frame(self) -> pd.DataFrame:
        xc = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        yc = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        gx, gy = np.meshgrid(xc, yc, indexing="ij")
        return pd.DataFrame(
            {
                self.labels[0]: gx.ravel(),
                self.labels[1]: gy.ravel(),
                "count": self.counts.ravel().astype(int),
            }
        )


def normalized_quadratures(samples: np.ndarray, x_th: Sequence[float]) -> Dict[str, np.ndarray]:
    """alpha/beta of both membrane modes and the cross-quadratures, in x_th units"""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] < 4:
        raise ConfigError("samples must be (n, >=4) in (alpha_i, beta_i, alpha_j, beta_j) order")
    a_i = samples[:, 0] / x_th[0]
    b_i = samples[:, 1] / x_th[0]
    a_j = samples[:, 2] / x_th[1]
    b_j = samples[:, 3] / x_th[1]
    root2 = math.sqrt(2.0)
    return {
        "alpha_i": a_i,
        "alpha_j": a_j,
        "beta_i": b_i,
        "beta_j": b_j,
        "x_a": (a_i + a_j) / root2,
        "x_b": (a_i - a_j) / root2,
        "y_a": (b_i + b_j) / root2,
        "y_b": (b_i - b_j) / root2,
    }


def quadrature_stats_from_samples(samples: np.ndarray, x_th: Sequence[float]) -> Dict[str, float]:
    quads = normalized_quadratures(samples, x_th)
    return {name: float(np.std(quads[name])) for name in ("x_a", "x_b", "y_a", "y_b")}


_PAIRS = {
    "alpha": ("alpha_i", "alpha_j"),
    "beta": ("beta_i", "beta_j"),
    "x": ("x_a", "x_b"),
    "y": ("y_a", "y_b"),
}


def quadrature_histogram(
    samples: np.ndarray,
    x_th: Sequence[float],
    bins: int = 50,
    pair: str = "alpha",
    extent: Optional[float] = None,
) -> Histogram2D:
    """Phase-space histogram of one quadrature pair; the range covers every sample"""
    if pair not in _PAIRS:
        raise ConfigError(f"pair must be one of {sorted(_PAIRS)}, got {pair!r}")
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 1000:
        logger.warning(f"histogram from only {samples.shape[0]} samples")
    quads = normalized_quadratures(samples, x_th)
    u, v = (quads[name] for name in _PAIRS[pair])
    widest = float(max(np.max(np.abs(u)), np.max(np.abs(v))))
    if extent is None or extent < widest:
        extent = widest * (1.0 + 1e-9)
    counts, x_edges, y_edges = np.histogram2d(
        u, v, bins=bins, range=[[-extent, extent], [-extent, extent]]
    )
    return Histogram2D(
        x_edges=x_edges,
        y_edges=y_edges,
        counts=counts,
        total=int(samples.shape[0]),
        labels=_PAIRS[pair],
        quadrature_std=quadrature_stats_from_samples(samples, x_th),
    )


def quadrature_standard_errors(
    per_trajectory: np.ndarray, x_th: Sequence[float]
) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Cross-quadrature variances and their standard errors over trajectories"""
    x_th = np.asarray(x_th, dtype=float)
    values: Dict[str, List[float]] = {}
    for moments in per_trajectory:
        stats_k = cross_quadrature_stats(CorrelationSet.from_phase_space(moments, x_th))
        for name, var in stats_k.variances.items():
            values.setdefault(name, []).append(var)
    n = per_trajectory.shape[0]
    means = {name: float(np.mean(v)) for name, v in values.items()}
    errors = {
        name: float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        for name, v in values.items()
    }
    return means, errors


@dataclass(frozen=True)
class Chi2Check:
    statistic: float
    dof: int
    critical: float
    p_value: float
    passed: bool


def chi2_consistency(
    estimates: Sequence[float],
    standard_errors: Sequence[float],
    expected: Sequence[float],
    confidence: float = 0.99,
) -> Chi2Check:
    """Chi-square test of estimates against expected values"""
    e = np.asarray(estimates, dtype=float)
    s = np.asarray(standard_errors, dtype=float)
    x = np.asarray(expected, dtype=float)
    if not (e.shape == s.shape == x.shape):
        raise ConfigError("estimates, standard_errors and expected must match in shape")
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ConfigError("standard errors must be positive and finite")
    statistic = float(np.sum(((e - x) / s) ** 2))
    dof = int(e.size)
    critical = float(stats.chi2.ppf(confidence, dof))
    return Chi2Check(
        statistic=statistic,
        dof=dof,
        critical=critical,
        p_value=float(stats.chi2.sf(statistic, dof)),
        passed=statistic <= critical,
    )


# --- tables -----------------------------------------------------------------


FIT_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "gain": ("phi_rad", "G"),
    "dissipation": ("x_m", "q_ratio"),
    "ringdown": ("t_s", "envelope_m"),
    "xi": ("threshold_m", "xi_m"),
}


def read_table(path: Path, required: Sequence[str]) -> pd.DataFrame:
    """Read a CSV table and check that the required columns are numeric"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ConfigError(f"{path} is missing column(s): {', '.join(missing)}")
    for column in required:
        if not pd.api.types.is_numeric_dtype(frame[column]):
            raise ConfigError(f"column {column!r} in {path} is not numeric")
    return frame

