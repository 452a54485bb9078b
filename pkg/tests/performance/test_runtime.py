"""
Performance tests: wall-time ceilings for the hot paths
"""

import time

import numpy as np
import pytest

from src.analytic import correlations_closed_form, correlations_lyapunov, spectrum
from src.model import with_mu
from src.sde import SimPlan, Stepper, run_ensemble

pytestmark = pytest.mark.slow


def _timed(func, *args, **kwargs):
    start = time.perf_counter()
    result = func(*args, **kwargs)
    return result, time.perf_counter() - start


class TestRuntime:
    """Generous ceilings that catch accidental per-step Python overhead"""

    def test_analytic_correlations_are_fast(self, demo_config):
        """Closed form and Lyapunov for 100 pump values in under 2 s"""
        mus = np.linspace(0.0, 0.95, 100)

        def sweep():
            for mu in mus:
                config = with_mu(demo_config, float(mu))
                correlations_closed_form(config)
                correlations_lyapunov(config)

        _, elapsed = _timed(sweep)
        assert elapsed < 2.0

    def test_spectrum_grid(self, demo_config):
        """A 10^4-point spectrum is vectorized"""
        omega = np.linspace(0.0, 10.0, 10_000)
        (s_alpha, _), elapsed = _timed(spectrum, with_mu(demo_config, 0.5), None, omega)
        assert s_alpha.shape == (10_000, 3, 3)
        assert elapsed < 2.0

    def test_ensemble_throughput(self, squeeze_config):
        """10^6 trajectory-steps with the exact stepper in under 20 s"""
        plan = SimPlan(
            dt=0.1, duration=100.0, n_traj=1000, seed=1, stepper=Stepper.EXACT, workers=1
        )
        result, elapsed = _timed(run_ensemble, with_mu(squeeze_config, 0.3), plan)
        assert result.n_traj == 1000
        assert elapsed < 20.0

    def test_threads_do_not_slow_down(self, squeeze_config):
        """Four workers are not slower than one beyond scheduling noise"""
        config = with_mu(squeeze_config, 0.3)
        base = dict(dt=0.1, duration=100.0, n_traj=512, seed=1, stepper=Stepper.EXACT, batch_size=64)
        _, serial = _timed(run_ensemble, config, SimPlan(workers=1, **base))
        _, threaded = _timed(run_ensemble, config, SimPlan(workers=4, **base))
        assert threaded < 2.0 * serial + 0.5
