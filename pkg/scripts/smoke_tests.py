#!/usr/bin/env python3
"""
paramp - Smoke Tests
====================

Runs every subcommand of the CLI once with small, fast settings and checks
exit codes, the columns of the written tables, manifest re-runs, and the
configuration-error exit path.

Usage:
    python scripts/smoke_tests.py
    python scripts/smoke_tests.py --verbose --keep
    python scripts/smoke_tests.py --export smoke.json
"""

import argparse
import json
import logging
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

# Configure logging
logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parent.parent

SQUEEZE_CONFIG = """\
[mode_i]
freq_hz = 1.5e6
gamma_hz = 0.15915494309189535
mass_kg = 2e-9

[mode_j]
freq_hz = 1.5e6
gamma_hz = 0.15915494309189535
mass_kg = 2e-9

[substrate]
gamma_hz = 159.15494309189535
mass_kg = 1e-4

[coupling]
threshold_m = 40e-15
"""


@dataclass
class SmokeTestResult:
    """Result of a smoke test"""

    test_name: str
    success: bool
    run_time: float
    error_message: Optional[str] = None
    details: Optional[Dict] = None


class SmokeTestRunner:
    """Runs the CLI subcommands in a scratch directory"""

    def __init__(self, workdir: Optional[Path] = None, verbose: bool = False):
        self.verbose = verbose
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix="paramp-smoke-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.results: List[SmokeTestResult] = []
        self.config_path = self.workdir / "pair.ini"
        self.config_path.write_text(SQUEEZE_CONFIG)
        logger.info(f"Smoke test workspace: {self.workdir}")

    def cli(self, *args: str) -> subprocess.CompletedProcess:
        command = [sys.executable, str(ROOT / "main.py"), *args]
        if self.verbose:
            logger.info(f"$ {' '.join(command)}")
        return subprocess.run(command, cwd=ROOT, capture_output=True, text=True)

    def run_test(self, test_name: str, test_func) -> SmokeTestResult:
        """Run a single smoke test"""
        logger.info(f"Running test: {test_name}")
        start_time = time.time()

        try:
            success, details = test_func()
            result = SmokeTestResult(
                test_name=test_name,
                success=success,
                run_time=time.time() - start_time,
                details=details,
            )
            status = "PASS" if success else "FAIL"
            logger.info(f"{status} {test_name} ({result.run_time:.2f}s)")
            if self.verbose and details:
                logger.info(f"Details: {json.dumps(details, indent=2, default=str)}")
        except Exception as e:
            result = SmokeTestResult(
                test_name=test_name,
                success=False,
                run_time=time.time() - start_time,
                error_message=str(e),
            )
            logger.error(f"FAIL {test_name}: {e}")

        self.results.append(result)
        return result

    def _check_run(
        self, out: str, args: Sequence[str], tables: Dict[str, Sequence[str]]
    ) -> Tuple[bool, Dict]:
        out_dir = self.workdir / out
        proc = self.cli(*args, "--out-dir", str(out_dir))
        details: Dict = {"returncode": proc.returncode}
        if proc.returncode != 0:
            details["stderr"] = proc.stderr[-2000:]
            return False, details
        success = (out_dir / "manifest.json").exists()
        for name, columns in tables.items():
            path = out_dir / name
            if not path.exists():
                details[name] = "missing"
                success = False
                continue
            frame = pd.read_csv(path)
            missing = [c for c in columns if c not in frame.columns]
            details[name] = {"rows": len(frame), "missing_columns": missing}
            success = success and not missing and len(frame) > 0
        return success, details

    def test_threshold(self) -> Tuple[bool, Dict]:
        return self._check_run(
            "threshold",
            ["threshold", "--analytic-only"],
            {
                "threshold.csv": ["g", "threshold_m", "xi_i_m", "xi_j_m", "growth_rate_mu1"],
                "xi_fit.csv": ["parameter", "value", "stderr"],
                "growth.csv": ["mu", "growth_rate_analytic"],
            },
        )

    def test_gain(self) -> Tuple[bool, Dict]:
        return self._check_run(
            "gain",
            ["gain", "--both", "--phase-points", "8", "--mu-list", "0.038"],
            {"gain_vs_phase.csv": ["phi_rad", "mu", "G_analytic", "G_sde"]},
        )

    def test_ringdown(self) -> Tuple[bool, Dict]:
        return self._check_run(
            "ringdown",
            ["ringdown", "--both", "--hold-fractions", "0,0.5,1"],
            {
                "ringdown.csv": ["x_hold_m", "t_s", "envelope_m"],
                "ringdown_fit.csv": ["x_hold_m", "gamma_eff_analytic", "gamma_eff_sde", "q_ratio"],
            },
        )

    def test_squeeze(self) -> Tuple[bool, Dict]:
        return self._check_run(
            "squeeze",
            [
                "squeeze",
                "--config",
                str(self.config_path),
                "--mu-list",
                "0,0.5",
                "--ntraj",
                "16",
                "--duration",
                "40",
                "--dt",
                "0.05",
            ],
            {
                "squeeze.csv": [
                    "mu",
                    "quadrature",
                    "std_analytic",
                    "std_sde",
                    "stderr_sde",
                    "squeezing_db",
                ]
            },
        )

    def test_spectrum(self) -> Tuple[bool, Dict]:
        return self._check_run(
            "spectrum",
            ["spectrum", "--config", str(self.config_path), "--mu-list", "0,0.5", "--points", "64"],
            {
                "spectrum.csv": ["mu", "omega_rad_s", "S_alpha_ii", "lorentzian_ii"],
                "correlations.csv": ["mu", "source", "C_ii", "C_jj", "C_ij"],
            },
        )

    def test_fit(self) -> Tuple[bool, Dict]:
        gain = self.workdir / "gain" / "gain_vs_phase.csv"
        if not gain.exists():
            return False, {"error": "gain smoke test output missing"}
        frame = pd.read_csv(gain)
        data = self.workdir / "gain_data.csv"
        frame.rename(columns={"G_analytic": "G"})[["phi_rad", "G"]].to_csv(data, index=False)
        return self._check_run(
            "fit",
            ["fit", "--data", str(data), "--fit-kind", "gain"],
            {"fit.csv": ["parameter", "value", "stderr", "converged"]},
        )

    def test_rerun_reproduces(self) -> Tuple[bool, Dict]:
        source = self.workdir / "squeeze"
        manifest = source / "manifest.json"
        if not manifest.exists():
            return False, {"error": "squeeze smoke test manifest missing"}
        out_dir = self.workdir / "squeeze_rerun"
        proc = self.cli("rerun", str(manifest), "--out-dir", str(out_dir))
        if proc.returncode != 0:
            return False, {"returncode": proc.returncode, "stderr": proc.stderr[-2000:]}
        outputs = json.loads(manifest.read_text())["outputs"]
        identical = {
            name: (source / name).read_bytes() == (out_dir / name).read_bytes()
            for name in outputs
        }
        return all(identical.values()), {"identical": identical}

    def test_bad_config_exit_code(self) -> Tuple[bool, Dict]:
        bad = self.workdir / "bad.ini"
        bad.write_text(SQUEEZE_CONFIG + "\n[env]\ntemperature_k = 295\nhumidity = 0.4\n")
        out_dir = self.workdir / "bad"
        proc = self.cli("spectrum", "--config", str(bad), "--out-dir", str(out_dir))
        leftovers = sorted(p.name for p in out_dir.glob("*.csv")) if out_dir.exists() else []
        success = proc.returncode == 2 and "humidity" in proc.stderr and not leftovers
        return success, {"returncode": proc.returncode, "leftover_csv": leftovers}

    def run_all_tests(self) -> bool:
        """Run all smoke tests"""
        logger.info("Starting paramp smoke tests")
        logger.info("=" * 60)

        tests = [
            ("Threshold", self.test_threshold),
            ("Gain", self.test_gain),
            ("Ring-down", self.test_ringdown),
            ("Squeeze", self.test_squeeze),
            ("Spectrum", self.test_spectrum),
            ("Fit", self.test_fit),
            ("Manifest Re-run", self.test_rerun_reproduces),
            ("Config Error Exit Code", self.test_bad_config_exit_code),
        ]
        for test_name, test_func in tests:
            self.run_test(test_name, test_func)

        self.print_summary()
        return all(result.success for result in self.results)

    def print_summary(self):
        """Print test summary"""
        total_tests = len(self.results)
        passed_tests = sum(1 for result in self.results if result.success)
        failed_tests = total_tests - passed_tests

        logger.info("=" * 60)
        logger.info("SMOKE TEST SUMMARY")
        logger.info("=" * 60)
        logger.info(f"Total Tests: {total_tests}")
        logger.info(f"Passed: {passed_tests}")
        logger.info(f"Failed: {failed_tests}")

        if failed_tests > 0:
            logger.info("Failed Tests:")
            for result in self.results:
                if not result.success:
                    logger.error(f"  {result.test_name}")
                    if result.error_message:
                        logger.error(f"     Error: {result.error_message}")

        logger.info(f"Total Runtime: {sum(r.run_time for r in self.results):.2f}s")
        logger.info("=" * 60)

    def export_results(self, filename: str) -> str:
        """Export results to JSON file"""
        results_data = {
            "workdir": str(self.workdir),
            "timestamp": time.time(),
            "total_tests": len(self.results),
            "passed_tests": sum(1 for r in self.results if r.success),
            "overall_success": all(r.success for r in self.results),
            "results": [
                {
                    "test_name": r.test_name,
                    "success": r.success,
                    "run_time": r.run_time,
                    "error_message": r.error_message,
                    "details": r.details,
                }
                for r in self.results
            ],
        }
        with open(filename, "w") as f:
            json.dump(results_data, f, indent=2, default=str)
        logger.info(f"Results exported to: {filename}")
        return filename


def main():
    """Main function"""
    parser = argparse.ArgumentParser(
        description="Run smoke tests for the paramp command-line tool",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python scripts/smoke_tests.py
  python scripts/smoke_tests.py --verbose --keep
  python scripts/smoke_tests.py --workdir /tmp/paramp-smoke --export smoke.json
        """,
    )
    parser.add_argument("--workdir", help="Scratch directory (default: a new temp dir)")
    parser.add_argument("--keep", action="store_true", help="Keep the scratch directory")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose output")
    parser.add_argument("--export", help="Export results to JSON file")
    args = parser.parse_args()

    runner = None
    try:
        runner = SmokeTestRunner(
            workdir=Path(args.workdir) if args.workdir else None, verbose=args.verbose
        )
        success = runner.run_all_tests()
        if args.export:
            runner.export_results(args.export)
        sys.exit(0 if success else 1)
    except KeyboardInterrupt:
        logger.info("Smoke tests interrupted by user")
        sys.exit(1)
    except Exception as e:
        logger.error(f"Smoke tests failed with error: {str(e)}")
        sys.exit(1)
    finally:
        if runner is not None and not args.keep and not args.workdir:
            shutil.rmtree(runner.workdir, ignore_errors=True)


if __name__ == "__main__":
    main()
