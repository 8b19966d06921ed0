"""Acceptance gate: every published guarantee at its stated tolerance.

Each test delegates to the matching function in quantspike.checks (the
same suite behind ``quantspike verify``) and reports one [PASS]/[FAIL]
line through the acceptance_report fixture. The two trend tests share
one trained benchmark grid; its artifacts persist under runs/acceptance
and are resumed, not recomputed, on later runs.
"""

from pathlib import Path

import pytest

from quantspike import checks

REPO_ROOT = Path(__file__).resolve().parent.parent
BENCHMARK_DIR = REPO_ROOT / "runs" / "acceptance"
WALL_CLOCK_BUDGET = 30 * 60  # seconds


@pytest.fixture(scope="module")
def benchmark():
    table, elapsed = checks.run_benchmark(BENCHMARK_DIR, epochs=15, seeds=(0, 1, 2))
    return table, elapsed


def test_noisy_quantizer_mean_matches_clipped_identity(acceptance_report):
    acceptance_report(checks.check_expected_mean(n_samples=100_000))


def test_backward_matches_independent_transcription(acceptance_report):
    acceptance_report(checks.check_backward_exactness(n_scalars=10_000))


def test_spike_count_equals_quantized_level_at_matched_steps(acceptance_report):
    acceptance_report(checks.check_single_layer_equivalence())


def test_response_curve_closed_form_and_convergence(acceptance_report):
    acceptance_report(checks.check_response_curve(n_points=1000))


def test_noise_trained_snn_beats_baseline_at_low_step_counts(
        benchmark, acceptance_report):
    table, elapsed = benchmark
    result = checks.check_accuracy_trend(table, p=2)
    result.detail += f" | grid wall time {elapsed:.0f}s (budget {WALL_CLOCK_BUDGET}s)"
    result.passed = result.passed and elapsed <= WALL_CLOCK_BUDGET
    acceptance_report(result)


def test_negative_spike_mode_is_benign(benchmark, acceptance_report):
    table, _ = benchmark
    acceptance_report(checks.check_negative_spikes(table))


def test_analytic_gradients_and_unit_expected_slope(acceptance_report):
    acceptance_report(checks.check_gradient_sanity())
