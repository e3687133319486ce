import itertools
import json
import unittest
import warnings
from unittest.mock import patch

import numpy as np

from src.config import PAPER_BLOCK_SHORE, ConvSpec, SynthConfig, WindowSpec
from src.contact_detect import DetectionResult, ThresholdStreamDetector
from src.conv_net import build_conv_model
from src.evaluation import stiffness_windows
from src.kernel_machine import train_svr
from src.pipeline import (
    GraspReport,
    LatencyLedger,
    bench_inference,
    budget_consistency,
    make_detector_factory,
    run_corpus,
    run_grasp,
)
from src.signal_synth import GraspTrace, StiffnessLabel, make_rng, synthesize_grasp

QUIET = SynthConfig(noise_std_v=0.0, delta_std_ms=0.0)


def zero_network(value=30.0):
    model = build_conv_model(ConvSpec())
    for param in model.params.values():
        param[...] = 0.0
    model.target_mean = value
    return model


def report_with_total(total_ms, budget_ms=50.0):
    ledger = LatencyLedger.build(0.2, total_ms - 0.2, 0.0, budget_ms)
    return GraspReport(0, DetectionResult(True, 200, "threshold", 6), 20.0, 20.0, ledger)


class TestLatencyLedger(unittest.TestCase):
    """Test cases for the per-grasp latency ledger."""

    def test_total_is_sum_of_parts(self):
        """Test that the ledger total adds detection lag, collection and inference."""
        ledger = LatencyLedger.build(1.0, 15.0, 0.5, 20.0)
        self.assertEqual(ledger.total_ms, 16.5)
        self.assertTrue(ledger.within_budget)
        self.assertFalse(LatencyLedger.build(1.0, 15.0, 0.5, 16.0).within_budget)

    def test_prediction_requires_detection(self):
        """Test that a prediction without a detection is rejected."""
        with self.assertRaises(ValueError):
            GraspReport(0, DetectionResult(False, None, "threshold", 3), 20.0, predicted_shore=20.0)


class TestRunGrasp(unittest.TestCase):
    """Test cases for single-grasp streaming."""

    @classmethod
    def setUpClass(cls):
        cls.spec = WindowSpec()
        rng = make_rng(0)
        traces = [synthesize_grasp(QUIET, StiffnessLabel(s), rng) for s in PAPER_BLOCK_SHORE]
        windows, targets, _ = stiffness_windows(traces, cls.spec, offsets=(0, 1, 2))
        cls.model = train_svr(windows, targets, c_penalty=100.0, epsilon=0.5)

    def run_quiet(self, trace, model=None, **kwargs):
        return run_grasp(trace, ThresholdStreamDetector(self.spec), model or self.model, self.spec, **kwargs)

    def test_noiseless_estimate_and_ledger(self):
        """Test the estimate and every ledger field on a noiseless grasp."""
        trace = synthesize_grasp(QUIET, StiffnessLabel(60.0), make_rng(42))
        report = self.run_quiet(trace)
        self.assertEqual(report.detection.detect_index, trace.t_contact1 + 1)
        self.assertAlmostEqual(report.predicted_shore, 60.0, delta=5.0)
        ledger = report.ledger
        self.assertAlmostEqual(ledger.detect_lag_ms, 1000.0 / 4936.0)
        self.assertAlmostEqual(ledger.collect_ms, 74 * 1000.0 / 4936.0)
        self.assertAlmostEqual(ledger.total_ms, ledger.detect_lag_ms + ledger.collect_ms + ledger.inference_ms)
        self.assertAlmostEqual(ledger.budget_ms, trace.gap_ms)
        self.assertEqual(report.within_budget, ledger.within_budget)

    def test_short_gap_misses_budget(self):
        """Test that a short contact gap leaves the estimate over budget."""
        cfg = QUIET.model_copy(update={"delta_mean_ms": 2.0})
        trace = synthesize_grasp(cfg, StiffnessLabel(29.0), make_rng(1))
        report = self.run_quiet(trace)
        self.assertIsNotNone(report.predicted_shore)
        self.assertFalse(report.within_budget)

    def test_no_contact(self):
        """Test that a grasp without contact yields no estimate and no ledger."""
        n = 400
        trace = GraspTrace(np.full(n, 1.65), np.zeros((6, n)), 300, 350, StiffnessLabel(20.0), 4936.0)
        report = self.run_quiet(trace)
        self.assertFalse(report.detection.detected)
        self.assertIsNone(report.predicted_shore)
        self.assertIsNone(report.ledger)
        self.assertFalse(report.within_budget)

    def test_future_samples_are_never_read(self):
        """Test that samples after the stiffness window never affect the estimate."""
        trace = synthesize_grasp(QUIET, StiffnessLabel(43.0), make_rng(3))
        cut = trace.t_contact1 + 1 + self.spec.stiffness_samples
        tampered = GraspTrace(
            trace.vibration.copy(), trace.force, trace.t_contact1, trace.t_contact2, trace.label, trace.sample_rate_hz
        )
        tampered.vibration[cut:] += 1.0
        self.assertEqual(self.run_quiet(tampered).predicted_shore, self.run_quiet(trace).predicted_shore)

    def test_trace_ending_early(self):
        """Test that a trace ending inside the stiffness window yields no estimate."""
        trace = synthesize_grasp(QUIET, StiffnessLabel(43.0), make_rng(4))
        n = trace.t_contact1 + 40
        short = GraspTrace(
            trace.vibration[:n], trace.force[:, :n], trace.t_contact1, trace.t_contact1 + 20, trace.label, 4936.0
        )
        report = self.run_quiet(short)
        self.assertTrue(report.detection.detected)
        self.assertIsNone(report.predicted_shore)

    def test_paced_replay_matches(self):
        """Test that paced replay gives the same estimate as free-running replay."""
        trace = synthesize_grasp(QUIET, StiffnessLabel(20.0), make_rng(5))
        self.assertEqual(self.run_quiet(trace, paced=True).predicted_shore, self.run_quiet(trace).predicted_shore)


class TestRunCorpus(unittest.TestCase):
    """Test cases for corpus streaming."""

    def setUp(self):
        self.spec = WindowSpec()
        rng = make_rng(6)
        shores = [10.0, 29.0, 60.0] * 3
        self.traces = [
            synthesize_grasp(SynthConfig(), StiffnessLabel(s), rng, trace_id=i) for i, s in enumerate(shores)
        ]
        self.factory = make_detector_factory("threshold", self.spec)

    def test_worker_count_does_not_change_results(self):
        """Test that threaded replay matches serial replay in order and content."""
        serial = run_corpus(self.traces, self.factory, zero_network(), self.spec)
        threaded = run_corpus(self.traces, self.factory, zero_network(), self.spec, workers=3)
        self.assertEqual([r.trace_id for r in threaded.reports], list(range(9)))
        self.assertEqual([r.detection for r in serial.reports], [r.detection for r in threaded.reports])
        self.assertEqual(serial.n_detected, threaded.n_detected)

    def test_summary_and_lines(self):
        """Test the corpus summary fields and per-grasp JSON lines."""
        corpus = run_corpus(self.traces, self.factory, zero_network(), self.spec)
        self.assertEqual(corpus.n_grasps, 9)
        self.assertEqual(
            set(corpus.summary()),
            {"n_grasps", "n_detected", "fraction_within_budget", "inference_mean_ms", "inference_p99_ms"},
        )
        records = [json.loads(line) for line in corpus.to_lines()]
        self.assertEqual(len(records), 9)
        self.assertIn("ledger", records[0])
        self.assertLessEqual(corpus.fraction_within_budget, corpus.n_detected / corpus.n_grasps)

    def test_factory_validation(self):
        """Test that factories build fresh detectors and reject bad settings."""
        a, b = self.factory(), self.factory()
        self.assertIsNot(a, b)
        with self.assertRaises(ValueError):
            make_detector_factory("svm", self.spec)
        with self.assertRaises(ValueError):
            make_detector_factory("energy", self.spec)


class TestBenchInference(unittest.TestCase):
    """Test cases for the inference benchmark."""

    def test_rejects_non_positive_trials(self):
        """Test that a non-positive trial count is rejected."""
        with self.assertRaises(ValueError):
            bench_inference(zero_network(), 0)

    def test_statistics_from_timer(self):
        """Test benchmark statistics against a patched timer."""
        ticks = itertools.chain.from_iterable((0.0, 0.002) for _ in range(50))
        with patch("src.conv_net.time.perf_counter", side_effect=ticks):
            stats = bench_inference(zero_network(), 50)
        self.assertAlmostEqual(stats["mean_ms"], 2.0)
        self.assertAlmostEqual(stats["p99_ms"], 2.0)
        self.assertEqual(stats["n_trials"], 50.0)


class TestBudgetConsistency(unittest.TestCase):
    """Test cases for the gap-model cross-check."""

    def setUp(self):
        self.cfg = SynthConfig()

    def test_undetected_grasps(self):
        """Test that undetected grasps count on neither side of the check."""
        reports = [GraspReport(i, DetectionResult(False, None, "threshold", 19), 20.0) for i in range(5)]
        check = budget_consistency(reports, self.cfg)
        self.assertEqual((check["observed_fraction"], check["expected_fraction"]), (0.0, 0.0))
        self.assertTrue(check["consistent"])

    def test_totals_below_floor_always_fit(self):
        """Test that totals below the gap floor are always expected to fit."""
        check = budget_consistency([report_with_total(0.5) for _ in range(10)], self.cfg)
        self.assertEqual(check["expected_fraction"], 1.0)
        self.assertEqual(check["observed_fraction"], 1.0)
        self.assertTrue(check["consistent"])

    def test_inconsistent_outcomes_flagged(self):
        """Test that outcomes far from the gap model are flagged."""
        check = budget_consistency([report_with_total(30.0) for _ in range(100)], self.cfg)
        self.assertLess(check["expected_fraction"], 0.3)
        self.assertEqual(check["observed_fraction"], 1.0)
        self.assertGreater(check["z_score"], 3.0)
        self.assertFalse(check["consistent"])

    def test_fixed_gap_is_a_step_at_the_mean(self):
        """Test that a zero-spread gap model splits totals at the mean gap without warnings."""
        fixed = SynthConfig(delta_std_ms=0.0)
        reports = [report_with_total(10.0) for _ in range(3)] + [report_with_total(20.0)]
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            check = budget_consistency(reports, fixed)
        self.assertEqual(check["expected_fraction"], 0.75)

    def test_empty(self):
        """Test that an empty report list is rejected."""
        with self.assertRaises(ValueError):
            budget_consistency([], self.cfg)


if __name__ == "__main__":
    unittest.main()
