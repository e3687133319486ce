import unittest

import numpy as np

from src.config import PAPER_BLOCK_SHORE, AdcSpec, DetectorConfig, KernelParams, SynthConfig, WindowSpec
from src.contact_detect import (
    CONTACT,
    NO_CONTACT,
    BaselineStats,
    DetectionResult,
    SvmStreamDetector,
    ThresholdStreamDetector,
    build_detection_set,
    calibrate_baseline,
    condition,
    detect_svm,
    detect_threshold,
    detection_features,
    score_detections,
    threshold_level,
    train_contact_svm,
)
from src.dsp import ExpSmoother
from src.errors import DataError
from src.kernel_machine import Preprocessor, predict_batch, train_svc
from src.signal_synth import GraspTrace, StiffnessLabel, make_rng, synthesize_grasp


def step_trace(n=400, t1=250, step_v=0.5, trace_id=0):
    """Flat baseline followed by a sustained step at first contact."""
    vibration = np.full(n, 1.65)
    vibration[t1:] += step_v
    return GraspTrace(
        vibration=vibration,
        force=np.zeros((6, n)),
        t_contact1=t1,
        t_contact2=t1 + 60,
        label=StiffnessLabel(20.0),
        sample_rate_hz=4936.0,
        trace_id=trace_id,
    )


class TestBaseline(unittest.TestCase):
    """Test cases for baseline calibration and the threshold level."""

    def test_calibrate_examples(self):
        """Test baseline mean and sigma on known segments."""
        stats = calibrate_baseline(np.tile([1.0, 3.0], 60))
        self.assertEqual(stats.mean_v, 2.0)
        self.assertAlmostEqual(stats.sigma_v, np.sqrt(120 / 119), places=12)
        self.assertEqual(stats.n_samples, 120)

    def test_short_segment_rejected(self):
        """Test that a too-short calibration segment is rejected."""
        with self.assertRaises(DataError):
            calibrate_baseline(np.zeros(99))

    def test_threshold_level(self):
        """Test that the threshold is k sigma above the baseline with an LSB floor."""
        adc = AdcSpec()
        config = DetectorConfig()
        self.assertAlmostEqual(threshold_level(BaselineStats(1.65, 0.01, 120), config, adc), 0.03)
        self.assertAlmostEqual(threshold_level(BaselineStats(1.65, 0.0, 120), config, adc), 2 * adc.lsb_v)

    def test_detection_features_flat_window(self):
        """Test that a flat window yields zero-valued features."""
        features = detection_features(np.full(99, 1.7), BaselineStats(1.7, 0.0, 120), AdcSpec())
        np.testing.assert_allclose(features, np.zeros(99), atol=1e-9)


class TestThresholdDetector(unittest.TestCase):
    """Test cases for the k-sigma threshold detector."""

    def setUp(self):
        self.spec = WindowSpec()
        self.quiet = SynthConfig(noise_std_v=0.0)

    def test_noiseless_blocks_detected_one_sample_after_contact(self):
        """Test that noiseless grasps are detected right after first contact."""
        rng = make_rng(0)
        for shore in PAPER_BLOCK_SHORE:
            trace = synthesize_grasp(self.quiet, StiffnessLabel(shore), rng)
            result = detect_threshold(trace, None, self.spec, adc=self.quiet.adc)
            self.assertTrue(result.detected)
            self.assertEqual(result.detect_index, trace.t_contact1 + 1)
            self.assertEqual(result.method, "threshold")

    def test_flat_trace_never_fires(self):
        """Test that a flat trace never triggers the threshold detector."""
        trace = step_trace(step_v=0.0)
        result = detect_threshold(trace, None, self.spec)
        self.assertFalse(result.detected)
        self.assertIsNone(result.detect_index)
        self.assertEqual(result.windows_scanned, 19)

    def test_step_fires_at_onset(self):
        """Test that a step fires at the first offending sample."""
        result = detect_threshold(step_trace(), None, self.spec)
        self.assertEqual(result.detect_index, 250)

    def test_pre_contact_burst_is_false_positive(self):
        """Test that a burst before contact fires early."""
        trace = step_trace(t1=300)
        trace.vibration[150:153] += 0.05
        result = detect_threshold(trace, None, self.spec)
        self.assertEqual(result.detect_index, 150)
        score = score_detections([result], [trace])
        self.assertEqual((score.true_positive, score.false_positive), (0, 1))

    def test_streaming_matches_batch(self):
        """Test that feeding samples one at a time matches the batch detector."""
        cfg = SynthConfig()
        trace = synthesize_grasp(cfg, StiffnessLabel(29.0), make_rng(3))
        detector = ThresholdStreamDetector(self.spec, DetectorConfig(), cfg.adc)
        smoother = ExpSmoother(0.5)
        for value in trace.vibration:
            if detector.push(smoother.update(value)) is not None:
                break
        self.assertEqual(detector.finish(), detect_threshold(trace, None, self.spec, adc=cfg.adc))

    def test_explicit_baseline_matches_self_calibration(self):
        """Test that a supplied baseline gives the same result as self-calibration."""
        cfg = SynthConfig()
        trace = synthesize_grasp(cfg, StiffnessLabel(43.0), make_rng(4))
        baseline = calibrate_baseline(condition(trace.vibration)[:120])
        self.assertEqual(
            detect_threshold(trace, baseline, self.spec, adc=cfg.adc).detect_index,
            detect_threshold(trace, None, self.spec, adc=cfg.adc).detect_index,
        )

    def test_higher_threshold_never_fires_earlier(self):
        """Test that raising k never moves detection earlier."""
        cfg = SynthConfig()
        rng = make_rng(5)
        for _ in range(5):
            trace = synthesize_grasp(cfg, StiffnessLabel(20.0), rng)
            low = detect_threshold(trace, None, self.spec, DetectorConfig(threshold_sigma=3.0), cfg.adc)
            high = detect_threshold(trace, None, self.spec, DetectorConfig(threshold_sigma=6.0), cfg.adc)
            if high.detected:
                self.assertTrue(low.detected)
                self.assertLessEqual(low.detect_index, high.detect_index)

    def test_result_invariant(self):
        """Test that the detected flag and the detect index must agree."""
        with self.assertRaises(ValueError):
            DetectionResult(True, None, "threshold", 1)
        with self.assertRaises(ValueError):
            DetectionResult(False, 10, "threshold", 1)


class TestSvmDetector(unittest.TestCase):
    """Test cases for the window-classifier detector."""

    def setUp(self):
        self.spec = WindowSpec()
        self.trace = step_trace()
        conditioned = condition(self.trace.vibration)
        baseline = calibrate_baseline(conditioned[:120])
        width = self.spec.detect_samples
        adc = AdcSpec()
        negatives = [detection_features(conditioned[e - width : e], baseline, adc) for e in (120, 200, 250)]
        positives = [detection_features(conditioned[e - width : e], baseline, adc) for e in range(251, 266)]
        features = np.vstack(negatives + positives)
        labels = [NO_CONTACT] * len(negatives) + [CONTACT] * len(positives)
        self.model = train_svc(features, labels, 1000.0, 1e-4, preprocessor=Preprocessor(center=False, scale=1.0))

    def test_fires_on_first_grid_window_with_contact(self):
        """Test that the SVM detector fires on the first grid window covering contact."""
        result = detect_svm(self.trace, self.model, self.spec)
        self.assertTrue(result.detected)
        self.assertEqual(result.detect_index, 254)
        self.assertEqual(result.method, "svm")

    def test_flat_trace_is_not_contact(self):
        """Test that the SVM detector stays silent on a flat trace."""
        self.assertFalse(detect_svm(step_trace(step_v=0.0), self.model, self.spec).detected)

    def test_window_length_mismatch(self):
        """Test that a model trained on other window lengths is rejected."""
        with self.assertRaises(ValueError):
            SvmStreamDetector(self.model, WindowSpec(detect_history_ms=10.0))


class TestDetectionTraining(unittest.TestCase):
    """Test cases for the contact / no-contact training set."""

    def setUp(self):
        self.spec = WindowSpec()
        self.traces = [step_trace(t1=t1, trace_id=i) for i, t1 in enumerate((200, 250, 300))]

    def test_balanced_windows(self):
        """Test that the detection set has equal contact and no-contact windows."""
        features, labels = build_detection_set(self.traces, self.spec, rng=np.random.default_rng(1), per_trace=4)
        self.assertEqual(features.shape, (24, 99))
        self.assertEqual(int(labels.sum()), 12)
        np.testing.assert_allclose(features[labels == NO_CONTACT], 0.0, atol=1e-9)
        self.assertTrue(np.all(np.abs(features[labels == CONTACT]).max(axis=1) > 0))

    def test_contact_too_early(self):
        """Test that traces with contact inside the history window are rejected."""
        with self.assertRaises(DataError):
            build_detection_set([step_trace(t1=50)], self.spec)

    def test_train_contact_svm(self):
        """Test that the contact SVM separates its training windows."""
        model = train_contact_svm(self.traces, self.spec, params=KernelParams(c_penalty=100.0, gamma=1e-4), per_trace=3)
        self.assertEqual(model.n_features, 99)
        self.assertEqual(model.classes, [NO_CONTACT, CONTACT])
        features, labels = build_detection_set(self.traces, self.spec, rng=np.random.default_rng(0), per_trace=3)
        np.testing.assert_array_equal(predict_batch(model, features), labels)


class TestScoreDetections(unittest.TestCase):
    """Test cases for matching detections against annotated contact."""

    def test_counts_and_lag(self):
        """Test detection counts and lag statistics against hand counts."""
        traces = [step_trace(trace_id=i) for i in range(5)]
        results = [
            DetectionResult(True, 250, "threshold", 9),
            DetectionResult(True, 274, "threshold", 10),
            DetectionResult(True, 275, "threshold", 10),
            DetectionResult(True, 249, "threshold", 9),
            DetectionResult(False, None, "threshold", 19),
        ]
        score = score_detections(results, traces)
        self.assertEqual((score.true_positive, score.false_positive, score.false_negative), (2, 2, 1))
        self.assertAlmostEqual(score.accuracy, 0.4)
        self.assertAlmostEqual(score.mean_lag_ms, 12 * 1000.0 / 4936.0)

    def test_length_mismatch(self):
        """Test that mismatched result and trace lists are rejected."""
        with self.assertRaises(ValueError):
            score_detections([], [step_trace()])


if __name__ == "__main__":
    unittest.main()
