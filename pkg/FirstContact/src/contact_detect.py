"""
First-contact detection on the piezo channel.

Two detectors share one sliding-window grid: every window holds detect_history + detect_new
samples and the grid advances by detect_new samples, starting once the baseline has been
calibrated. The threshold detector fires on any sample of the new region that deviates from
the baseline mean by more than k sigma; the SVM detector classifies the whole window.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from .config import AdcSpec, DetectorConfig, KernelParams, WindowSpec
from .dsp import exp_smooth
from .errors import DataError
from .kernel_machine import KernelModel, Preprocessor, predict, train_svc
from .signal_synth import GraspTrace

logger = logging.getLogger(__name__)

CONTACT = 1.0
NO_CONTACT = 0.0


@dataclass(frozen=True)
class BaselineStats:
    """Steady-state statistics of the conditioned piezo signal."""

    mean_v: float
    sigma_v: float
    n_samples: int


@dataclass(frozen=True)
class DetectionResult:
    detected: bool
    detect_index: Optional[int]
    method: str
    windows_scanned: int

    def __post_init__(self):
        if self.detected != (self.detect_index is not None):
            raise ValueError("detect_index must be present exactly when detected is true")


@dataclass(frozen=True)
class DetectionScore:
    true_positive: int
    false_positive: int
    false_negative: int
    accuracy: float
    mean_lag_ms: float
    tolerance_ms: float


def calibrate_baseline(steady_segment: np.ndarray, min_samples: int = 100) -> BaselineStats:
    """
    Sample mean and unbiased standard deviation of a contact-free segment.

    Raises:
        DataError: If the segment is shorter than min_samples
    """
    segment = np.asarray(steady_segment, dtype=np.float64)
    if len(segment) < min_samples:
        raise DataError(f"Baseline segment has {len(segment)} samples, need at least {min_samples}")
    sigma = float(np.std(segment, ddof=1))
    if sigma == 0:
        logger.warning(f"Baseline of {len(segment)} samples is perfectly flat; detection falls back to the LSB floor")
    return BaselineStats(mean_v=float(np.mean(segment)), sigma_v=sigma, n_samples=len(segment))


def condition(vibration: np.ndarray, config: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Real-time conditioning applied before detection and stiffness estimation."""
    return exp_smooth(vibration, config.smoothing_alpha)


def trace_baseline(conditioned: np.ndarray, config: DetectorConfig = DetectorConfig()) -> BaselineStats:
    return calibrate_baseline(conditioned[: config.calibration_samples])


def threshold_level(baseline: BaselineStats, config: DetectorConfig, adc: AdcSpec) -> float:
    """k * sigma, or an absolute floor of a few LSB for a perfectly flat baseline."""
    if baseline.sigma_v > 0:
        return config.threshold_sigma * baseline.sigma_v
    logger.debug("Zero-sigma baseline; using the absolute threshold floor")
    return config.zero_sigma_floor_lsb * adc.lsb_v


def detection_features(window: np.ndarray, baseline: BaselineStats, adc: AdcSpec) -> np.ndarray:
    """Mean-removed window scaled by the baseline noise level."""
    window = np.asarray(window, dtype=np.float64)
    scale = max(baseline.sigma_v, 0.5 * adc.lsb_v)
    return (window - window.mean()) / scale


def first_window_end(spec: WindowSpec, config: DetectorConfig) -> int:
    return max(spec.detect_samples, config.calibration_samples)


class StreamDetector:
    """
    Causal detector fed one conditioned sample at a time.

    Without an explicit baseline the detector calibrates itself on the first
    calibration_samples samples, which always precede the first window end.
    """

    method = "base"

    def __init__(
        self,
        spec: WindowSpec,
        config: DetectorConfig = DetectorConfig(),
        adc: AdcSpec = AdcSpec(),
        baseline: Optional[BaselineStats] = None,
    ):
        self.spec = spec
        self.config = config
        self.adc = adc
        self.baseline = baseline
        self.buffer: Deque[float] = deque(maxlen=max(spec.detect_samples, config.calibration_samples))
        self.count = 0
        self.windows_scanned = 0
        self.result: Optional[DetectionResult] = None
        self.first_end = first_window_end(spec, config)

    def push(self, value: float) -> Optional[DetectionResult]:
        """Consume one sample; returns the detection once it has fired."""
        self.buffer.append(float(value))
        self.count += 1
        if self.baseline is None and self.count == self.config.calibration_samples:
            self.baseline = calibrate_baseline(np.array(self.buffer)[-self.config.calibration_samples:])
        if self.result is not None or self.count < self.first_end:
            return self.result
        if (self.count - self.first_end) % self.spec.new_samples == 0:
            self.windows_scanned += 1
            window = np.array(self.buffer)[-self.spec.detect_samples:]
            index = self._evaluate(window, self.count)
            if index is not None:
                self.result = DetectionResult(True, index, self.method, self.windows_scanned)
        return self.result

    def finish(self) -> DetectionResult:
        return self.result or DetectionResult(False, None, self.method, self.windows_scanned)

    def _evaluate(self, window: np.ndarray, end: int) -> Optional[int]:
        raise NotImplementedError


class ThresholdStreamDetector(StreamDetector):
    method = "threshold"

    def _evaluate(self, window: np.ndarray, end: int) -> Optional[int]:
        new = window[-self.spec.new_samples:]
        level = threshold_level(self.baseline, self.config, self.adc)
        exceed = np.abs(new - self.baseline.mean_v) > level
        if not exceed.any():
            return None
        return end - self.spec.new_samples + int(np.argmax(exceed))


class SvmStreamDetector(StreamDetector):
    method = "svm"

    def __init__(self, model: KernelModel, spec: WindowSpec, *args, **kwargs):
        if model.n_features != spec.detect_samples:
            raise ValueError(
                f"Detector model expects {model.n_features}-sample windows, spec gives {spec.detect_samples}"
            )
        super().__init__(spec, *args, **kwargs)
        self.model = model

    def _evaluate(self, window: np.ndarray, end: int) -> Optional[int]:
        label, _ = predict(self.model, detection_features(window, self.baseline, self.adc))
        return end - 1 if label == CONTACT else None


def _run_stream(detector: StreamDetector, conditioned: np.ndarray) -> DetectionResult:
    for value in conditioned:
        if detector.push(value) is not None:
            break
    return detector.finish()


def detect_threshold(
    trace: GraspTrace,
    baseline: Optional[BaselineStats],
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    adc: AdcSpec = AdcSpec(),
) -> DetectionResult:
    """
    Fixed k-sigma threshold over sliding windows.

    Fires at the first window whose new region contains a sample deviating from the
    baseline mean by more than k * sigma; detect_index is that sample.

    Args:
        trace: Recorded grasp
        baseline: Steady-state statistics; calibrated from the trace start when None
        spec: Window layout
        config: Detector settings
        adc: Converter (for the zero-sigma floor)
    """
    detector = ThresholdStreamDetector(spec, config, adc, baseline)
    return _run_stream(detector, condition(trace.vibration, config))


def detect_svm(
    trace: GraspTrace,
    model: KernelModel,
    spec: WindowSpec,
    baseline: Optional[BaselineStats] = None,
    config: DetectorConfig = DetectorConfig(),
    adc: AdcSpec = AdcSpec(),
) -> DetectionResult:
    """
    RBF-SVM window classifier over sliding windows.

    Fires at the first window classified as contact; detect_index is the last sample
    of that window's new region.

    Raises:
        ValueError: If the model was trained on a different window length
    """
    detector = SvmStreamDetector(model, spec, config, adc, baseline)
    return _run_stream(detector, condition(trace.vibration, config))


def build_detection_set(
    traces: Sequence[GraspTrace],
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    adc: AdcSpec = AdcSpec(),
    rng: Optional[np.random.Generator] = None,
    per_trace: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Balanced contact / no-contact windows for training the SVM detector.

    Negatives end at or before first contact (uniform over the pre-contact region);
    positives have a new region that contains first contact and at least one
    sample of the transient after it.

    Returns:
        (features, labels) with labels 1.0 for contact and 0.0 otherwise
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    width = spec.detect_samples
    features: List[np.ndarray] = []
    labels: List[float] = []
    for trace in traces:
        conditioned = condition(trace.vibration, config)
        baseline = trace_baseline(conditioned, config)
        t1 = trace.t_contact1
        if t1 < width:
            raise DataError(f"Trace {trace.trace_id}: first contact at {t1} leaves no room for a negative window")
        last_positive_end = min(t1 + spec.new_samples, len(conditioned))
        for _ in range(per_trace):
            end = int(rng.integers(width, t1 + 1))
            features.append(detection_features(conditioned[end - width : end], baseline, adc))
            labels.append(NO_CONTACT)
            end = int(rng.integers(t1 + 2, last_positive_end + 1))
            features.append(detection_features(conditioned[end - width : end], baseline, adc))
            labels.append(CONTACT)
    return np.vstack(features), np.array(labels)


def train_contact_svm(
    traces: Sequence[GraspTrace],
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    adc: AdcSpec = AdcSpec(),
    params: KernelParams = KernelParams(),
    seed: int = 0,
    per_trace: int = 1,
) -> KernelModel:
    """Train the contact / no-contact window classifier."""
    features, labels = build_detection_set(traces, spec, config, adc, np.random.default_rng(seed), per_trace)
    logger.info(f"Training contact SVM on {len(labels)} windows")
    return train_svc(
        features,
        labels,
        params.c_penalty,
        params.gamma,
        seed,
        params.tol,
        params.max_passes,
        Preprocessor(center=False, scale=1.0),
    )


def score_detections(
    results: Sequence[DetectionResult],
    traces: Sequence[GraspTrace],
    tolerance_ms: float = 5.0,
) -> DetectionScore:
    """
    Match detections against annotated first contact.

    A detection is a true positive when it lies at or after first contact and within
    tolerance; any other detection is a false positive; a miss is a false negative.
    """
    if len(results) != len(traces):
        raise ValueError(f"{len(results)} results for {len(traces)} traces")
    tp = fp = fn = 0
    lags: List[float] = []
    for result, trace in zip(results, traces):
        if not result.detected:
            fn += 1
            continue
        lag_ms = (result.detect_index - trace.t_contact1) * 1000.0 / trace.sample_rate_hz
        if 0 <= lag_ms <= tolerance_ms:
            tp += 1
            lags.append(lag_ms)
        else:
            fp += 1
    total = tp + fp + fn
    return DetectionScore(
        true_positive=tp,
        false_positive=fp,
        false_negative=fn,
        accuracy=tp / total if total else 0.0,
        mean_lag_ms=float(np.mean(lags)) if lags else 0.0,
        tolerance_ms=tolerance_ms,
    )
