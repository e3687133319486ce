"""
Real-time grasp pipeline: sample-by-sample replay, contact detection, stiffness window
collection and inference, with a per-grasp latency ledger checked against the actual
first-to-second contact gap.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .config import AdcSpec, DetectorConfig, SynthConfig, WindowSpec
from .contact_detect import DetectionResult, StreamDetector, SvmStreamDetector, ThresholdStreamDetector
from .dsp import ExpSmoother
from .evaluation import StiffnessModel, inference_stats, predict_window
from .kernel_machine import KernelModel
from .signal_synth import GraspTrace, latent_gap_params

logger = logging.getLogger(__name__)

DetectorFactory = Callable[[], StreamDetector]


@dataclass(frozen=True)
class LatencyLedger:
    """Where the time between first contact and the stiffness verdict went."""

    detect_lag_ms: float
    collect_ms: float
    inference_ms: float
    total_ms: float
    budget_ms: float
    within_budget: bool

    @classmethod
    def build(cls, detect_lag_ms: float, collect_ms: float, inference_ms: float, budget_ms: float) -> "LatencyLedger":
        total_ms = detect_lag_ms + collect_ms + inference_ms
        return cls(detect_lag_ms, collect_ms, inference_ms, total_ms, budget_ms, total_ms <= budget_ms)


@dataclass
class GraspReport:
    trace_id: int
    detection: DetectionResult
    true_shore: float
    predicted_shore: Optional[float] = None
    ledger: Optional[LatencyLedger] = None
    object_name: Optional[str] = None

    def __post_init__(self):
        if self.predicted_shore is not None and not self.detection.detected:
            raise ValueError("A prediction requires a detection")

    @property
    def within_budget(self) -> bool:
        return self.ledger is not None and self.ledger.within_budget

    def to_record(self) -> Dict[str, object]:
        return {
            "trace_id": self.trace_id,
            "object": self.object_name,
            "true_shore": self.true_shore,
            "predicted_shore": self.predicted_shore,
            "detection": asdict(self.detection),
            "ledger": asdict(self.ledger) if self.ledger else None,
        }


@dataclass
class CorpusReport:
    reports: List[GraspReport]
    n_grasps: int
    n_detected: int
    fraction_within_budget: float
    inference_stats: Dict[str, float] = field(default_factory=dict)

    def summary(self) -> Dict[str, object]:
        return {
            "n_grasps": self.n_grasps,
            "n_detected": self.n_detected,
            "fraction_within_budget": self.fraction_within_budget,
            "inference_mean_ms": self.inference_stats.get("mean_ms", 0.0),
            "inference_p99_ms": self.inference_stats.get("p99_ms", 0.0),
        }

    def to_lines(self) -> List[str]:
        """Line-delimited JSON, one record per grasp."""
        return [json.dumps(r.to_record(), sort_keys=True) for r in self.reports]


def make_detector_factory(
    kind: str,
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    adc: AdcSpec = AdcSpec(),
    detector_model: Optional[KernelModel] = None,
) -> DetectorFactory:
    """Factory producing a fresh streaming detector per grasp."""
    if kind == "threshold":
        return lambda: ThresholdStreamDetector(spec, config, adc)
    if kind == "svm":
        if detector_model is None:
            raise ValueError("The svm detector needs a trained contact model")
        return lambda: SvmStreamDetector(detector_model, spec, config, adc)
    raise ValueError(f"Unknown detector kind '{kind}'")


def run_grasp(
    trace: GraspTrace,
    detector: StreamDetector,
    model: StiffnessModel,
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    paced: bool = False,
) -> GraspReport:
    """
    Replay one grasp through smoothing, detection, collection and inference.

    Samples are consumed strictly in time order. After detection the next
    stiffness_samples smoothed samples starting at detect_index form the model
    input; only the model call is timed.

    Args:
        trace: Recorded grasp
        detector: Fresh streaming detector
        model: Stiffness model
        spec: Window layout matching both models
        config: Conditioning settings
        paced: Sleep so samples arrive at the real sample rate

    Returns:
        A GraspReport; undetected grasps carry no prediction and no ledger
    """
    smoother = ExpSmoother(config.smoothing_alpha)
    conditioned: List[float] = []
    detection: Optional[DetectionResult] = None
    ms_per_sample = 1000.0 / trace.sample_rate_hz
    started = time.perf_counter()

    for n, raw in enumerate(trace.vibration):
        if paced:
            delay = started + n / trace.sample_rate_hz - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        conditioned.append(smoother.update(raw))
        if detection is None:
            detection = detector.push(conditioned[-1])
            if detection is None:
                continue
            logger.debug(f"Trace {trace.trace_id}: contact detected at sample {detection.detect_index}")
        if len(conditioned) >= detection.detect_index + spec.stiffness_samples:
            break

    report = GraspReport(
        trace_id=trace.trace_id,
        detection=detection or detector.finish(),
        true_shore=trace.label.shore_a,
        object_name=trace.label.object_name,
    )
    if detection is None:
        logger.debug(f"Trace {trace.trace_id}: no contact detected")
        return report
    end = detection.detect_index + spec.stiffness_samples
    if end > len(conditioned):
        logger.warning(f"Trace {trace.trace_id}: trace ends before the stiffness window is complete")
        return report

    window = np.array(conditioned[detection.detect_index : end])
    report.predicted_shore, inference_ms = predict_window(model, window)
    report.ledger = LatencyLedger.build(
        detect_lag_ms=(detection.detect_index - trace.t_contact1) * ms_per_sample,
        collect_ms=spec.stiffness_samples * ms_per_sample,
        inference_ms=inference_ms,
        budget_ms=trace.gap_ms,
    )
    if not report.ledger.within_budget:
        logger.debug(
            f"Trace {trace.trace_id}: verdict after {report.ledger.total_ms:.2f} ms, "
            f"second contact at {report.ledger.budget_ms:.2f} ms"
        )
    return report


def run_corpus(
    traces: Sequence[GraspTrace],
    detector_factory: DetectorFactory,
    model: StiffnessModel,
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    workers: int = 1,
    paced: bool = False,
) -> CorpusReport:
    """
    Stream every trace and aggregate budget and latency statistics.

    Reports keep the input order whatever the worker count. Undetected grasps count
    as not within budget.
    """
    def one(trace: GraspTrace) -> GraspReport:
        return run_grasp(trace, detector_factory(), model, spec, config, paced)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            reports = list(executor.map(one, traces))
    else:
        reports = [one(t) for t in traces]

    ledgers = [r.ledger for r in reports if r.ledger is not None]
    n = len(reports)
    corpus = CorpusReport(
        reports=reports,
        n_grasps=n,
        n_detected=sum(r.detection.detected for r in reports),
        fraction_within_budget=sum(r.within_budget for r in reports) / n if n else 0.0,
        inference_stats=inference_stats([ledger.inference_ms for ledger in ledgers]),
    )
    logger.info(
        f"Streamed {n} grasps: {corpus.n_detected} detected, "
        f"{corpus.fraction_within_budget:.3f} within budget"
    )
    return corpus


def bench_inference(
    model: StiffnessModel,
    n_trials: int,
    window_len: int = 74,
    seed: int = 0,
    windows: Optional[np.ndarray] = None,
) -> Dict[str, float]:
    """
    Single-thread latency of one-window inference.

    The first 10% of trials warm caches and are excluded from the statistics.

    Raises:
        ValueError: If n_trials is not positive
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be positive, got {n_trials}")
    if windows is None:
        rng = np.random.default_rng(seed)
        windows = 1.65 + rng.normal(0.0, 0.05, (min(n_trials, 256), window_len))
    times = []
    for i in range(n_trials):
        _, elapsed = predict_window(model, windows[i % len(windows)])
        times.append(elapsed)
    stats = inference_stats(times[n_trials // 10 :])
    stats["n_trials"] = float(n_trials)
    return stats


def budget_consistency(reports: Sequence[GraspReport], cfg: SynthConfig) -> Dict[str, object]:
    """
    Compare the observed within-budget fraction with the gap model's prediction.

    Each grasp contributes P(gap > its measured total) under the generator's gap
    distribution; the spread is that of a sum of independent Bernoulli trials.
    Undetected grasps contribute zero to both sides.
    """
    if not reports:
        raise ValueError("No reports to check")
    if cfg.gap_model == "moment-matched":
        mu, sigma = latent_gap_params(cfg.delta_mean_ms, cfg.delta_std_ms, cfg.delta_min_ms)
    else:
        mu, sigma = cfg.delta_mean_ms, cfg.delta_std_ms

    probabilities = []
    for report in reports:
        if report.ledger is None:
            probabilities.append(0.0)
        elif report.ledger.total_ms < cfg.delta_min_ms:
            probabilities.append(1.0)
        elif sigma == 0:
            probabilities.append(1.0 if report.ledger.total_ms < mu else 0.0)
        else:
            probabilities.append(float(norm.sf(report.ledger.total_ms, loc=mu, scale=sigma)))
    p = np.array(probabilities)
    n = len(p)
    expected = float(p.mean())
    observed = sum(r.within_budget for r in reports) / n
    standard_error = float(np.sqrt(np.sum(p * (1 - p))) / n)
    z = (observed - expected) / standard_error if standard_error > 0 else 0.0
    return {
        "observed_fraction": observed,
        "expected_fraction": expected,
        "standard_error": standard_error,
        "z_score": float(z),
        "consistent": bool(abs(z) <= 3.0),
    }
