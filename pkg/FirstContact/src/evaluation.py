"""
Stiffness datasets, model dispatch and evaluation reports.

Stiffness windows are cut from the exponentially smoothed piezo channel, the same
signal the streaming pipeline sees, so offline and online inputs are identical.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import DetectorConfig, SavGolSpec, WindowSpec
from .contact_detect import condition
from .conv_net import ConvModel, predict_conv, predict_conv_batch
from .dsp import extract_window, savgol
from .errors import DataError
from .kernel_machine import KernelModel, predict, predict_batch
from .signal_synth import GraspTrace

logger = logging.getLogger(__name__)

StiffnessModel = Union[KernelModel, ConvModel]


def model_task(model: StiffnessModel) -> str:
    """'discrimination' for class-label models, 'regression' for Shore A regressors."""
    if isinstance(model, ConvModel):
        return "discrimination" if model.spec.head == "softmax" else "regression"
    return "discrimination" if model.kind == "classifier" else "regression"


def predict_window(model: StiffnessModel, window: np.ndarray) -> Tuple[float, float]:
    """Timed single-window prediction for either model family."""
    if isinstance(model, ConvModel):
        return predict_conv(model, window)
    return predict(model, window)


def predict_windows(model: StiffnessModel, windows: np.ndarray) -> np.ndarray:
    if isinstance(model, ConvModel):
        return predict_conv_batch(model, windows)
    return predict_batch(model, windows)


def stiffness_windows(
    traces: Sequence[GraspTrace],
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    offsets: Sequence[int] = (0,),
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cut one stiffness window per trace and offset, anchored at first contact.

    Args:
        traces: Annotated grasps
        spec: Window layout
        config: Conditioning settings
        offsets: Sample offsets from first contact; several offsets teach a model
            to tolerate the detector's lag

    Returns:
        (windows, Shore A targets, index of the source trace per row)
    """
    if not traces:
        raise DataError("No traces to cut stiffness windows from")
    windows: List[np.ndarray] = []
    targets: List[float] = []
    sources: List[int] = []
    for i, trace in enumerate(traces):
        conditioned = condition(trace.vibration, config)
        for offset in offsets:
            windows.append(extract_window(conditioned, trace.t_contact1 + offset, spec, "stiffness"))
            targets.append(trace.label.shore_a)
            sources.append(i)
    return np.vstack(windows), np.array(targets), np.array(sources)


def split_holdout(n: int, fraction: float = 0.1, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded (train, validation) index split."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def inference_stats(times_ms: Sequence[float]) -> Dict[str, float]:
    times = np.asarray(times_ms, dtype=np.float64)
    if len(times) == 0:
        return {"mean_ms": 0.0, "p99_ms": 0.0}
    return {"mean_ms": float(times.mean()), "p99_ms": float(np.percentile(times, 99))}


@dataclass
class EvalReport:
    """Outcome of evaluating a stiffness model on held-out traces."""

    task: str
    n_samples: int
    accuracy: Optional[float] = None
    confusion: Optional[pd.DataFrame] = None
    mse_shore: Optional[float] = None
    rmse_shore: Optional[float] = None
    per_object: Dict[str, Dict[str, object]] = field(default_factory=dict)
    inference_stats: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "task": self.task,
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "mse_shore": self.mse_shore,
            "rmse_shore": self.rmse_shore,
            "inference_stats": self.inference_stats,
        }
        if self.confusion is not None:
            out["confusion"] = {
                "classes": [float(c) for c in self.confusion.index],
                "counts": self.confusion.to_numpy().tolist(),
            }
        if self.per_object:
            out["per_object"] = self.per_object
        return out

    def per_object_frame(self) -> pd.DataFrame:
        """Long-format predictions per object, one row per window (box-plot data)."""
        rows = [
            {"object": name, "true_shore": entry["true_shore"], "predicted_shore": value}
            for name, entry in self.per_object.items()
            for value in entry["predictions"]
        ]
        return pd.DataFrame(rows, columns=["object", "true_shore", "predicted_shore"])


def confusion_matrix(truth: Sequence[float], predicted: Sequence[float], classes: Sequence[float]) -> pd.DataFrame:
    """Counts with true classes as rows and predicted classes as columns."""
    lookup = {float(c): i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        if float(t) in lookup and float(p) in lookup:
            counts[lookup[float(t)], lookup[float(p)]] += 1
    index = pd.Index([float(c) for c in classes], name="true")
    columns = pd.Index([float(c) for c in classes], name="predicted")
    return pd.DataFrame(counts, index=index, columns=columns)


def _object_key(trace: GraspTrace) -> str:
    return trace.label.object_name or f"{trace.label.shore_a:g}"


def evaluate(
    model: StiffnessModel,
    traces: Sequence[GraspTrace],
    spec: WindowSpec,
    config: DetectorConfig = DetectorConfig(),
    task: Optional[str] = None,
) -> EvalReport:
    """
    Evaluate a model on windows anchored at each trace's first contact.

    Args:
        model: Trained kernel or convolutional model
        traces: Held-out grasps
        spec: Window layout
        config: Conditioning settings
        task: "discrimination" or "regression"; inferred from the model when None

    Returns:
        An EvalReport with accuracy and confusion (discrimination) or MSE, RMSE and
        per-object predictions (regression), plus per-window inference timing
    """
    task = task or model_task(model)
    if task not in ("discrimination", "regression"):
        raise ValueError(f"Unknown task '{task}'")
    windows, truth, sources = stiffness_windows(traces, spec, config)
    predictions = np.empty(len(windows))
    times = np.empty(len(windows))
    for i, window in enumerate(windows):
        predictions[i], times[i] = predict_window(model, window)

    report = EvalReport(task=task, n_samples=len(windows), inference_stats=inference_stats(times))
    if task == "discrimination":
        report.accuracy = float(np.mean(predictions == truth))
        classes = model.classes or sorted(set(truth.tolist()))
        report.confusion = confusion_matrix(truth, predictions, classes)
        logger.info(f"Discrimination accuracy {report.accuracy:.4f} on {len(windows)} windows")
    else:
        errors = predictions - truth
        report.mse_shore = float(np.mean(errors**2))
        report.rmse_shore = float(np.sqrt(report.mse_shore))
        logger.info(f"Regression RMSE {report.rmse_shore:.3f} Shore A on {len(windows)} windows")

    for i, source in enumerate(sources):
        trace = traces[source]
        entry = report.per_object.setdefault(
            _object_key(trace), {"true_shore": trace.label.shore_a, "predictions": []}
        )
        entry["predictions"].append(float(predictions[i]))
    return report


def peak_response_table(
    traces: Sequence[GraspTrace],
    savgol_spec: SavGolSpec = SavGolSpec(),
) -> pd.DataFrame:
    """
    Peak first-contact response per stiffness level.

    The piezo channel is Savitzky-Golay smoothed offline; the peak is the largest
    deviation from the pre-contact median between the two contacts.

    Returns:
        One row per Shore A value: n, peak_mean_v, peak_std_v
    """
    rows = []
    for trace in traces:
        smoothed = savgol(trace.vibration, savgol_spec)
        offset = float(np.median(smoothed[: trace.t_contact1]))
        segment = smoothed[trace.t_contact1 : trace.t_contact2]
        rows.append({"shore_a": trace.label.shore_a, "peak_v": float(np.max(np.abs(segment - offset)))})
    frame = pd.DataFrame(rows)
    table = frame.groupby("shore_a")["peak_v"].agg(n="count", peak_mean_v="mean", peak_std_v="std")
    return table.reset_index()


def contact_gap_summary(traces: Sequence[GraspTrace], bin_ms: float = 2.5) -> Dict[str, object]:
    """Mean, spread and histogram of first-to-second contact gaps in ms."""
    if not traces:
        raise DataError("No traces to summarise")
    gaps = pd.Series([t.gap_ms for t in traces], name="gap_ms")
    edges = np.arange(0.0, gaps.max() + bin_ms, bin_ms)
    counts, edges = np.histogram(gaps, bins=edges)
    return {
        "n": int(len(gaps)),
        "mean_ms": float(gaps.mean()),
        "std_ms": float(gaps.std(ddof=1)) if len(gaps) > 1 else 0.0,
        "min_ms": float(gaps.min()),
        "max_ms": float(gaps.max()),
        "histogram": {"edges_ms": edges.tolist(), "counts": counts.tolist()},
    }


def force_silence_check(traces: Sequence[GraspTrace], noise_std_v: float) -> Dict[str, float]:
    """
    Largest force-channel excursion before second contact.

    The deviation is measured against each channel's pre-contact median and also
    expressed in units of the generator's noise level.
    """
    worst = 0.0
    for trace in traces:
        quiet = trace.force[:, : trace.t_contact2]
        baseline = np.median(quiet, axis=1, keepdims=True)
        worst = max(worst, float(np.max(np.abs(quiet - baseline))))
    sigma = noise_std_v if noise_std_v > 0 else float("nan")
    return {"max_deviation_v": worst, "max_deviation_sigma": worst / sigma}
