"""
Signal conditioning: ADC quantization, exponential smoothing, sliding-window averaging,
Savitzky-Golay post-filtering and fixed-length window extraction.
"""

from collections import deque
from typing import Deque, Literal, Union

import numpy as np
from scipy.signal import savgol_filter

from .config import AdcSpec, SavGolSpec, WindowSpec

ArrayLike = Union[float, np.ndarray]


def quantize(x: ArrayLike, spec: AdcSpec) -> np.ndarray:
    """
    Convert volts to ADC codes, rounding to nearest with ties away from zero.

    Out-of-range voltages saturate at the rails.

    Args:
        x: Voltage or array of voltages
        spec: Converter description

    Returns:
        Integer codes (same shape as x)
    """
    scaled = np.asarray(x, dtype=np.float64) / spec.ref_v * spec.max_code
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, 0, spec.max_code).astype(np.int64)


def dequantize(code: ArrayLike, spec: AdcSpec) -> np.ndarray:
    """Map ADC codes back to volts (exact up to half an LSB)."""
    return np.asarray(code, dtype=np.float64) * spec.ref_v / spec.max_code


class ExpSmoother:
    """Streaming exponential smoother with O(1) state."""

    def __init__(self, alpha: float = 0.5):
        if not 0 < alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        self.alpha = alpha
        self.state: Union[float, None] = None

    def update(self, x: float) -> float:
        if self.state is None:
            self.state = float(x)
        else:
            self.state = self.alpha * float(x) + (1.0 - self.alpha) * self.state
        return self.state


def exp_smooth(stream: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """
    Exponential smoothing y[n] = alpha*x[n] + (1-alpha)*y[n-1], with y[0] = x[0].

    Args:
        stream: Input samples
        alpha: Smoothing factor in (0, 1]

    Returns:
        Smoothed samples, same length as the input
    """
    smoother = ExpSmoother(alpha)
    values = np.asarray(stream, dtype=np.float64)
    out = np.empty_like(values)
    for n, x in enumerate(values):
        out[n] = smoother.update(x)
    return out


class MovingAverage:
    """Streaming causal mean over the most recent window_len samples."""

    def __init__(self, window_len: int = 25):
        if window_len < 1:
            raise ValueError(f"window_len must be at least 1, got {window_len}")
        self.window_len = window_len
        self.buffer: Deque[float] = deque(maxlen=window_len)

    def update(self, x: float) -> float:
        self.buffer.append(float(x))
        return sum(self.buffer) / len(self.buffer)


def moving_average(stream: np.ndarray, window_len: int = 25) -> np.ndarray:
    """Causal sliding-window mean; the first samples average over what is available."""
    averager = MovingAverage(window_len)
    values = np.asarray(stream, dtype=np.float64)
    return np.array([averager.update(x) for x in values], dtype=np.float64)


def savgol(signal: np.ndarray, spec: SavGolSpec = SavGolSpec()) -> np.ndarray:
    """
    Offline least-squares polynomial smoothing.

    Args:
        signal: Full recorded signal
        spec: Window length, polynomial order and edge policy

    Returns:
        Smoothed signal

    Raises:
        ValueError: If the signal is shorter than the filter window
    """
    values = np.asarray(signal, dtype=np.float64)
    if values.shape[-1] < spec.window_len:
        raise ValueError(
            f"Signal of length {values.shape[-1]} is shorter than the {spec.window_len}-sample window"
        )
    return savgol_filter(values, spec.window_len, spec.poly_order, mode=spec.edge_mode)


def extract_window(
    samples: np.ndarray,
    start_index: int,
    spec: WindowSpec,
    kind: Literal["detect", "stiffness"],
) -> np.ndarray:
    """
    Cut a fixed-length window from a sample vector.

    A detect window is the detect_samples samples ending just before start_index;
    a stiffness window is the stiffness_samples samples beginning at start_index.

    Args:
        samples: Channel samples
        start_index: Anchor sample index
        spec: Window durations
        kind: "detect" or "stiffness"

    Returns:
        A copy of the window
    """
    if kind == "detect":
        lo, hi = start_index - spec.detect_samples, start_index
    elif kind == "stiffness":
        lo, hi = start_index, start_index + spec.stiffness_samples
    else:
        raise ValueError(f"Unknown window kind '{kind}'")
    if lo < 0 or hi > len(samples):
        raise IndexError(
            f"{kind} window [{lo}, {hi}) does not fit inside {len(samples)} samples"
        )
    return np.array(samples[lo:hi], dtype=np.float64)
