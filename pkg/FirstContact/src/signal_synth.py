"""
Synthetic pinch-grasp traces with ground-truth contact annotations.

A trace carries one piezo vibration channel and the six force channels of the 3x2
row-column array. The first finger's contact rings the piezo with a damped sinusoid
whose amplitude grows with stiffness; the second contact adds a smaller ringing and
starts the force ramp. Force stays at baseline until the second contact.
"""

import logging
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import fsolve
from scipy.signal import butter, lfilter
from scipy.stats import norm

from .config import PAPER_BLOCK_SHORE, REAL_OBJECT_SHORE, SynthConfig, samples_for
from .dsp import dequantize, quantize
from .errors import DataError

logger = logging.getLogger(__name__)

N_FORCE_CHANNELS = 6
TEXTURE_BAND_HZ = (800.0, 1600.0)
TEXTURE_DURATION_MS = 5.0


@dataclass(frozen=True)
class StiffnessLabel:
    """Ground-truth stiffness, optionally tied to a named object."""

    shore_a: float
    object_name: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.shore_a <= 100.0:
            raise DataError(f"Shore A value must lie in [0, 100], got {self.shore_a}")

    @property
    def material(self) -> Optional[str]:
        """Object class without its instance suffix, e.g. 'apple' for 'apple-2'."""
        if self.object_name is None:
            return None
        return self.object_name.rsplit("-", 1)[0]


@dataclass
class GraspTrace:
    """One recorded pinch: vibration and force channels in volts plus annotations."""

    vibration: np.ndarray
    force: np.ndarray
    t_contact1: int
    t_contact2: int
    label: StiffnessLabel
    sample_rate_hz: float
    trace_id: int = 0
    meta: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.vibration)
        if self.force.shape != (N_FORCE_CHANNELS, n):
            raise DataError(
                f"Force block must have shape ({N_FORCE_CHANNELS}, {n}), got {self.force.shape}"
            )
        if not 0 <= self.t_contact1 < self.t_contact2 < n:
            raise DataError(
                f"Contacts must satisfy 0 <= t1 < t2 < {n}, got t1={self.t_contact1} t2={self.t_contact2}"
            )

    @property
    def n_samples(self) -> int:
        return len(self.vibration)

    @property
    def gap_ms(self) -> float:
        return (self.t_contact2 - self.t_contact1) * 1000.0 / self.sample_rate_hz


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def clamped_normal_moments(mu: float, sigma: float, floor: float) -> Tuple[float, float]:
    """Mean and standard deviation of max(floor, X) for X ~ Normal(mu, sigma)."""
    if sigma == 0:
        value = max(floor, mu)
        return value, 0.0
    z = (floor - mu) / sigma
    below = norm.cdf(z)
    density = norm.pdf(z)
    mean = mu * (1 - below) + sigma * density + floor * below
    second = (mu**2 + sigma**2) * (1 - below) + sigma * density * (mu + floor) + floor**2 * below
    return mean, float(np.sqrt(max(second - mean**2, 0.0)))


@lru_cache(maxsize=32)
def latent_gap_params(mean_ms: float, std_ms: float, floor_ms: float) -> Tuple[float, float]:
    """
    Normal parameters whose floor-clamped draws have the requested mean and spread.

    The reported gap statistics describe observed (positive) gaps, so the latent
    Normal is shifted and widened until clamping at floor_ms restores them.
    """
    if std_ms == 0 or mean_ms <= floor_ms:
        return mean_ms, std_ms

    def residual(params):
        mu, log_sigma = params
        m, s = clamped_normal_moments(mu, float(np.exp(log_sigma)), floor_ms)
        return [m - mean_ms, s - std_ms]

    (mu, log_sigma), _, converged, message = fsolve(
        residual, [mean_ms, np.log(std_ms)], full_output=True
    )
    if converged != 1:
        logger.warning(f"Gap moment matching did not converge ({message}); using raw parameters")
        return mean_ms, std_ms
    return float(mu), float(np.exp(log_sigma))


def draw_contact_gap(cfg: SynthConfig, rng: np.random.Generator) -> float:
    """
    Draw the first-to-second contact interval in milliseconds.

    Returns max(delta_min_ms, X) with X Normal. With gap_model "moment-matched"
    the Normal is chosen so the clamped draws keep delta_mean_ms/delta_std_ms;
    with "clamped" X ~ Normal(delta_mean_ms, delta_std_ms) directly.
    """
    if cfg.gap_model == "moment-matched":
        mu, sigma = latent_gap_params(cfg.delta_mean_ms, cfg.delta_std_ms, cfg.delta_min_ms)
    else:
        mu, sigma = cfg.delta_mean_ms, cfg.delta_std_ms
    return max(cfg.delta_min_ms, float(rng.normal(mu, sigma)))


def transient_frequency_hz(cfg: SynthConfig, shore_a: float) -> float:
    return max(1.0, cfg.osc_freq_hz + cfg.freq_gain_hz_per_shore * (shore_a - cfg.freq_ref_shore))


def transient_amplitude_v(cfg: SynthConfig, shore_a: float) -> float:
    return cfg.amp_offset_v + cfg.amp_gain_per_shore * shore_a


def _ringing(n: int, onset: int, amplitude: float, freq_hz: float, damping: float, fs: float) -> np.ndarray:
    out = np.zeros(n)
    tau = np.arange(n - onset) / fs
    out[onset:] = amplitude * np.exp(-damping * tau) * np.sin(2.0 * np.pi * freq_hz * tau)
    return out


def material_texture(material: str, cfg: SynthConfig) -> np.ndarray:
    """
    Band-limited noise burst characteristic of one material class.

    The waveform depends only on the material name, so both instances of an
    object class share it.
    """
    fs = cfg.sample_rate_hz
    n = max(4, samples_for(TEXTURE_DURATION_MS, fs))
    rng = make_rng(zlib.crc32(material.encode("utf-8")))
    nyquist = fs / 2.0
    low, high = TEXTURE_BAND_HZ
    b, a = butter(2, [low / nyquist, min(high / nyquist, 0.99)], btype="band")
    burst = lfilter(b, a, rng.normal(0.0, 1.0, n)) * np.hanning(n)
    scale = np.std(burst)
    if scale > 0:
        burst = burst / scale * cfg.texture_std_v
    return burst


def synthesize_grasp(
    cfg: SynthConfig,
    label: StiffnessLabel,
    rng: Optional[np.random.Generator] = None,
    trace_id: int = 0,
    amp_scale: float = 1.0,
    damping_scale: float = 1.0,
) -> GraspTrace:
    """
    Generate one pinch-grasp trace.

    Args:
        cfg: Generator parameters
        label: Stiffness (and object name for real-object scenarios)
        rng: Random stream; defaults to one seeded from cfg.seed
        trace_id: Identifier stored on the trace
        amp_scale: Multiplicative amplitude factor (placement variation)
        damping_scale: Multiplicative damping factor (placement variation)

    Returns:
        A GraspTrace whose channels have been through ADC quantization
    """
    if not isinstance(label, StiffnessLabel):
        label = StiffnessLabel(float(label))
    rng = rng if rng is not None else make_rng(cfg.seed)
    fs = cfg.sample_rate_hz
    adc = cfg.adc

    jitter = samples_for(cfg.pre_contact_jitter_ms, fs)
    t1 = samples_for(cfg.pre_contact_ms, fs) + int(rng.integers(0, jitter + 1))
    gap_ms = draw_contact_gap(cfg, rng)
    t2 = t1 + max(1, samples_for(gap_ms, fs))
    n = t2 + samples_for(cfg.post_contact_ms, fs)

    amplitude = transient_amplitude_v(cfg, label.shore_a) * amp_scale
    freq = transient_frequency_hz(cfg, label.shore_a)
    damping = cfg.damping_per_s * damping_scale

    vibration = np.full(n, cfg.adc_offset_v)
    vibration += _ringing(n, t1, amplitude, freq, damping, fs)
    vibration += _ringing(n, t2, cfg.second_contact_gain * amplitude, freq, damping, fs)
    if cfg.noise_std_v > 0:
        vibration += rng.normal(0.0, cfg.noise_std_v, n)
    if label.material is not None and cfg.texture_std_v > 0:
        texture = material_texture(label.material, cfg)
        end = min(n, t1 + len(texture))
        vibration[t1:end] += texture[: end - t1]

    rise = max(1, samples_for(cfg.force_rise_ms, fs))
    ramp = np.clip((np.arange(n) - t2) / rise, 0.0, 1.0)
    channel_gain = rng.uniform(0.7, 1.0, N_FORCE_CHANNELS)
    force = cfg.force_baseline_v + np.outer(channel_gain, ramp) * cfg.force_plateau_v
    if cfg.noise_std_v > 0:
        noise = rng.normal(0.0, cfg.noise_std_v, force.shape)
        force += np.clip(noise, -3.0 * cfg.noise_std_v, 3.0 * cfg.noise_std_v)

    return GraspTrace(
        vibration=dequantize(quantize(vibration, adc), adc),
        force=dequantize(quantize(force, adc), adc),
        t_contact1=t1,
        t_contact2=t2,
        label=label,
        sample_rate_hz=fs,
        trace_id=trace_id,
        meta={"amp_scale": float(amp_scale), "damping_scale": float(damping_scale), "gap_ms": gap_ms},
    )


def make_dataset(
    cfg: SynthConfig,
    labels: List[StiffnessLabel],
    pinches_per_label: int,
    rng: Optional[np.random.Generator] = None,
) -> List[GraspTrace]:
    """
    Generate pinches_per_label traces for each label, in label-major order.

    Every trace gets lognormal amplitude jitter and uniform damping jitter to
    emulate small changes in object placement.

    Args:
        cfg: Generator parameters
        labels: Stiffness labels to cover
        pinches_per_label: Traces per label
        rng: Random stream; defaults to one seeded from cfg.seed

    Returns:
        List of len(labels) * pinches_per_label traces
    """
    if not labels:
        raise DataError("make_dataset needs at least one label")
    if pinches_per_label < 1:
        raise DataError(f"pinches_per_label must be at least 1, got {pinches_per_label}")
    rng = rng if rng is not None else make_rng(cfg.seed)

    traces = []
    for label in labels:
        if not isinstance(label, StiffnessLabel):
            label = StiffnessLabel(float(label))
        for _ in range(pinches_per_label):
            amp_scale = float(np.exp(rng.normal(0.0, cfg.amp_jitter_sigma)))
            damping_scale = float(rng.uniform(1.0 - cfg.damping_jitter, 1.0 + cfg.damping_jitter))
            traces.append(
                synthesize_grasp(
                    cfg,
                    label,
                    rng,
                    trace_id=len(traces),
                    amp_scale=amp_scale,
                    damping_scale=damping_scale,
                )
            )
    logger.info(f"Synthesized {len(traces)} traces over {len(labels)} labels")
    return traces


def paper_block_labels(shores: Optional[List[float]] = None) -> List[StiffnessLabel]:
    return [StiffnessLabel(s) for s in (shores or PAPER_BLOCK_SHORE)]


def real_object_labels() -> List[StiffnessLabel]:
    return [StiffnessLabel(shore, name) for name, shore in REAL_OBJECT_SHORE.items()]


def inject_bursts(
    trace: GraspTrace,
    cfg: SynthConfig,
    n_bursts: int,
    sigma_multiple: float,
    rng: np.random.Generator,
    earliest: int = 120,
    burst_len: int = 3,
) -> GraspTrace:
    """
    Add short noise bursts before first contact (false-positive bait).

    Each burst is burst_len consecutive samples offset by sigma_multiple noise
    standard deviations with a random sign, placed between `earliest` and the
    first contact.

    Returns:
        A new trace; the input is left untouched
    """
    adc = cfg.adc
    sigma = max(cfg.noise_std_v, adc.lsb_v)
    vibration = trace.vibration.copy()
    latest = trace.t_contact1 - burst_len - 1
    if n_bursts > 0 and latest <= earliest:
        raise DataError(f"No room for bursts between sample {earliest} and first contact {trace.t_contact1}")
    for _ in range(n_bursts):
        start = int(rng.integers(earliest, latest))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        vibration[start : start + burst_len] += sign * sigma_multiple * sigma
    meta = dict(trace.meta, bursts=float(n_bursts))
    return GraspTrace(
        vibration=dequantize(quantize(vibration, adc), adc),
        force=trace.force.copy(),
        t_contact1=trace.t_contact1,
        t_contact2=trace.t_contact2,
        label=trace.label,
        sample_rate_hz=trace.sample_rate_hz,
        trace_id=trace.trace_id,
        meta=meta,
    )
