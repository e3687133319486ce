"""
Configuration models for synthesis, signal conditioning, detection, training and CLI runs.

Every model rejects unknown keys and validates its invariants on construction, so a
loaded config is always usable as-is.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1.0"

# Training blocks (Shore A) and the held-out everyday objects.
PAPER_BLOCK_SHORE: List[float] = [10.0, 20.0, 29.0, 43.0, 60.0]
REAL_OBJECT_SHORE: Dict[str, float] = {
    "apple-1": 28.0,
    "apple-2": 26.0,
    "orange-1": 35.0,
    "orange-2": 37.0,
    "tennis-ball-1": 45.0,
    "tennis-ball-2": 46.0,
    "avocado-1": 59.0,
    "avocado-2": 67.0,
}


def samples_for(duration_ms: float, sample_rate_hz: float) -> int:
    """Round a duration to the nearest whole number of samples."""
    return int(round(duration_ms * sample_rate_hz / 1000.0))


class StrictModel(BaseModel):
    """Base model: unknown keys are an error, assignments are re-validated."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class AdcSpec(StrictModel):
    """Analog-to-digital converter of the acquisition board."""

    bits: int = Field(10, ge=1, le=16)
    ref_v: float = Field(3.3, gt=0)
    offset_v: float = 1.65
    rounding: Literal["nearest-ties-away-from-zero"] = "nearest-ties-away-from-zero"

    @model_validator(mode="after")
    def _check_offset(self) -> "AdcSpec":
        if not 0 < self.offset_v < self.ref_v:
            raise ValueError(f"offset_v must lie in (0, {self.ref_v}), got {self.offset_v}")
        return self

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    @property
    def lsb_v(self) -> float:
        return self.ref_v / self.max_code


class SynthConfig(StrictModel):
    """
    Parameters of the synthetic pinch-grasp generator.

    Amplitude follows amp_offset_v + amp_gain_per_shore * shore_a; the ringing
    frequency follows osc_freq_hz + freq_gain_hz_per_shore * (shore_a - freq_ref_shore).
    """

    sample_rate_hz: float = Field(4936.0, gt=0)
    delta_mean_ms: float = 16.65
    delta_std_ms: float = Field(10.35, ge=0)
    delta_min_ms: float = Field(1.0, gt=0)
    gap_model: Literal["moment-matched", "clamped"] = "moment-matched"
    amp_gain_per_shore: float = Field(0.015, gt=0)
    amp_offset_v: float = Field(0.02, ge=0)
    osc_freq_hz: float = Field(400.0, gt=0)
    freq_gain_hz_per_shore: float = Field(5.0, ge=0)
    freq_ref_shore: float = Field(35.0, ge=0, le=100)
    damping_per_s: float = Field(200.0, gt=0)
    noise_std_v: float = Field(0.004, ge=0)
    second_contact_gain: float = Field(0.6, ge=0, le=1)
    amp_jitter_sigma: float = Field(0.1, ge=0)
    damping_jitter: float = Field(0.1, ge=0, lt=1)
    force_rise_ms: float = Field(10.0, gt=0)
    force_plateau_v: float = Field(1.2, gt=0)
    force_baseline_v: float = Field(0.0, ge=0)
    pre_contact_ms: float = Field(40.0, gt=0)
    pre_contact_jitter_ms: float = Field(10.0, ge=0)
    post_contact_ms: float = Field(30.0, gt=0)
    texture_std_v: float = Field(0.01, ge=0)
    adc_bits: int = Field(10, ge=8, le=16)
    adc_ref_v: float = Field(3.3, gt=0)
    adc_offset_v: float = 1.65
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_adc(self) -> "SynthConfig":
        if not 0 < self.adc_offset_v < self.adc_ref_v:
            raise ValueError(
                f"adc_offset_v must lie in (0, {self.adc_ref_v}), got {self.adc_offset_v}"
            )
        return self

    @property
    def adc(self) -> AdcSpec:
        return AdcSpec(bits=self.adc_bits, ref_v=self.adc_ref_v, offset_v=self.adc_offset_v)


class WindowSpec(StrictModel):
    """Detection (history + new) and stiffness window durations."""

    detect_history_ms: float = Field(17.0, gt=0)
    detect_new_ms: float = Field(3.0, gt=0)
    stiffness_ms: float = Field(15.0, gt=0)
    sample_rate_hz: float = Field(4936.0, gt=0)

    @model_validator(mode="after")
    def _check_counts(self) -> "WindowSpec":
        for name in ("history_samples", "new_samples", "stiffness_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} rounds to zero samples at {self.sample_rate_hz} Hz")
        return self

    @property
    def history_samples(self) -> int:
        return samples_for(self.detect_history_ms, self.sample_rate_hz)

    @property
    def new_samples(self) -> int:
        return samples_for(self.detect_new_ms, self.sample_rate_hz)

    @property
    def detect_samples(self) -> int:
        return self.history_samples + self.new_samples

    @property
    def stiffness_samples(self) -> int:
        return samples_for(self.stiffness_ms, self.sample_rate_hz)

    def ms_per_sample(self) -> float:
        return 1000.0 / self.sample_rate_hz


class SavGolSpec(StrictModel):
    """Savitzky-Golay smoothing parameters for offline post-filtering."""

    window_len: int = Field(11, ge=1)
    poly_order: int = Field(3, ge=0)
    edge_mode: Literal["interp", "mirror"] = "interp"

    @model_validator(mode="after")
    def _check_shape(self) -> "SavGolSpec":
        if self.window_len % 2 == 0:
            raise ValueError(f"window_len must be odd, got {self.window_len}")
        if self.poly_order >= self.window_len:
            raise ValueError(
                f"poly_order ({self.poly_order}) must be below window_len ({self.window_len})"
            )
        return self


class DetectorConfig(StrictModel):
    """Contact detector settings shared by the batch and streaming detectors."""

    threshold_sigma: float = Field(3.0, gt=0)
    zero_sigma_floor_lsb: float = Field(2.0, gt=0)
    smoothing_alpha: float = Field(0.5, gt=0, le=1)
    calibration_samples: int = Field(120, ge=100)
    tolerance_ms: float = Field(5.0, gt=0)


class KernelParams(StrictModel):
    """Hyperparameters of the SMO-trained kernel machines."""

    c_penalty: float = Field(10.0, gt=0)
    gamma: Optional[float] = Field(None, gt=0)
    epsilon: float = Field(0.5, ge=0)
    tol: float = Field(1e-3, gt=0)
    max_passes: int = Field(10_000, ge=1)


class ConvSpec(StrictModel):
    """Shape of the compact 1-D convolutional network."""

    input_len: int = Field(74, ge=8)
    channels: List[int] = Field(default_factory=lambda: [8, 16])
    kernel_lens: List[int] = Field(default_factory=lambda: [7, 5])
    pool: int = Field(2, ge=1)
    hidden: int = Field(32, ge=0)
    head: Literal["scalar", "softmax"] = "scalar"
    linear_skip: bool = True
    n_classes: int = Field(5, ge=2)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_blocks(self) -> "ConvSpec":
        if len(self.channels) != len(self.kernel_lens) or not self.channels:
            raise ValueError("channels and kernel_lens must be non-empty and equally long")
        return self


class TrainSchedule(StrictModel):
    """Adam + step learning-rate schedule for the convolutional network."""

    lr0: float = Field(0.001, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    epochs: int = Field(40, ge=1)
    step_size: int = Field(5, ge=1)
    lr_decay: float = Field(0.5, gt=0, le=1)
    batch_size: int = Field(32, ge=1)
    validation_fraction: float = Field(0.1, ge=0, lt=1)
    skip_ridge: float = Field(1e-3, ge=0)
    seed: int = Field(0, ge=0)

    def lr_at(self, epoch: int) -> float:
        """Learning rate in effect during a zero-based epoch."""
        return self.lr0 * self.lr_decay ** (epoch // self.step_size)


# ---------------------------------------------------------------------------
# CLI run configuration
# ---------------------------------------------------------------------------


class SynthSection(StrictModel):
    preset: Literal["paper-blocks", "real-objects", "custom"] = "paper-blocks"
    labels: List[float] = Field(default_factory=lambda: list(PAPER_BLOCK_SHORE))
    pinches_per_label: int = Field(500, ge=1)
    bursts_per_trace: int = Field(0, ge=0)
    burst_sigma: float = Field(4.0, gt=0)
    out_dir: Optional[str] = None
    synth: SynthConfig = Field(default_factory=SynthConfig)


class TrainSection(StrictModel):
    dataset: str = "data/paper-blocks"
    model: Literal["svc", "svr", "conv-clf", "conv-reg", "contact-svm"] = "svr"
    out: str = "models/model.json"
    kernel: KernelParams = Field(default_factory=KernelParams)
    grid_search: bool = False
    conv: ConvSpec = Field(default_factory=ConvSpec)
    schedule: TrainSchedule = Field(default_factory=TrainSchedule)
    detection_traces: int = Field(2000, ge=1)
    window_offsets: List[int] = Field(default_factory=lambda: [0])
    validation_fraction: float = Field(0.1, ge=0, lt=1)


class EvalSection(StrictModel):
    dataset: str = "data/real-objects"
    model: str = "models/model.json"
    split: Literal["validation", "all"] = "all"
    out_dir: str = "reports"
    rmse_limit: Optional[float] = Field(None, gt=0)
    accuracy_limit: Optional[float] = Field(None, gt=0, le=1)


class StreamSection(StrictModel):
    dataset: str = "data/paper-blocks"
    model: str = "models/model.json"
    detector: Literal["threshold", "svm"] = "threshold"
    detector_model: Optional[str] = None
    limit: Optional[int] = Field(None, ge=1)
    workers: int = Field(1, ge=1)
    paced: bool = False
    out: Optional[str] = None


class BenchSection(StrictModel):
    model: str = "models/model.json"
    n_trials: int = Field(1000, ge=1)
    float32: bool = False


class WireSection(StrictModel):
    dataset: str = "data/paper-blocks"
    trace_id: int = Field(0, ge=0)
    input: Optional[str] = None
    output: Optional[str] = None
    flips: int = Field(10, ge=0)
    chunk_size: int = Field(64, ge=1)


class RunConfig(StrictModel):
    """Top-level configuration consumed by every CLI subcommand."""

    format_version: str = FORMAT_VERSION
    seed: int = Field(7, ge=0, lt=2**64)
    adc: AdcSpec = Field(default_factory=AdcSpec)
    window: WindowSpec = Field(default_factory=WindowSpec)
    savgol: SavGolSpec = Field(default_factory=SavGolSpec)
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    synth: SynthSection = Field(default_factory=SynthSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    stream: StreamSection = Field(default_factory=StreamSection)
    bench: BenchSection = Field(default_factory=BenchSection)
    wire: WireSection = Field(default_factory=WireSection)


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """
    Apply dotted ``key=value`` overrides to a nested config dictionary.

    Args:
        data: Config dictionary, modified in place
        overrides: Items such as ``train.kernel.c_penalty=100``

    Returns:
        The updated dictionary
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override must look like key=value, got '{item}'")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override '{dotted}' descends into a non-section value")
        node[keys[-1]] = _parse_override_value(raw.strip())
    return data


def load_run_config(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> RunConfig:
    """
    Load a RunConfig from a JSON file with command-line overrides.

    Args:
        path: Config file; falls back to FIRSTCONTACT_CONFIG, then to built-in defaults
        overrides: Dotted ``key=value`` overrides applied after the file

    Returns:
        A validated RunConfig
    """
    load_dotenv()
    path = path or os.getenv("FIRSTCONTACT_CONFIG")
    data: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"Config file not found: {config_path}")
        try:
            data = json.loads(config_path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {config_path} is not valid JSON: {e}")
        logger.debug(f"Loaded config from {config_path}")
    apply_overrides(data, overrides or [])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}")


def config_hash(config: BaseModel) -> str:
    """SHA-256 of the canonical JSON dump of a config model."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
