"""
On-disk formats for datasets and trained models.

A dataset directory holds manifest.json, index.csv and one little-endian uint16
channel block per trace (row 0 piezo, rows 1-6 force). Models are JSON documents
whose floats are written with round-trip precision.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import Field, ValidationError

from .config import FORMAT_VERSION, ConvSpec, StrictModel, SynthConfig, WindowSpec
from .conv_net import ConvModel
from .dsp import dequantize, quantize
from .errors import DataError
from .kernel_machine import KernelModel, PairModel, Preprocessor
from .signal_synth import N_FORCE_CHANNELS, GraspTrace, StiffnessLabel

logger = logging.getLogger(__name__)

CHANNEL_DTYPE = np.dtype("<u2")
INDEX_COLUMNS = [
    "trace_id",
    "file",
    "n_samples",
    "t_contact1",
    "t_contact2",
    "shore_a",
    "object_name",
    "amp_scale",
    "damping_scale",
    "gap_ms",
    "bursts",
]


class LabelEntry(StrictModel):
    shore_a: float
    object_name: Optional[str] = None


class DatasetManifest(StrictModel):
    """Everything needed to regenerate a dataset with the same code version."""

    format_version: str = FORMAT_VERSION
    preset: str
    seed: int
    synth: SynthConfig
    labels: List[LabelEntry]
    pinches_per_label: int
    n_traces: int
    bursts_per_trace: int = 0
    burst_sigma: float = 4.0
    window_samples: Dict[str, int] = Field(default_factory=dict)
    generator: str = f"firstcontact {FORMAT_VERSION}"


def _trace_file(trace_id: int) -> str:
    return f"traces/trace_{trace_id:05d}.bin"


def save_dataset(directory: Union[str, Path], manifest: DatasetManifest, traces: List[GraspTrace]) -> Path:
    """
    Write a dataset directory. Output is byte-identical for identical inputs.

    Args:
        directory: Target directory (created if missing)
        manifest: Dataset description
        traces: Traces to store

    Returns:
        The directory path
    """
    root = Path(directory)
    (root / "traces").mkdir(parents=True, exist_ok=True)
    adc = manifest.synth.adc
    rows = []
    for trace in traces:
        block = np.vstack([quantize(trace.vibration, adc)[None, :], quantize(trace.force, adc)])
        name = _trace_file(trace.trace_id)
        (root / name).write_bytes(block.astype(CHANNEL_DTYPE).tobytes(order="C"))
        rows.append(
            {
                "trace_id": trace.trace_id,
                "file": name,
                "n_samples": trace.n_samples,
                "t_contact1": trace.t_contact1,
                "t_contact2": trace.t_contact2,
                "shore_a": trace.label.shore_a,
                "object_name": trace.label.object_name or "",
                "amp_scale": trace.meta.get("amp_scale", 1.0),
                "damping_scale": trace.meta.get("damping_scale", 1.0),
                "gap_ms": trace.meta.get("gap_ms", trace.gap_ms),
                "bursts": int(trace.meta.get("bursts", 0)),
            }
        )
    pd.DataFrame(rows, columns=INDEX_COLUMNS).to_csv(root / "index.csv", index=False)
    (root / "manifest.json").write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    logger.info(f"Saved {len(traces)} traces to {root}")
    return root


def load_manifest(directory: Union[str, Path]) -> DatasetManifest:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DataError(f"No dataset manifest at {path}")
    try:
        manifest = DatasetManifest.model_validate_json(path.read_text())
    except ValidationError as e:
        raise DataError(f"Invalid dataset manifest {path}: {e}")
    if manifest.format_version != FORMAT_VERSION:
        raise DataError(f"Dataset format {manifest.format_version} is not supported (expected {FORMAT_VERSION})")
    return manifest


def load_dataset(directory: Union[str, Path]) -> Tuple[DatasetManifest, List[GraspTrace]]:
    """
    Read a dataset directory written by save_dataset.

    Raises:
        DataError: On a missing or inconsistent manifest, index or channel block
    """
    root = Path(directory)
    manifest = load_manifest(root)
    adc = manifest.synth.adc
    index_path = root / "index.csv"
    if not index_path.exists():
        raise DataError(f"No dataset index at {index_path}")
    index = pd.read_csv(index_path, keep_default_na=False)
    traces = []
    for row in index.itertuples(index=False):
        path = root / row.file
        if not path.exists():
            raise DataError(f"Missing channel block {path}")
        codes = np.frombuffer(path.read_bytes(), dtype=CHANNEL_DTYPE)
        if codes.size != (1 + N_FORCE_CHANNELS) * row.n_samples:
            expected = (1 + N_FORCE_CHANNELS) * row.n_samples
            raise DataError(f"Channel block {path} has {codes.size} codes, expected {expected}")
        block = codes.reshape(1 + N_FORCE_CHANNELS, row.n_samples).astype(np.int64)
        traces.append(
            GraspTrace(
                vibration=dequantize(block[0], adc),
                force=dequantize(block[1:], adc),
                t_contact1=int(row.t_contact1),
                t_contact2=int(row.t_contact2),
                label=StiffnessLabel(float(row.shore_a), str(row.object_name) or None),
                sample_rate_hz=manifest.synth.sample_rate_hz,
                trace_id=int(row.trace_id),
                meta={
                    "amp_scale": float(row.amp_scale),
                    "damping_scale": float(row.damping_scale),
                    "gap_ms": float(row.gap_ms),
                    "bursts": float(row.bursts),
                },
            )
        )
    if len(traces) != manifest.n_traces:
        raise DataError(f"Index lists {len(traces)} traces, manifest says {manifest.n_traces}")
    logger.info(f"Loaded {len(traces)} traces from {root}")
    return manifest, traces


def _kernel_to_dict(model: KernelModel) -> Dict[str, Any]:
    return {
        "family": "kernel",
        "kind": model.kind,
        "support_vectors": model.support_vectors.tolist(),
        "dual_coefs": model.dual_coefs.tolist(),
        "bias": model.bias,
        "gamma": model.gamma,
        "c_penalty": model.c_penalty,
        "preprocessor": asdict(model.preprocessor),
        "classes": model.classes,
        "pair_models": [asdict(p) for p in model.pair_models] if model.pair_models else None,
        "epsilon": model.epsilon,
        "objective": model.objective,
        "kkt_gap": model.kkt_gap,
    }


def _kernel_from_dict(data: Dict[str, Any]) -> KernelModel:
    pair_models = data.get("pair_models")
    return KernelModel(
        kind=data["kind"],
        support_vectors=np.array(data["support_vectors"], dtype=np.float64),
        dual_coefs=np.array(data["dual_coefs"], dtype=np.float64),
        bias=data["bias"],
        gamma=data["gamma"],
        c_penalty=data["c_penalty"],
        preprocessor=Preprocessor(**data["preprocessor"]),
        classes=data.get("classes"),
        pair_models=[PairModel(**p) for p in pair_models] if pair_models else None,
        epsilon=data.get("epsilon"),
        objective=data.get("objective"),
        kkt_gap=data.get("kkt_gap"),
    )


def _conv_to_dict(model: ConvModel) -> Dict[str, Any]:
    return {
        "family": "conv",
        "spec": model.spec.model_dump(mode="json"),
        "params": {name: {"shape": list(p.shape), "data": p.ravel().tolist()} for name, p in model.params.items()},
        "preprocessor": asdict(model.preprocessor),
        "target_mean": model.target_mean,
        "target_scale": model.target_scale,
        "classes": model.classes,
    }


def _conv_from_dict(data: Dict[str, Any]) -> ConvModel:
    return ConvModel(
        spec=ConvSpec.model_validate(data["spec"]),
        params={
            name: np.array(p["data"], dtype=np.float64).reshape(p["shape"]) for name, p in data["params"].items()
        },
        preprocessor=Preprocessor(**data["preprocessor"]),
        target_mean=data["target_mean"],
        target_scale=data["target_scale"],
        classes=data.get("classes"),
    )


def save_model(
    model: Union[KernelModel, ConvModel],
    path: Union[str, Path],
    window: WindowSpec,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a model, the window layout it expects and free-form metadata as JSON."""
    payload = _conv_to_dict(model) if isinstance(model, ConvModel) else _kernel_to_dict(model)
    document = {
        "format_version": FORMAT_VERSION,
        "window": window.model_dump(mode="json"),
        "metadata": metadata or {},
        "model": payload,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True))
    logger.info(f"Saved {payload['family']} model to {path}")
    return path


def load_model(path: Union[str, Path]) -> Tuple[Union[KernelModel, ConvModel], WindowSpec, Dict[str, Any]]:
    """
    Read a model written by save_model.

    Returns:
        (model, window layout, metadata)
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Model file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"Model file {path} is not valid JSON: {e}")
    if document.get("format_version") != FORMAT_VERSION:
        raise DataError(f"Model format {document.get('format_version')} is not supported (expected {FORMAT_VERSION})")
    payload = document["model"]
    family = payload.get("family")
    if family == "kernel":
        model = _kernel_from_dict(payload)
    elif family == "conv":
        model = _conv_from_dict(payload)
    else:
        raise DataError(f"Unknown model family '{family}' in {path}")
    return model, WindowSpec.model_validate(document["window"]), document.get("metadata", {})
