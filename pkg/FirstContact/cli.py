"""
FirstContact command-line interface.

Subcommands: synth, train, eval, stream, bench, wire. Every subcommand reads the
run configuration (JSON file plus --set overrides), writes machine-readable output
to stdout or files and logs to stderr.

Exit codes: 0 success, 1 unexpected error, 2 configuration error, 3 data error,
4 acceptance failure.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from src.config import FORMAT_VERSION, RunConfig, config_hash, load_run_config
from src.contact_detect import train_contact_svm
from src.conv_net import train_conv
from src.errors import AcceptanceError, DataError, FirstContactError
from src.evaluation import evaluate, split_holdout, stiffness_windows
from src.kernel_machine import KernelModel, grid_search, train_svc, train_svr
from src.persistence import DatasetManifest, LabelEntry, load_dataset, load_model, save_dataset, save_model
from src.pipeline import bench_inference, budget_consistency, make_detector_factory, run_corpus
from src.signal_synth import (
    StiffnessLabel,
    inject_bursts,
    make_dataset,
    make_rng,
    paper_block_labels,
    real_object_labels,
)
from src.wire_format import bundles_to_channels, fuzz_stream, parse_stream, stream_trace

logger = logging.getLogger("firstcontact")


def _emit(record: Dict[str, Any]):
    print(json.dumps(record, sort_keys=True))


def _stamp(cfg: RunConfig, record: Dict[str, Any]) -> Dict[str, Any]:
    return dict(record, format_version=FORMAT_VERSION, config_hash=config_hash(cfg))


def cmd_synth(cfg: RunConfig) -> Dict[str, Any]:
    section = cfg.synth
    if section.preset == "paper-blocks":
        labels = paper_block_labels()
    elif section.preset == "real-objects":
        labels = real_object_labels()
    else:
        labels = [StiffnessLabel(s) for s in section.labels]
    synth = section.synth.model_copy(update={"seed": cfg.seed})
    rng = make_rng(cfg.seed)
    traces = make_dataset(synth, labels, section.pinches_per_label, rng)
    if section.bursts_per_trace:
        traces = [inject_bursts(t, synth, section.bursts_per_trace, section.burst_sigma, rng) for t in traces]

    manifest = DatasetManifest(
        preset=section.preset,
        seed=cfg.seed,
        synth=synth,
        labels=[LabelEntry(shore_a=label.shore_a, object_name=label.object_name) for label in labels],
        pinches_per_label=section.pinches_per_label,
        n_traces=len(traces),
        bursts_per_trace=section.bursts_per_trace,
        burst_sigma=section.burst_sigma,
        window_samples={"detect": cfg.window.detect_samples, "stiffness": cfg.window.stiffness_samples},
    )
    out_dir = section.out_dir or f"data/{section.preset}"
    save_dataset(out_dir, manifest, traces)
    return _stamp(cfg, {"dataset": out_dir, "n_traces": len(traces), "preset": section.preset})


def cmd_train(cfg: RunConfig) -> Dict[str, Any]:
    section = cfg.train
    manifest, traces = load_dataset(section.dataset)
    metadata: Dict[str, Any] = {"config_hash": config_hash(cfg), "dataset_seed": manifest.seed, "model": section.model}
    log: Dict[str, Any] = {}

    if section.model == "contact-svm":
        detection_traces = traces[: section.detection_traces]
        model = train_contact_svm(
            detection_traces, cfg.window, cfg.detector, manifest.synth.adc, section.kernel, cfg.seed
        )
        metadata["role"] = "contact"
    else:
        train_idx, val_idx = split_holdout(len(traces), section.validation_fraction, cfg.seed)
        train_traces = [traces[i] for i in train_idx]
        metadata["role"] = "stiffness"
        metadata["validation_trace_ids"] = [traces[i].trace_id for i in val_idx]
        windows, targets, _ = stiffness_windows(train_traces, cfg.window, cfg.detector, section.window_offsets)
        if section.model in ("svc", "svr"):
            kind = "classifier" if section.model == "svc" else "regressor"
            params = section.kernel
            if section.grid_search:
                best, rows = grid_search(windows, targets, kind, params, cfg.seed)
                params = params.model_copy(update=best)
                log["grid_search"] = rows
            if kind == "classifier":
                model = train_svc(
                    windows, targets, params.c_penalty, params.gamma, cfg.seed, params.tol, params.max_passes
                )
            else:
                model = train_svr(
                    windows, targets, params.c_penalty, params.gamma, params.epsilon,
                    cfg.seed, params.tol, params.max_passes,
                )
        else:
            head = "softmax" if section.model == "conv-clf" else "scalar"
            spec = section.conv.model_copy(update={"head": head, "input_len": cfg.window.stiffness_samples})
            model, history = train_conv(windows, targets, spec, section.schedule)
            log["train_loss"] = history.train_loss
            log["val_loss"] = history.val_loss
            log["learning_rate"] = history.learning_rate

    save_model(model, section.out, cfg.window, metadata)
    log_path = Path(section.out).with_suffix(".train.json")
    log_path.write_text(json.dumps(_stamp(cfg, log), sort_keys=True))
    summary: Dict[str, Any] = {"model": section.out, "kind": section.model, "training_log": str(log_path)}
    if isinstance(model, KernelModel):
        summary["support_vectors"] = len(model.support_vectors)
    else:
        summary["parameters"] = model.n_parameters
    return _stamp(cfg, summary)


def cmd_eval(cfg: RunConfig) -> Dict[str, Any]:
    section = cfg.eval
    model, window, metadata = load_model(section.model)
    if metadata.get("role") == "contact":
        raise DataError(f"{section.model} is a contact detector, not a stiffness model")
    _, traces = load_dataset(section.dataset)
    if section.split == "validation":
        wanted = set(metadata.get("validation_trace_ids", []))
        if not wanted:
            raise DataError(f"Model {section.model} records no validation split")
        traces = [t for t in traces if t.trace_id in wanted]
    report = evaluate(model, traces, window, cfg.detector)

    out_dir = Path(section.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = _stamp(cfg, report.to_dict())
    (out_dir / "eval_report.json").write_text(json.dumps(record, sort_keys=True, indent=2))
    if report.confusion is not None:
        report.confusion.to_csv(out_dir / "confusion.csv")
    if report.task == "regression":
        report.per_object_frame().to_csv(out_dir / "per_object.csv", index=False)

    if section.rmse_limit is not None and report.rmse_shore is not None and report.rmse_shore > section.rmse_limit:
        raise AcceptanceError(f"RMSE {report.rmse_shore:.3f} exceeds the limit {section.rmse_limit}")
    if section.accuracy_limit is not None and report.accuracy is not None and report.accuracy < section.accuracy_limit:
        raise AcceptanceError(f"Accuracy {report.accuracy:.4f} is below the limit {section.accuracy_limit}")
    return record


def cmd_stream(cfg: RunConfig) -> Optional[Dict[str, Any]]:
    section = cfg.stream
    model, window, _ = load_model(section.model)
    manifest, traces = load_dataset(section.dataset)
    if section.limit:
        traces = traces[: section.limit]
    detector_model = None
    if section.detector == "svm":
        if not section.detector_model:
            raise DataError("stream.detector_model is required for the svm detector")
        detector_model, _, _ = load_model(section.detector_model)
    factory = make_detector_factory(section.detector, window, cfg.detector, manifest.synth.adc, detector_model)
    corpus = run_corpus(traces, factory, model, window, cfg.detector, section.workers, section.paced)

    summary = _stamp(cfg, corpus.summary())
    summary["budget_consistency"] = budget_consistency(corpus.reports, manifest.synth)
    lines = corpus.to_lines()
    if section.out:
        Path(section.out).parent.mkdir(parents=True, exist_ok=True)
        Path(section.out).write_text("\n".join(lines + [json.dumps({"summary": summary}, sort_keys=True)]) + "\n")
    else:
        for line in lines:
            print(line)
    return _stamp(cfg, {"summary": summary})


def cmd_bench(cfg: RunConfig) -> Dict[str, Any]:
    section = cfg.bench
    model, window, _ = load_model(section.model)
    if section.float32:
        model = model.as_float32()
    stats = bench_inference(model, section.n_trials, window.stiffness_samples, cfg.seed)
    return _stamp(cfg, {"model": section.model, "float32": section.float32, **stats})


def _read_input(path: Optional[str]) -> bytes:
    if path:
        if not Path(path).exists():
            raise DataError(f"Input file not found: {path}")
        return Path(path).read_bytes()
    return sys.stdin.buffer.read()


def _trace_bytes(cfg: RunConfig) -> bytes:
    manifest, traces = load_dataset(cfg.wire.dataset)
    matches = [t for t in traces if t.trace_id == cfg.wire.trace_id]
    if not matches:
        raise DataError(f"Trace {cfg.wire.trace_id} is not in {cfg.wire.dataset}")
    return stream_trace(matches[0], manifest.synth.adc)


def cmd_wire(cfg: RunConfig, action: str) -> Dict[str, Any]:
    section = cfg.wire
    if action == "encode":
        data = _trace_bytes(cfg)
        if section.output:
            Path(section.output).write_bytes(data)
        else:
            sys.stdout.buffer.write(data)
            sys.stdout.flush()
        return _stamp(cfg, {"bytes": len(data), "trace_id": section.trace_id})

    if action == "decode":
        state, bundles = parse_stream(_read_input(section.input), section.chunk_size)
        if section.output:
            frame = pd.DataFrame(
                [{"seq": b.seq, "timestamp_us": b.timestamp_us, "piezo": b.piezo,
                  **{f"force_{i}": c for i, c in enumerate(b.force)}} for b in bundles]
            )
            frame.to_csv(section.output, index=False)
        return _stamp(cfg, {"frames": len(bundles), "parser": state.counters()})

    original = _read_input(section.input) if section.input else _trace_bytes(cfg)
    corrupted, positions = fuzz_stream(original, section.flips, np.random.default_rng(cfg.seed))
    _, clean = parse_stream(original, section.chunk_size)
    state, bundles = parse_stream(corrupted, section.chunk_size)
    if section.output:
        Path(section.output).write_bytes(corrupted)
    vibration, _ = bundles_to_channels(bundles)
    return _stamp(
        cfg,
        {
            "flipped_offsets": positions,
            "frames_clean": len(clean),
            "frames_recovered": len(bundles),
            "frames_lost": len(clean) - len(bundles),
            "samples_recovered": int(len(vibration)),
            "parser": state.counters(),
        },
    )


def _flag_overrides(args: argparse.Namespace) -> List[str]:
    mapping = {
        "synth": {"preset": "synth.preset", "out": "synth.out_dir", "pinches": "synth.pinches_per_label",
                  "bursts": "synth.bursts_per_trace"},
        "train": {"dataset": "train.dataset", "model": "train.model", "out": "train.out"},
        "eval": {"dataset": "eval.dataset", "model": "eval.model", "split": "eval.split",
                 "out_dir": "eval.out_dir", "rmse_limit": "eval.rmse_limit",
                 "accuracy_limit": "eval.accuracy_limit"},
        "stream": {"dataset": "stream.dataset", "model": "stream.model", "detector": "stream.detector",
                   "detector_model": "stream.detector_model", "limit": "stream.limit",
                   "workers": "stream.workers", "out": "stream.out"},
        "bench": {"model": "bench.model", "trials": "bench.n_trials"},
        "wire": {"dataset": "wire.dataset", "trace_id": "wire.trace_id", "input": "wire.input",
                 "output": "wire.output", "flips": "wire.flips", "chunk_size": "wire.chunk_size"},
    }
    overrides = []
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    for flag, key in mapping.get(args.command, {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value) if not isinstance(value, str) else value}")
    if getattr(args, "grid_search", False):
        overrides.append("train.grid_search=true")
    if getattr(args, "paced", False):
        overrides.append("stream.paced=true")
    if getattr(args, "float32", False):
        overrides.append("bench.float32=true")
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="firstcontact", description="Stiffness from the first contact of a pinch grasp"
    )
    parser.add_argument("--config", help="JSON run configuration (default: $FIRSTCONTACT_CONFIG)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Dotted config override")
    parser.add_argument("--seed", type=int, help="Run seed")
    parser.add_argument("--log-level", help="Logging level (default: $FIRSTCONTACT_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic grasp dataset")
    synth.add_argument("--preset", choices=["paper-blocks", "real-objects", "custom"])
    synth.add_argument("--out")
    synth.add_argument("--pinches", type=int)
    synth.add_argument("--bursts", type=int)

    train = sub.add_parser("train", help="Train a stiffness or contact model")
    train.add_argument("--dataset")
    train.add_argument("--model", choices=["svc", "svr", "conv-clf", "conv-reg", "contact-svm"])
    train.add_argument("--out")
    train.add_argument("--grid-search", action="store_true")

    ev = sub.add_parser("eval", help="Evaluate a stiffness model")
    ev.add_argument("--dataset")
    ev.add_argument("--model")
    ev.add_argument("--split", choices=["validation", "all"])
    ev.add_argument("--out-dir")
    ev.add_argument("--rmse-limit", type=float)
    ev.add_argument("--accuracy-limit", type=float)

    stream = sub.add_parser("stream", help="Replay grasps through the real-time pipeline")
    stream.add_argument("--dataset")
    stream.add_argument("--model")
    stream.add_argument("--detector", choices=["threshold", "svm"])
    stream.add_argument("--detector-model")
    stream.add_argument("--limit", type=int)
    stream.add_argument("--workers", type=int)
    stream.add_argument("--paced", action="store_true")
    stream.add_argument("--out")

    bench = sub.add_parser("bench", help="Benchmark single-window inference")
    bench.add_argument("--model")
    bench.add_argument("--trials", type=int)
    bench.add_argument("--float32", action="store_true")

    wire = sub.add_parser("wire", help="Serial frame tools")
    wire.add_argument("action", choices=["encode", "decode", "fuzz"])
    wire.add_argument("--dataset")
    wire.add_argument("--trace-id", type=int)
    wire.add_argument("--input")
    wire.add_argument("--output")
    wire.add_argument("--flips", type=int)
    wire.add_argument("--chunk-size", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("FIRSTCONTACT_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s %(message)s")

    try:
        cfg = load_run_config(args.config, list(args.set) + _flag_overrides(args))
        if args.command == "synth":
            result = cmd_synth(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "eval":
            result = cmd_eval(cfg)
        elif args.command == "stream":
            result = cmd_stream(cfg)
        elif args.command == "bench":
            result = cmd_bench(cfg)
        else:
            result = cmd_wire(cfg, args.action)
        if result is not None and not (args.command == "wire" and args.action == "encode" and not cfg.wire.output):
            _emit(result)
        return 0
    except FirstContactError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception:
        logger.exception("Unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
