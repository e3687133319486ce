import os
import sys
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent / "FirstContact"))

from src.config import load_run_config  # noqa: E402
from src.errors import FirstContactError  # noqa: E402
from src.evaluation import contact_gap_summary, force_silence_check, peak_response_table  # noqa: E402
from src.persistence import DatasetManifest, LabelEntry, load_dataset, save_dataset  # noqa: E402
from src.signal_synth import make_dataset, make_rng, paper_block_labels, real_object_labels  # noqa: E402


def verify_distribution(directory: str):
    """Print the signal statistics a synthesized dataset is expected to reproduce"""
    manifest, traces = load_dataset(directory)

    labels_df = pd.DataFrame(
        [{"Shore A": t.label.shore_a, "Object": t.label.object_name or "-"} for t in traces]
    ).value_counts().rename("Count").reset_index()

    gaps = contact_gap_summary(traces)
    gap_df = pd.DataFrame(
        [
            {"Statistic": "mean (ms)", "Observed": gaps["mean_ms"], "Configured": manifest.synth.delta_mean_ms},
            {"Statistic": "std (ms)", "Observed": gaps["std_ms"], "Configured": manifest.synth.delta_std_ms},
            {"Statistic": "min (ms)", "Observed": gaps["min_ms"], "Configured": manifest.synth.delta_min_ms},
        ]
    )
    silence = force_silence_check(traces, manifest.synth.noise_std_v)

    print("\n=== Label Distribution ===")
    print(labels_df.to_string(index=False))

    print("\n=== Contact Gap ===")
    print(gap_df.to_string(index=False))

    print("\n=== Peak First-Contact Response ===")
    print(peak_response_table(traces).to_string(index=False))

    print("\n=== Force Before Second Contact ===")
    print(f"max deviation {silence['max_deviation_v'] * 1000:.2f} mV ({silence['max_deviation_sigma']:.2f} sigma)")


def populate(directory: str, preset: str, pinches: int, seed: int):
    cfg = load_run_config().synth.synth.model_copy(update={"seed": seed})
    labels = real_object_labels() if preset == "real-objects" else paper_block_labels()
    traces = make_dataset(cfg, labels, pinches, make_rng(seed))
    manifest = DatasetManifest(
        preset=preset,
        seed=seed,
        synth=cfg,
        labels=[LabelEntry(shore_a=label.shore_a, object_name=label.object_name) for label in labels],
        pinches_per_label=pinches,
        n_traces=len(traces),
    )
    save_dataset(directory, manifest, traces)


def main():
    load_dotenv()

    preset = os.getenv("FIRSTCONTACT_PRESET", "paper-blocks")
    directory = os.getenv("FIRSTCONTACT_DATA_DIR", f"data/{preset}")
    try:
        print(f"Synthesizing {preset} into {directory}...")
        pinches = int(os.getenv("FIRSTCONTACT_PINCHES", "100"))
        populate(directory, preset, pinches, int(os.getenv("FIRSTCONTACT_SEED", "7")))
        print("✅ Dataset written")

        print("\nVerifying signal statistics...")
        verify_distribution(directory)
    except FirstContactError as e:
        print(f"❌ {e}")
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
