import numpy as np
import pytest

from src.config import PAPER_BLOCK_SHORE, SynthConfig
from src.dsp import exp_smooth, quantize, savgol
from src.evaluation import contact_gap_summary, force_silence_check, peak_response_table
from src.signal_synth import draw_contact_gap, make_dataset, make_rng, paper_block_labels


@pytest.fixture(scope="module")
def cfg():
    return SynthConfig()


def test_gap_draws_match_reported_statistics(cfg):
    """Test that 10,000 gap draws keep the reported mean and spread."""
    rng = make_rng(2024)
    gaps = np.array([draw_contact_gap(cfg, rng) for _ in range(10_000)])
    assert abs(gaps.mean() - 16.65) <= 0.5
    assert abs(gaps.std(ddof=1) - 10.35) <= 0.5
    assert gaps.min() >= cfg.delta_min_ms


@pytest.mark.slow
def test_synthesized_corpus_gap_statistics(cfg):
    """Test gap statistics over a 10,000-trace corpus."""
    traces = make_dataset(cfg, paper_block_labels(), 2000, make_rng(11))
    summary = contact_gap_summary(traces)
    assert summary["n"] == 10_000
    assert abs(summary["mean_ms"] - 16.65) <= 0.5
    assert abs(summary["std_ms"] - 10.35) <= 0.5
    assert sum(summary["histogram"]["counts"]) == 10_000


def test_force_is_silent_until_second_contact(cfg):
    """Test that no force channel moves before the second contact."""
    traces = make_dataset(cfg, paper_block_labels(), 40, make_rng(5))
    check = force_silence_check(traces, cfg.noise_std_v)
    assert check["max_deviation_sigma"] <= 4.0


def test_peak_response_increases_with_stiffness():
    """Test that the mean transient peak rises block by block."""
    quiet = SynthConfig(noise_std_v=0.0, delta_std_ms=0.0, amp_jitter_sigma=0.0, damping_jitter=0.0)
    table = peak_response_table(make_dataset(quiet, paper_block_labels(), 3, make_rng(8)))
    assert table["shore_a"].tolist() == list(PAPER_BLOCK_SHORE)
    assert table["peak_mean_v"].diff().dropna().gt(0).all()


def test_filter_identities(cfg):
    """Test the smoothing, Savitzky-Golay and quantization identities."""
    t = np.linspace(-1.0, 1.0, 201)
    cubic = 0.3 - 1.2 * t + 0.5 * t**2 + 2.0 * t**3
    np.testing.assert_allclose(savgol(cubic), cubic, atol=1e-9)

    n = np.arange(30)
    step = exp_smooth(np.concatenate([[0.0], np.ones(30)]))[1:]
    np.testing.assert_array_equal(step, 1.0 - 0.5 ** (n + 1))

    assert int(quantize(1.65, cfg.adc)) == 512
