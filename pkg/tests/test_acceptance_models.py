import numpy as np
import pytest

from src.config import ConvSpec, SynthConfig, TrainSchedule, WindowSpec
from src.conv_net import train_conv
from src.evaluation import evaluate, split_holdout, stiffness_windows
from src.kernel_machine import train_svc, train_svr
from src.pipeline import bench_inference
from src.signal_synth import make_dataset, make_rng, paper_block_labels, real_object_labels

pytestmark = pytest.mark.slow

SPEC = WindowSpec()


@pytest.fixture(scope="module")
def blocks():
    return make_dataset(SynthConfig(seed=7), paper_block_labels(), 500, make_rng(7))


@pytest.fixture(scope="module")
def split(blocks):
    train_idx, val_idx = split_holdout(len(blocks), 0.1, seed=7)
    train = [blocks[i] for i in train_idx]
    windows, targets, _ = stiffness_windows(train, SPEC)
    return windows, targets, [blocks[i] for i in val_idx]


@pytest.fixture(scope="module")
def real_objects():
    return make_dataset(SynthConfig(seed=8), real_object_labels(), 20, make_rng(8))


@pytest.fixture(scope="module")
def regressors(split):
    windows, targets, _ = split
    svr = train_svr(windows, targets, c_penalty=100.0, epsilon=0.5)
    conv, history = train_conv(windows, targets, ConvSpec(head="scalar"), TrainSchedule(epochs=40))
    return {"svr": svr, "conv": conv, "conv_history": history}


def test_kernel_classifier_discriminates_blocks(split):
    """Test that the kernel classifier separates the five blocks."""
    windows, targets, validation = split
    report = evaluate(train_svc(windows, targets, c_penalty=10.0), validation, SPEC)
    assert report.n_samples == 250
    assert report.accuracy >= 0.95
    assert int(report.confusion.to_numpy().sum()) == 250


def test_conv_classifier_discriminates_blocks(split):
    """Test that the softmax network separates the five blocks."""
    windows, targets, validation = split
    model, history = train_conv(windows, targets, ConvSpec(head="softmax"), TrainSchedule(epochs=40))
    assert history.train_loss[-1] < history.train_loss[0]
    report = evaluate(model, validation, SPEC)
    assert report.accuracy >= 0.95


@pytest.mark.parametrize("name", ["svr", "conv"])
def test_regressors_generalize_to_unseen_objects(regressors, real_objects, name):
    """Test that both regressors stay within 4 Shore A RMSE on unseen objects."""
    report = evaluate(regressors[name], real_objects, SPEC)
    assert report.task == "regression"
    assert len(report.per_object) == 8
    assert report.rmse_shore <= 4.0


def test_conv_regressor_fits_block_holdout(regressors, split):
    """Test that 40 epochs on the block corpus reach a validation MSE of 4 or better."""
    _, _, validation = split
    report = evaluate(regressors["conv"], validation, SPEC)
    assert report.n_samples == 250
    assert report.mse_shore <= 4.0


def test_conv_training_loss_trailing_average_never_rises(regressors):
    """Test that the 5-epoch trailing average of the training loss is non-increasing."""
    losses = np.array(regressors["conv_history"].train_loss)
    assert len(losses) == 40
    trailing = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(trailing) <= 1e-9)


def test_inference_latency(regressors):
    """Test single-window inference latency for both regressors."""
    assert bench_inference(regressors["svr"], 1000)["mean_ms"] < 1.0
    assert bench_inference(regressors["conv"], 1000)["mean_ms"] < 1.5
