import numpy as np
import pytest

from woundseg.harness.space import DETECTION_SPACE, SEGMENTATION_SPACE, HyperSpace, sample_hyperparams


def test_segmentation_lr_within_range():
    rng = np.random.default_rng(0)
    lrs = [sample_hyperparams(SEGMENTATION_SPACE, rng)["initial_lr"] for _ in range(10_000)]
    assert all(3e-5 < v < 3e-2 for v in lrs)


@pytest.mark.parametrize("space", [SEGMENTATION_SPACE, DETECTION_SPACE], ids=lambda s: s.name)
def test_samples_stay_inside_space(space):
    rng = np.random.default_rng(1)
    assert all(space.contains(sample_hyperparams(space, rng)) for _ in range(2000))


@pytest.mark.parametrize("space", [SEGMENTATION_SPACE, DETECTION_SPACE], ids=lambda s: s.name)
def test_batch_sizes_are_uniform(space):
    rng = np.random.default_rng(2)
    n = 10_000
    choices = space.discrete["batch_size"]
    counts = np.bincount([choices.index(sample_hyperparams(space, rng)["batch_size"]) for _ in range(n)],
                         minlength=len(choices))
    p = 1 / len(choices)
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_same_rng_state_same_sample():
    a = sample_hyperparams(DETECTION_SPACE, np.random.default_rng([5, 3]))
    b = sample_hyperparams(DETECTION_SPACE, np.random.default_rng([5, 3]))
    assert a == b and set(a) == {"batch_size", "initial_lr", "l2", "lr_decay", "momentum"}


def test_reference_ranges():
    assert SEGMENTATION_SPACE.discrete == {"batch_size": [4, 8, 16, 32], "weight_decay": [1e-4, 1e-5, 0.0],
                                           "lr_decay": [0.99, 0.97, 0.95, 0.93, 0.89]}
    assert DETECTION_SPACE.continuous == {"l2": (1e-6, 1e-3), "initial_lr": (3e-6, 3e-3)}


def test_detection_keys_map_to_train_fields():
    f = DETECTION_SPACE.to_train_fields({"l2": 1e-4, "momentum": 0.95, "batch_size": 8})
    assert f == {"weight_decay": 1e-4, "adam_beta1": 0.95, "batch_size": 8}


def test_empty_range_rejected():
    with pytest.raises(ValueError):
        HyperSpace("bad", continuous={"x": (1.0, 1.0)})
