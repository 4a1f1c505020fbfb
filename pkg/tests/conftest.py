"""Define dynamic test fixtures."""
import numpy as np
import pytest

from deeper_fcdd.backbone import BackboneSpec, build
from deeper_fcdd.config import RunConfig
from deeper_fcdd.dataset import split
from deeper_fcdd.synthetic import SyntheticSpec, synth

from .common import load_json_fixture

TINY_BACKBONE = {
    "name": "tiny",
    "input_size": [16, 16],
    "layers": [
        {"kind": "conv2d", "out_channels": 4, "kernel_size": 3, "padding": 1},
        {"kind": "leaky_relu"},
        {"kind": "max_pool2d", "kernel_size": 2},
        {"kind": "conv2d", "out_channels": 4, "kernel_size": 3, "padding": 1},
        {"kind": "leaky_relu"},
        {"kind": "max_pool2d", "kernel_size": 2},
    ],
}


@pytest.fixture(name="backbone")
def backbone_fixture(tiny_spec):
    """Return a seeded float64 backbone over 16x16 inputs."""
    return build(tiny_spec, seed=7)


@pytest.fixture(name="config")
def config_fixture(tmp_path):
    """Return a config for quick runs on the tiny corpus."""
    return RunConfig(
        backbone=TINY_BACKBONE,
        input_size=(16, 16),
        batch_size=8,
        epochs=2,
        lr=1e-3,
        seed=3,
        deterministic=True,
        output_dir=str(tmp_path / "run"),
        histogram_bins=5,
    )


@pytest.fixture(name="corpus")
def corpus_fixture(tmp_path, synthetic_spec):
    """Return the manifest of a freshly written tiny synthetic corpus."""
    return synth(synthetic_spec, tmp_path / "data")


@pytest.fixture(name="render_golden", scope="session")
def render_golden_fixture():
    """Load the hand-computed rendering fixture."""
    return load_json_fixture("render_golden.json")


@pytest.fixture(name="rng")
def rng_fixture():
    """Return a seeded random generator."""
    return np.random.default_rng(20240601)


@pytest.fixture(name="split_corpus")
def split_corpus_fixture(corpus):
    """Return the tiny corpus split 65:15:20."""
    return split(corpus, seed=3)


@pytest.fixture(name="synthetic_spec")
def synthetic_spec_fixture():
    """Return a tiny two-class synthetic corpus spec."""
    return SyntheticSpec(
        n_normal=12,
        n_anomalous=8,
        image_size=(16, 16),
        blob_count=(1, 2),
        blob_radius=(2.0, 4.0),
        seed=11,
        class_names=("fire", "flood"),
    )


@pytest.fixture(name="tiny_spec")
def tiny_spec_fixture():
    """Return a two-block backbone spec over 16x16 inputs."""
    return BackboneSpec.from_dict(TINY_BACKBONE)
