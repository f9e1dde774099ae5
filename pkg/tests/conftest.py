import pytest

from changedet.config import RunConfig
from changedet.synth import generate_dataset

# toy profile shared by the training-path tests: small model, 32px patches
TOY_MODEL = dict(channels=16, base_width=8, crop_size=32)


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory):
    """A small but complete dataset: 32/8/8 patches of 32px per split."""
    root = tmp_path_factory.mktemp("dataset")
    generate_dataset(root, seed=100, sources_per_split={"train": 8, "val": 2, "test": 2},
                     source_size=64, patch=32, difficulty="easy")
    return root


@pytest.fixture()
def toy_config(tiny_data_dir):
    return RunConfig(**TOY_MODEL, data_dir=str(tiny_data_dir), epochs=2,
                     batch_size=4, seed=0, run_name="toy")
