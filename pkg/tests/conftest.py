import numpy as np
import pytest
import torch

from posetransfer.keypoints import KeypointSet
from posetransfer.losses import FeatureExtractor
from posetransfer.synthetic import make_dataset

# a plausible upright pose on a 256 grid, every joint present
UPRIGHT_256 = np.array(
    [
        [128, 40], [128, 70], [100, 74], [90, 110], [84, 142], [156, 74], [166, 110], [172, 142],
        [112, 150], [110, 196], [108, 240], [144, 150], [146, 196], [148, 240],
        [122, 34], [134, 34], [116, 38], [140, 38],
    ],
    dtype=np.float64,
)


def full_keypoints(level: int) -> KeypointSet:
    pts = np.column_stack([UPRIGHT_256 * (level / 256.0), np.ones(18)])
    return KeypointSet(pts, (level, level))


@pytest.fixture
def upright():
    return full_keypoints


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    """Two subjects with three frames each, 128 px source images."""
    return make_dataset(tmp_path_factory.mktemp("toy"), subjects=2, frames=3, size=128, seed=3)


@pytest.fixture(scope="session")
def small_fx():
    """Cheap two-tap extractor for mechanics tests."""
    return FeatureExtractor(taps=("pixel", "relu1_2"), seed=0)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
