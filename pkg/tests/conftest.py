from pathlib import Path

import pytest

from aerialdet.dataset import visdrone_label_tree
from aerialdet.synth import toy_label_tree

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def visdrone_dir() -> Path:
    return FIXTURES / "visdrone"


@pytest.fixture
def coco_file() -> Path:
    return FIXTURES / "coco_equivalent.json"


@pytest.fixture
def vis_tree():
    return visdrone_label_tree()


@pytest.fixture
def toy_tree():
    return toy_label_tree()
