import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))


def coco_doc(images, annotations, categories):
    return {"images": images, "annotations": annotations, "categories": categories}


@pytest.fixture
def small_coco():
    """3 images, 5 annotations, 2 categories with non-contiguous ids."""
    return coco_doc(
        images=[
            {"id": 1, "file_name": "a.png", "width": 200, "height": 160},
            {"id": 2, "file_name": "b.png", "width": 300, "height": 300},
            {"id": 7, "file_name": "c.png", "width": 120, "height": 100},
        ],
        annotations=[
            {"id": 10, "image_id": 1, "category_id": 3, "bbox": [10, 20, 50, 40]},
            {"id": 11, "image_id": 1, "category_id": 9, "bbox": [100, 30, 60, 80]},
            {"id": 12, "image_id": 2, "category_id": 3, "bbox": [0, 0, 120, 90]},
            {"id": 13, "image_id": 2, "category_id": 9, "bbox": [150, 150, 100, 120]},
            {"id": 14, "image_id": 7, "category_id": 9, "bbox": [30, 20, 40, 50]},
        ],
        categories=[{"id": 3, "name": "Dog"}, {"id": 9, "name": "cat"}],
    )


@pytest.fixture
def coco_on_disk(tmp_path, small_coco):
    rng = np.random.default_rng(0)
    for im in small_coco["images"]:
        arr = rng.integers(0, 255, (im["height"], im["width"], 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / im["file_name"])
    path = tmp_path / "ann.json"
    path.write_text(json.dumps(small_coco))
    return path


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """The desk-scale corpus and a model trained on it (shared by slow tests)."""
    import time

    from boxgrade import desk
    from boxgrade.grader import Grader

    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    corpus = desk.build_corpus(root)
    result = desk.train_toy(corpus)
    elapsed = time.perf_counter() - t0
    grader = Grader.from_checkpoint(result.checkpoint)
    return {"corpus": corpus, "result": result, "grader": grader, "seconds": elapsed}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
