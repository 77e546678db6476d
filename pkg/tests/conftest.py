import numpy as np
import pytest

from keyview.dataset_io import generate_synthetic_scene, load_blender_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_scene")
    generate_synthetic_scene(root, n_views=12, size=16, seed=3, n_test=2)
    return root


@pytest.fixture(scope="session")
def small_scene(small_scene_dir):
    return load_blender_scene(small_scene_dir, "train")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
