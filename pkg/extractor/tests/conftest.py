import pytest

from langfield.fixture import make_fixture


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Tiny trainer-generated scene: 3 train frames, 1 eval frame, full-size
    images so the default 7-level lattice fits."""
    out = tmp_path_factory.mktemp("ds") / "scene"
    return make_fixture(str(out), n_train=3, n_eval=1)
