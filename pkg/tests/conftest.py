import numpy as np
import pytest

from frappe_kit.body_model import make_biped_model, make_toy_model


@pytest.fixture(scope="session")
def toy_model():
    return make_toy_model(6, 32, 0)


@pytest.fixture(scope="session")
def biped():
    return make_biped_model()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng) -> np.ndarray:
    """Uniform-ish random rotation from a random axis-angle."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    from scipy.spatial.transform import Rotation

    return Rotation.from_rotvec(axis * angle).as_matrix()
