import numpy as np
import pytest

from visland.geometry import CameraIntrinsics, Geometry, StateDomain
from visland.network import IDENTITY, RELU, Layer, LayeredReluNetwork


@pytest.fixture(scope="session")
def geo16():
    return Geometry()


@pytest.fixture(scope="session")
def geo8():
    return Geometry(camera=CameraIntrinsics(WP=8, HP=8))


@pytest.fixture(scope="session")
def domain():
    return StateDomain()


def random_net(rng, widths, scale=1.0):
    """Dense ReLU net with the given widths; the last layer is affine."""
    layers = []
    for k in range(len(widths) - 1):
        w = rng.normal(scale=scale / np.sqrt(widths[k]), size=(widths[k + 1], widths[k]))
        b = rng.normal(scale=0.3, size=widths[k + 1])
        act = IDENTITY if k == len(widths) - 2 else RELU
        layers.append(Layer(w, b, act))
    return LayeredReluNetwork(tuple(layers))


@pytest.fixture(scope="session")
def desk_ctx(tmp_path_factory):
    """Desk-scale scenario (q = 8) with its trained controller, cached per session."""
    from visland.config import builtin_config
    from visland.pipeline import Context
    return Context(builtin_config("desk"), str(tmp_path_factory.mktemp("desk")))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
