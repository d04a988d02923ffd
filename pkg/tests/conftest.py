import numpy as np
import pytest

from ftmcal.core import ApKind, ApNode, Point2, Scene
from ftmcal.simulator import DistortionModel, office_scene, simulate_dataset

IDENTITY = DistortionModel((0.0, 1.0, 0.0), noise_sigma=0.0, burst_size=8, range_limit=40.0)


@pytest.fixture
def office():
    return office_scene()


@pytest.fixture
def square_scene():
    """10 x 10 m room, anchors on three corners, one unknown AP."""
    aps = (
        ApNode("A", ApKind.ANCHOR, Point2(0.0, 0.0)),
        ApNode("B", ApKind.ANCHOR, Point2(10.0, 0.0)),
        ApNode("C", ApKind.ANCHOR, Point2(10.0, 10.0)),
        ApNode("D", ApKind.ANCHOR, Point2(0.0, 10.0)),
        ApNode("U", ApKind.UNKNOWN, Point2(4.0, 6.0)),
    )
    return Scene(10.0, 10.0, aps)


@pytest.fixture
def noiseless_office(office):
    tracks, truth = simulate_dataset(office, IDENTITY, devices=2, duration_steps=80, seed=3)
    return office, tracks, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
