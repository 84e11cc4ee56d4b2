import logging

import numpy as np
import pytest

from visland.network import dumps, evaluate
from visland.training import (TeacherParams, TrainingDiverged, TrainSpec, make_dataset,
                              teacher_agreement, teacher_control, train_controller_bc)


def test_teacher_law():
    # theta_ref = atan(y / z); u = -k1 (theta - theta_ref), saturated
    s = np.array([[0.1, 0.0, 100.0, 1000.0], [0.9, 0.0, 0.0, 1000.0]])
    u = teacher_control(s, TeacherParams(k1=2.0, u_max=1.0))
    assert u[0] == pytest.approx(-2.0 * (0.1 - np.arctan(0.1)))
    assert u[1] == -1.0


def test_dataset_shapes(geo8, domain):
    x, y, s = make_dataset(geo8, domain, 50, np.random.default_rng(0))
    assert x.shape == (50, 64) and y.shape == (50,) and s.shape == (50, 4)
    assert set(np.unique(x)) <= {0.0, 1.0}


def test_zero_epochs_returns_initialized_net(geo8, domain, caplog):
    spec = TrainSpec(hidden=(8,), samples=64, epochs=0, seed=3)
    with caplog.at_level(logging.INFO, logger="visland.training"):
        net = train_controller_bc(geo8, domain, spec)
    assert net.input_dim == 64 and net.output_dim == 1
    assert "initial normalized mse" in caplog.text


def test_fixed_seed_is_deterministic(geo8, domain):
    spec = TrainSpec(hidden=(16, 16), samples=256, epochs=3, seed=11)
    a = train_controller_bc(geo8, domain, spec)
    b = train_controller_bc(geo8, domain, spec)
    assert dumps(a) == dumps(b)
    c = train_controller_bc(geo8, domain, TrainSpec(hidden=(16, 16), samples=256, epochs=3, seed=12))
    assert dumps(a) != dumps(c)


def test_divergence_raises(geo8, domain):
    spec = TrainSpec(hidden=(8,), samples=256, epochs=2, batch=64, lr=1e300)
    with pytest.raises(TrainingDiverged, match="epoch"):
        train_controller_bc(geo8, domain, spec)


def test_trained_controller_tracks_teacher(desk_ctx):
    net = desk_ctx.controller
    assert [layer.out_dim for layer in net.layers] == [128, 128, 1]
    agree = teacher_agreement(net, desk_ctx.geometry, desk_ctx.domain, 2000,
                              np.random.default_rng(99), tp=desk_ctx.teacher)
    assert agree >= 0.9
