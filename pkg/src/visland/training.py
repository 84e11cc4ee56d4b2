"""Behavioral cloning of a scripted glide-slope pitch law into an image-based ReLU controller."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .network import IDENTITY, RELU, Layer, LayeredReluNetwork

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TeacherParams:
    """u = -k1 (theta - theta_ref), theta_ref = atan(y / z), clipped to +-u_max."""
    k1: float = 1.0
    u_max: float = 1.0


def teacher_control(states, tp=TeacherParams()):
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    theta_ref = np.arctan2(s[:, 2], s[:, 3])
    return np.clip(-tp.k1 * (s[:, 0] - theta_ref), -tp.u_max, tp.u_max)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainSpec:
    hidden: tuple = (128, 128)
    samples: int = 8000
    epochs: int = 60
    batch: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-5
    seed: int = 0


def make_dataset(geometry, domain, n, rng, tp=TeacherParams()):
    """(images flattened pixel-major, teacher controls, states)."""
    states = domain.sample(rng, n)
    images = geometry.render_batch(states).reshape(n, -1).astype(np.float64)
    return images, teacher_control(states, tp), states


def _torch_model(d_in, hidden):
    import torch.nn as nn
    mods, w = [], d_in
    for h in hidden:
        mods += [nn.Linear(w, h), nn.ReLU()]
        w = h
    mods.append(nn.Linear(w, 1))
    return nn.Sequential(*mods).double()


def to_network(model, y_mean=0.0, y_scale=1.0):
    """Float64 ReLU network; the target standardization is folded into the last layer."""
    import torch.nn as nn
    lin = [m for m in model if isinstance(m, nn.Linear)]
    layers = []
    for k, m in enumerate(lin):
        w = m.weight.detach().numpy().copy()
        b = m.bias.detach().numpy().copy()
        act = RELU
        if k == len(lin) - 1:
            w, b, act = w * y_scale, b * y_scale + y_mean, IDENTITY
        layers.append(Layer(w, b, act))
    return LayeredReluNetwork(tuple(layers))


def train_controller_bc(geometry, domain, spec=TrainSpec(), tp=TeacherParams()):
    """Train a ReLU controller on (image, teacher control) pairs.

    Deterministic for a given seed: data come from a seeded numpy
    generator, torch runs single-threaded with deterministic kernels.
    """
    import torch

    torch.manual_seed(spec.seed)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    rng = np.random.default_rng(spec.seed)
    x, y, _ = make_dataset(geometry, domain, spec.samples, rng, tp)
    model = _torch_model(x.shape[1], spec.hidden)
    opt = torch.optim.Adam(model.parameters(), lr=spec.lr, weight_decay=spec.weight_decay)
    xt = torch.from_numpy(x)
    y_mean, y_scale = float(y.mean()), float(y.std()) or 1.0
    yt = torch.from_numpy((y - y_mean) / y_scale)[:, None]
    gen = torch.Generator().manual_seed(spec.seed)
    for epoch in range(spec.epochs):
        perm = torch.randperm(len(xt), generator=gen)
        total = 0.0
        for s in range(0, len(xt), spec.batch):
            idx = perm[s:s + spec.batch]
            opt.zero_grad()
            loss = torch.mean((model(xt[idx]) - yt[idx]) ** 2)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"loss is {loss.item()} at epoch {epoch}, batch starting {s} "
                    f"(lr {spec.lr}, target mean {y_mean:.4g}, scale {y_scale:.4g})")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        if epoch % 10 == 0 or epoch == spec.epochs - 1:
            log.info("epoch %d normalized mse %.3g", epoch, total / len(xt))
    if spec.epochs == 0:
        with torch.no_grad():
            init = torch.mean((model(xt) - yt) ** 2).item()
        log.info("zero epochs: initial normalized mse %.3g", init)
    return to_network(model, y_mean, y_scale)


def teacher_agreement(net, geometry, domain, n, rng, tol=0.1, tp=TeacherParams()):
    """Fraction of held-out samples where |net - teacher| <= tol."""
    from .network import evaluate
    x, y, _ = make_dataset(geometry, domain, n, rng, tp)
    pred = evaluate(net, x)[:, 0]
    return float(np.mean(np.abs(pred - y) <= tol))
