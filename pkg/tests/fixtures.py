"""Small synthetic inputs shared by the training and acceptance tests."""

import math

import numpy as np

from spatialcontrast.data import Dataset
from spatialcontrast.models import build_mnist_model
from spatialcontrast.ops import log_softmax_cross_entropy
from spatialcontrast.rng import make_rng
from spatialcontrast.sampler import SampleConfig
from spatialcontrast.tensor import Tensor, no_grad
from spatialcontrast.models import forward_full
from spatialcontrast.trainer import _grads, sc_loss, sgd_step

SC_TARGET = math.log(4) - 0.5


def grating_batch(n=4, side=28, amplitude=0.1, noise=0.2, period=6.0):
    """Faint oriented gratings (one angle per image) under pixel noise.

    The orientation is the only image identity, so two patches of one image
    agree only in their texture direction: solvable, but not on step 0.
    """
    rng = make_rng(1, "data")
    y, x = np.mgrid[0:side, 0:side].astype(np.float64)
    out = []
    for k in range(n):
        theta = k * math.pi / 4
        wave = 0.5 + amplitude * np.sin(2 * math.pi / period * (math.cos(theta) * x + math.sin(theta) * y))
        out.append(np.clip(wave + noise * rng.standard_normal((side, side)), 0, 1))
    return np.stack(out)[..., None].astype(np.float32)


def expected_sc_loss(model, images, draws=50, seed=99):
    """Mean SC loss over many sampler draws; removes single-draw noise."""
    rng = make_rng(seed, "probe")
    with no_grad():
        return float(np.mean([sc_loss(model, images, SampleConfig(), rng).item() for _ in range(draws)]))


def overfit_sc(steps=200, seed=0, lr=0.1, momentum=0.9):
    images = grating_batch()
    model = build_mnist_model(seed)
    trunk = model.parameters("trunk")
    velocity = {}
    rng = make_rng(seed, "sampler")
    before = expected_sc_loss(model, images)
    for _ in range(steps):
        model.zero_grad()
        sc_loss(model, images, SampleConfig(), rng).backward()
        sgd_step(trunk, _grads(trunk), lr, momentum, velocity)
    return before, expected_sc_loss(model, images)


def overfit_ce(steps=50, seed=0, lr=0.1, momentum=0.9):
    rng = make_rng(seed, "ce-batch")
    x = rng.random((8, 28, 28, 1)).astype(np.float32)
    y = np.arange(8) % 10
    model = build_mnist_model(seed)
    params = model.parameters()
    velocity = {}
    losses = []
    for _ in range(steps):
        model.zero_grad()
        loss = log_softmax_cross_entropy(forward_full(model, Tensor(x)), y)
        loss.backward()
        losses.append(loss.item())
        sgd_step(params, _grads(params), lr, momentum, velocity)
    with no_grad():
        final = log_softmax_cross_entropy(forward_full(model, Tensor(x)), y).item()
    return losses[0], final


def tiny_unlabeled(n=16, seed=0):
    rng = make_rng(seed, "tiny")
    return Dataset(rng.random((n, 28, 28, 1)).astype(np.float32), None, "unlabeled")


def separable_two_class(n=64, seed=0):
    """Class 0: bright top half; class 1: bright bottom half."""
    rng = make_rng(seed, "two-class")
    labels = np.arange(n) % 2
    images = 0.1 * rng.random((n, 28, 28, 1)).astype(np.float32)
    for k, c in enumerate(labels):
        rows = slice(0, 14) if c == 0 else slice(14, 28)
        images[k, rows] += 0.8
    return Dataset(images, labels, "train")
