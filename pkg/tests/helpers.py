"""Finite-difference gradient checks shared by the unit and acceptance suites."""

import math

import numpy as np

from dpanon import autoencoder as ae
from dpanon import bn
from dpanon.dp_core import laplace_noise, make_rng

STEP = 1e-5
# gradients smaller than this are compared in absolute terms
GRAD_FLOOR = 1e-6
KINK_MARGIN = 1e-3


def max_relative_error(params, loss_fn, analytic):
    """Worst central-difference relative error over every entry of every parameter."""
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + STEP
            up = loss_fn()
            flat[i] = old - STEP
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2 * STEP)
            err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), GRAD_FLOOR)
            worst = max(worst, err)
    return worst


def autoencoder_instance(seed, channels=2, K=12, epsilon=50.0):
    """(model, z, noise) with the noisy latent kept away from the clip boundaries.

    Central differences are only valid where the loss is smooth; a draw whose
    noisy latent sits within KINK_MARGIN of 0 or 1 is redrawn.
    """
    for attempt in range(100):
        rng = make_rng(seed, stream=500 + attempt)
        model = ae.PitchAutoencoder.init(channels, 3, epsilon, seed=seed * 1000 + attempt)
        for layer in model.layers:
            layer.kernel += rng.normal(0, 0.5, layer.kernel.shape)
        z = rng.normal(size=K)
        h = ae.encode(model, z)
        noise = laplace_noise(0.3, h.shape, rng)
        m = h + noise
        if np.min(np.abs(m)) > KINK_MARGIN and np.min(np.abs(m - 1)) > KINK_MARGIN:
            return model, z, noise
    raise RuntimeError("could not draw a smooth instance")


def bn_instance(seed, K=8, A=4, M=5, classes=3, noisy=True):
    """(model, O, labels, noise) with every pre-normalization entry away from 0."""
    for attempt in range(100):
        rng = make_rng(seed, stream=700 + attempt)
        model = bn.AcousticModel.init(input_dim=A, bn_dim=M, num_classes=classes, hidden=4, width=3,
                                      classifier_hidden=4, context=3, seed=seed * 1000 + attempt)
        O = rng.normal(size=(K, A))
        labels = rng.integers(0, classes, K)
        B = bn.extract_bn(model, O)
        noise = laplace_noise(0.5, B.shape, rng) if noisy else None
        v = bn.norm1(B) + (noise if noisy else 0.0)
        if np.min(np.abs(B)) > KINK_MARGIN and np.min(np.abs(v)) > KINK_MARGIN:
            return model, O, labels, noise
    raise RuntimeError("could not draw a smooth instance")


def autoencoder_gradient_error(seed):
    model, z, noise = autoencoder_instance(seed)
    _, grads = ae.loss_gradient(model, z, noise)
    return max_relative_error(model.parameters(), lambda: ae.loss_gradient(model, z, noise)[0], grads)


def bn_gradient_error(seed, noisy=True):
    model, O, labels, noise = bn_instance(seed, noisy=noisy)
    _, grads = bn.loss_gradient(model, O, labels, noise)
    return max_relative_error(model.parameters(), lambda: bn.loss_gradient(model, O, labels, noise)[0],
                              grads)
