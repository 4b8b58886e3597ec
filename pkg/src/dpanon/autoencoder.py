"""Convolutional pitch autoencoder with a Laplace noise layer on its sigmoid latent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dp_core import laplace_noise, make_rng, sigmoid_encoder_sensitivity
from .errors import CalibrationError, DataError, DegenerateInputError
from .pitch import PitchStats, normalize, pitch_convert, reinsert_zeros, remove_zeros

DEFAULT_CHANNELS = 8
DEFAULT_WIDTH = 5
# converted voiced frames never drop below this, so they stay voiced (nonzero)
MIN_VOICED_HZ = 20.0


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 1e-3
    batch_size: int = 1
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size != 1:
            raise DataError("variable-length sequences are trained one at a time (batch_size=1)")
        if not self.learning_rate > 0 or self.weight_decay < 0 or not 0 <= self.dropout < 1:
            raise DataError("learning rate must be positive; weight decay and dropout non-negative")
        if self.epochs < 1:
            raise DataError("epochs must be positive")


@dataclass
class PitchAutoencoder:
    """Encoder (3 sigmoid convs), noise layer, clip, decoder (2 sigmoid + 1 linear).

    ``epsilon = inf`` disables the noise layer (a non-private reference model).
    """

    encoder: list[nn.ConvLayer]
    decoder: list[nn.ConvLayer]
    epsilon: float = math.inf
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.encoder) != 3 or len(self.decoder) != 3:
            raise DataError("autoencoder needs 3 encoder and 3 decoder layers")
        C = self.channels
        layers = self.layers
        shapes = [(C, 1), (C, C), (C, C), (C, C), (C, C), (1, C)]
        acts = ["sigmoid"] * 5 + ["linear"]
        for layer, shape, act in zip(layers, shapes, acts):
            if (layer.out_channels, layer.in_channels) != shape or layer.activation != act:
                raise DataError(
                    f"layer shape {(layer.out_channels, layer.in_channels)}/{layer.activation} "
                    f"does not chain; expected {shape}/{act}"
                )
            if layer.width != self.width:
                raise DataError("all layers must share one kernel width")
        if not self.epsilon > 0:
            raise CalibrationError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def channels(self) -> int:
        return self.encoder[0].out_channels

    @property
    def width(self) -> int:
        return self.encoder[0].width

    @property
    def layers(self) -> list[nn.ConvLayer]:
        return self.encoder + self.decoder

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.kernel, layer.bias]
        return out

    @classmethod
    def init(cls, channels=DEFAULT_CHANNELS, width=DEFAULT_WIDTH, epsilon=math.inf, seed=0):
        rng = make_rng(seed, stream=0)
        C = channels
        enc = [nn.ConvLayer.init(rng, i, C, width, "sigmoid") for i in (1, C, C)]
        dec = [
            nn.ConvLayer.init(rng, C, C, width, "sigmoid"),
            nn.ConvLayer.init(rng, C, C, width, "sigmoid"),
            nn.ConvLayer.init(rng, C, 1, width, "linear"),
        ]
        return cls(enc, dec, epsilon)

    def copy(self) -> PitchAutoencoder:
        return PitchAutoencoder([l.copy() for l in self.encoder], [l.copy() for l in self.decoder],
                                self.epsilon, list(self.loss_trace))


def _run(layers, x, masks=None):
    cache = []
    for i, layer in enumerate(layers):
        a, win = nn.conv1d(x, layer.kernel, layer.bias)
        y = nn.activate(a, layer.activation)
        mask = masks[i] if masks is not None else None
        cache.append((win, a, y, mask))
        x = y * mask if mask is not None else y
    return x, cache


def _run_backward(layers, cache, g):
    grads = []
    for layer, (win, a, y, mask) in zip(reversed(layers), reversed(cache)):
        if mask is not None:
            g = g * mask
        g = g * nn.activation_grad(y, a, layer.activation)
        g, dk, db = nn.conv1d_backward(g, win, layer.kernel)
        grads = [dk, db] + grads
    return g, grads


def encode(model: PitchAutoencoder, z) -> np.ndarray:
    """Latent code of shape (C, K) with entries in [0, 1]."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size < model.width:
        raise DataError(f"input length {z.size} is shorter than the kernel width {model.width}")
    h, _ = _run(model.encoder, z[None, :])
    return h


def latent_noise_scale(channels: int, length: int, epsilon: float) -> float:
    return sigmoid_encoder_sensitivity(channels, length) / epsilon


def perturb_latent(h, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if not epsilon > 0:
        raise CalibrationError(f"epsilon must be positive, got {epsilon}")
    if h.ndim != 2:
        raise DataError(f"latent must be a C x K matrix, got shape {h.shape}")
    if np.any(h < 0) or np.any(h > 1):
        raise DataError("latent entries must lie in [0, 1]")
    scale = latent_noise_scale(h.shape[0], h.shape[1], epsilon)
    return h + laplace_noise(scale, h.shape, rng)


def clip_latent(m) -> np.ndarray:
    return np.clip(np.asarray(m, dtype=np.float64), 0.0, 1.0)


def decode(model: PitchAutoencoder, clipped) -> np.ndarray:
    c = np.asarray(clipped, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != model.channels:
        raise DataError(f"expected a ({model.channels}, K) latent, got {c.shape}")
    out, _ = _run(model.decoder, c)
    return out[0]


def pearson(x, y) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    nx, ny = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if nx < 1e-12 or ny < 1e-12:
        raise DegenerateInputError("correlation of a constant sequence is undefined")
    return float(xc @ yc / (nx * ny))


def correlation_loss(pairs) -> float:
    """Mean over pairs of (1 - Pearson correlation); 0 for perfect reconstructions."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("no pairs")
    total = 0.0
    for z, zdp in pairs:
        z, zdp = np.asarray(z, dtype=np.float64), np.asarray(zdp, dtype=np.float64)
        if z.shape != zdp.shape or z.ndim != 1 or z.size < 2:
            raise DataError("each pair needs two equal-length sequences of length >= 2")
        total += 1.0 - pearson(z, zdp)
    return total / len(pairs)


def _corr_grad(x, y):
    """Pearson correlation and its gradient with respect to y."""
    xc = x - x.mean()
    yc = y - y.mean()
    nx, ny = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if nx < 1e-12 or ny < 1e-12:
        raise DegenerateInputError("correlation of a constant sequence is undefined")
    r = xc @ yc / (nx * ny)
    return r, xc / (nx * ny) - r * yc / (ny * ny)


def _loss_and_grads(model, z, noise, masks=None):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size < model.width:
        raise DataError(f"input length {z.size} is shorter than the kernel width {model.width}")
    enc_masks = dec_masks = None
    if masks is not None:
        enc_masks, dec_masks = masks
    h, enc_cache = _run(model.encoder, z[None, :], enc_masks)
    noisy = h + noise if noise is not None else h
    c = np.clip(noisy, 0.0, 1.0)
    out, dec_cache = _run(model.decoder, c, dec_masks)
    r, dr = _corr_grad(z, out[0])
    g = -dr[None, :]
    gc, dec_grads = _run_backward(model.decoder, dec_cache, g)
    # additive noise passes the gradient; clip's subgradient is 1 on [0, 1]
    gh = gc * ((noisy >= 0.0) & (noisy <= 1.0))
    _, enc_grads = _run_backward(model.encoder, enc_cache, gh)
    return 1.0 - r, enc_grads + dec_grads


def loss_gradient(model: PitchAutoencoder, z, noise=None) -> tuple[float, list[np.ndarray]]:
    """Loss 1 - Corr(z, A(z)) and its gradient for a fixed noise realization.

    ``noise`` is a (C, K) array added to the latent (None = no noise). Dropout
    is off, so the result is deterministic. Gradients follow
    ``model.parameters()`` order.
    """
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (model.channels, np.asarray(z).size):
            raise DataError(f"noise must have shape {(model.channels, np.asarray(z).size)}")
    return _loss_and_grads(model, z, noise)


def _dropout_masks(model, K, rate, rng):
    if rate <= 0:
        return None
    C = model.channels
    enc = [nn.dropout_mask(rng, (C, K), rate), nn.dropout_mask(rng, (C, K), rate), None]
    dec = [nn.dropout_mask(rng, (C, K), rate), nn.dropout_mask(rng, (C, K), rate), None]
    return enc, dec


def train(corpus, config: TrainingConfig | None = None, epsilon: float = math.inf,
          channels: int = DEFAULT_CHANNELS, width: int = DEFAULT_WIDTH,
          model: PitchAutoencoder | None = None) -> PitchAutoencoder:
    """Fit the autoencoder on normalized voiced pitch sequences.

    Fresh latent noise and dropout masks are drawn for every utterance at every
    step. ``model.loss_trace`` holds the mean training loss of each epoch.
    """
    config = config or TrainingConfig()
    seqs = [np.asarray(z, dtype=np.float64) for z in corpus]
    if not seqs:
        raise DataError("empty training corpus")
    if model is None:
        model = PitchAutoencoder.init(channels, width, epsilon, seed=config.seed)
    else:
        model = model.copy()
        model.epsilon = epsilon
    seqs = [z for z in seqs if z.size >= model.width]
    if not seqs:
        raise DataError("no training sequence is at least one kernel width long")
    order_rng = make_rng(config.seed, stream=1)
    noise_rng = make_rng(config.seed, stream=2)
    drop_rng = make_rng(config.seed, stream=3)
    opt = nn.Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    C = model.channels
    for _ in range(config.epochs):
        losses = []
        for idx in order_rng.permutation(len(seqs)):
            z = seqs[idx]
            K = z.size
            noise = None
            if math.isfinite(epsilon):
                noise = laplace_noise(latent_noise_scale(C, K, epsilon), (C, K), noise_rng)
            masks = _dropout_masks(model, K, config.dropout, drop_rng)
            try:
                loss, grads = _loss_and_grads(model, z, noise, masks)
            except DegenerateInputError:
                # saturated decoder output for this draw; nothing to learn from it
                continue
            opt.step(grads)
            losses.append(loss)
        model.loss_trace.append(float(np.mean(losses)) if losses else float("nan"))
    return model


def reconstruct(model: PitchAutoencoder, z, rng: np.random.Generator | None) -> np.ndarray:
    """One pass z -> encoder -> noise -> clip -> decoder (no renormalization)."""
    h = encode(model, z)
    if math.isfinite(model.epsilon):
        if rng is None:
            raise DataError("a DP model needs an rng for its noise layer")
        h = perturb_latent(h, model.epsilon, rng)
    return decode(model, clip_latent(h))


def anonymize_pitch(model: PitchAutoencoder, p, target: PitchStats,
                    rng: np.random.Generator | None) -> np.ndarray:
    """Release a pitch sequence with the voiced part replaced by the DP reconstruction.

    Zeros stay in place; voiced frames are renormalized and mapped to the
    target speaker's mean and std. A target whose std is large relative to its
    mean can push a frame to or below 0 Hz; such frames are raised to
    ``MIN_VOICED_HZ`` (the stats match the target exactly otherwise).
    """
    view = remove_zeros(p)
    z, _ = normalize(view.voiced)
    out = reconstruct(model, z, rng)
    zn, _ = normalize(out)
    converted = np.maximum(pitch_convert(zn, target), MIN_VOICED_HZ)
    return reinsert_zeros(view.with_voiced(converted))
