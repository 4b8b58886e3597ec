"""Bottleneck-feature acoustic model with a frame-level Laplace noise layer.

The model is extractor -> noise layer -> frame classifier. Training uses the
frame-level cross-entropy only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autoencoder import TrainingConfig
from .dp_core import laplace_noise, make_rng
from .errors import CalibrationError, DataError, DegenerateInputError

NORM_FLOOR = 1e-12
BN_SENSITIVITY = 2.0


@dataclass
class AcousticModel:
    """``extractor`` maps (A, K) -> (M, K); ``classifier`` maps (M, K) -> logits.

    All layers are same-padding convolutions; width-1 layers are per-frame
    affine maps. ``epsilon = inf`` is the noise-free limit of the noise layer:
    frames are still l1-normalized but no Laplace noise is added.
    """

    extractor: list[nn.ConvLayer]
    classifier: list[nn.ConvLayer]
    epsilon: float = math.inf
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        chain = self.extractor + self.classifier
        for prev, nxt in zip(chain, chain[1:]):
            if prev.out_channels != nxt.in_channels:
                raise DataError("layer widths do not chain")
        if not self.epsilon > 0:
            raise CalibrationError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def input_dim(self) -> int:
        return self.extractor[0].in_channels

    @property
    def bn_dim(self) -> int:
        return self.extractor[-1].out_channels

    @property
    def num_classes(self) -> int:
        return self.classifier[-1].out_channels

    @property
    def receptive_field(self) -> int:
        return 1 + sum(l.width - 1 for l in self.extractor)

    @property
    def layers(self) -> list[nn.ConvLayer]:
        return self.extractor + self.classifier

    def parameters(self, part: str = "all") -> list[np.ndarray]:
        layers = {"all": self.layers, "extractor": self.extractor,
                  "classifier": self.classifier}[part]
        out = []
        for layer in layers:
            out += [layer.kernel, layer.bias]
        return out

    @classmethod
    def init(cls, input_dim=20, bn_dim=16, num_classes=10, hidden=32, width=5,
             classifier_hidden=32, context=5, epsilon=math.inf, seed=0):
        rng = make_rng(seed, stream=0)
        extractor = [
            nn.ConvLayer.init(rng, input_dim, hidden, width, "tanh"),
            nn.ConvLayer.init(rng, hidden, hidden, width, "tanh"),
            nn.ConvLayer.init(rng, hidden, hidden, width, "tanh"),
            nn.ConvLayer.init(rng, hidden, bn_dim, 1, "linear"),
        ]
        classifier = init_classifier(rng, bn_dim, num_classes, classifier_hidden, context)
        return cls(extractor, classifier, epsilon)

    def copy(self) -> AcousticModel:
        return AcousticModel([l.copy() for l in self.extractor], [l.copy() for l in self.classifier],
                             self.epsilon, list(self.loss_trace))


def init_classifier(rng, bn_dim, num_classes, hidden=32, context=5) -> list[nn.ConvLayer]:
    """Affine over a ``context``-frame window + tanh, then a per-frame affine to logits."""
    return [
        nn.ConvLayer.init(rng, bn_dim, hidden, context, "tanh"),
        nn.ConvLayer.init(rng, hidden, num_classes, 1, "linear"),
    ]


def _run(layers, x):
    cache = []
    for layer in layers:
        a, win = nn.conv1d(x, layer.kernel, layer.bias)
        x = nn.activate(a, layer.activation)
        cache.append((win, a, x))
    return x, cache


def _run_backward(layers, cache, g):
    grads = []
    for layer, (win, a, y) in zip(reversed(layers), reversed(cache)):
        g = g * nn.activation_grad(y, a, layer.activation)
        g, dk, db = nn.conv1d_backward(g, win, layer.kernel)
        grads = [dk, db] + grads
    return g, grads


def _check_frames(model, O) -> np.ndarray:
    O = np.asarray(O, dtype=np.float64)
    if O.ndim != 2 or O.shape[1] != model.input_dim:
        raise DataError(f"expected a K x {model.input_dim} feature matrix, got {O.shape}")
    if O.shape[0] < 1:
        raise DataError("feature matrix has no frames")
    if not np.all(np.isfinite(O)):
        raise DataError("feature matrix has non-finite entries")
    return O


def extract_bn(model: AcousticModel, O) -> np.ndarray:
    """K x M bottleneck features (before any noise)."""
    O = _check_frames(model, O)
    B, _ = _run(model.extractor, O.T)
    return B.T


def norm1(c: np.ndarray) -> np.ndarray:
    """Divide each row by its l1 norm (signs kept)."""
    return c / np.abs(c).sum(axis=-1, keepdims=True)


def noise_layer(B, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise norm1(norm1(b) + Lap(2/eps)); each row is an eps-DP release."""
    if not epsilon > 0:
        raise CalibrationError(f"epsilon must be positive, got {epsilon}")
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise DataError(f"expected a K x M matrix, got shape {B.shape}")
    s = np.abs(B).sum(axis=1, keepdims=True)
    if np.any(s <= NORM_FLOOR):
        raise DegenerateInputError("a feature row has (near-)zero l1 norm")
    noisy = B / s + laplace_noise(BN_SENSITIVITY / epsilon, B.shape, rng)
    s2 = np.abs(noisy).sum(axis=1)
    bad = s2 <= NORM_FLOOR
    if np.any(bad):
        # redraw once for the offending rows
        noisy[bad] = B[bad] / s[bad] + laplace_noise(BN_SENSITIVITY / epsilon, noisy[bad].shape, rng)
        if np.any(np.abs(noisy[bad]).sum(axis=1) <= NORM_FLOOR):
            raise DegenerateInputError("noisy feature row summed to zero twice")
    return norm1(noisy)


def frame_noise(b, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise DataError("frame_noise takes a single M-vector")
    return noise_layer(b[None, :], epsilon, rng)[0]


def naive_dp_bn(B, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Noise layer applied to features of a model trained without noise."""
    return noise_layer(B, epsilon, rng)


def _norm1_backward(g, c, s):
    # d(c/s)/dc with s = sum|c|, row-wise
    return g / s - (g * c).sum(axis=-1, keepdims=True) * np.sign(c) / (s * s)


def classify_frames(model: AcousticModel, Bdp) -> np.ndarray:
    """K x num_classes log-posteriors."""
    Bdp = np.asarray(Bdp, dtype=np.float64)
    if Bdp.ndim != 2 or Bdp.shape[1] != model.bn_dim:
        raise DataError(f"expected a K x {model.bn_dim} BN matrix, got {Bdp.shape}")
    logits, _ = _run(model.classifier, Bdp.T)
    return nn.log_softmax(logits.T, axis=1)


def ce_loss(logprobs, labels) -> tuple[float, float]:
    """Summed and per-frame-mean cross-entropy."""
    logprobs = np.asarray(logprobs, dtype=np.float64)
    labels = np.asarray(labels)
    if logprobs.ndim != 2 or labels.shape != (logprobs.shape[0],):
        raise DataError("labels must match the number of frames")
    if labels.size and (labels.min() < 0 or labels.max() >= logprobs.shape[1]):
        raise DataError("label out of range")
    total = -float(logprobs[np.arange(labels.size), labels].sum())
    return total, total / max(labels.size, 1)


def _loss_and_grads(model, O, labels, noise, train_extractor=True):
    """Mean frame CE and gradients for a fixed noise realization (None = normalization only)."""
    labels = np.asarray(labels)
    K = O.shape[0]
    B, ext_cache = _run(model.extractor, O.T)  # (M, K)
    Bt = B.T
    s1 = np.abs(Bt).sum(axis=1, keepdims=True)
    if np.any(s1 <= NORM_FLOOR):
        raise DegenerateInputError("a feature row has (near-)zero l1 norm")
    v = Bt / s1
    if noise is not None:
        v = v + noise
        s2 = np.abs(v).sum(axis=1, keepdims=True)
        if np.any(s2 <= NORM_FLOOR):
            raise DegenerateInputError("noisy feature row summed to zero")
        X = (v / s2).T
    else:
        X = v.T
    logits, cls_cache = _run(model.classifier, X)
    logp = nn.log_softmax(logits, axis=0)
    loss = -float(logp[labels, np.arange(K)].sum()) / K
    g = np.exp(logp)
    g[labels, np.arange(K)] -= 1.0
    g /= K
    gX, cls_grads = _run_backward(model.classifier, cls_cache, g)
    if not train_extractor:
        return loss, cls_grads
    gv = _norm1_backward(gX.T, v, s2) if noise is not None else gX.T
    gB = _norm1_backward(gv, Bt, s1).T
    _, ext_grads = _run_backward(model.extractor, ext_cache, gB)
    return loss, ext_grads + cls_grads


def loss_gradient(model: AcousticModel, O, labels, noise=None):
    """Mean frame CE and gradient over ``model.parameters()`` for fixed noise.

    ``noise`` is the K x M Laplace draw added between the two normalizations;
    None leaves the single l1 normalization of the noise-free limit.
    """
    O = _check_frames(model, O)
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (O.shape[0], model.bn_dim):
            raise DataError(f"noise must have shape {(O.shape[0], model.bn_dim)}")
    return _loss_and_grads(model, O, labels, noise)


def _validate_corpus(model, corpus):
    items = []
    for O, labels in corpus:
        O = _check_frames(model, O)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (O.shape[0],):
            raise DataError("labels must match the number of frames")
        if labels.min() < 0 or labels.max() >= model.num_classes:
            raise DataError("label out of range")
        items.append((O, labels))
    if not items:
        raise DataError("empty training corpus")
    return items


def train_bn(corpus, config: TrainingConfig | None = None, epsilon: float = math.inf,
             model: AcousticModel | None = None, **init_kwargs) -> AcousticModel:
    """Jointly train extractor and classifier through the noise layer.

    ``corpus`` is a sequence of (K x A features, K labels). Fresh noise is drawn
    for each utterance at each step.
    """
    config = config or TrainingConfig(dropout=0.0)
    if model is None:
        model = AcousticModel.init(epsilon=epsilon, seed=config.seed, **init_kwargs)
    else:
        model = model.copy()
        model.epsilon = epsilon
    items = _validate_corpus(model, corpus)
    order_rng = make_rng(config.seed, stream=1)
    noise_rng = make_rng(config.seed, stream=2)
    opt = nn.Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    scale = BN_SENSITIVITY / epsilon if math.isfinite(epsilon) else None
    for _ in range(config.epochs):
        losses = []
        for idx in order_rng.permutation(len(items)):
            O, labels = items[idx]
            noise = laplace_noise(scale, (O.shape[0], model.bn_dim), noise_rng) if scale else None
            try:
                loss, grads = _loss_and_grads(model, O, labels, noise)
            except DegenerateInputError:
                continue
            opt.step(grads)
            losses.append(loss)
        model.loss_trace.append(float(np.mean(losses)) if losses else float("nan"))
    return model


def train_classifier(features, config: TrainingConfig | None = None, num_classes: int = 10,
                     hidden: int = 32, context: int = 5) -> list[nn.ConvLayer]:
    """Fresh classifier on fixed K x M feature matrices paired with labels."""
    config = config or TrainingConfig(dropout=0.0)
    items = [(np.asarray(B, dtype=np.float64), np.asarray(y, dtype=np.int64)) for B, y in features]
    if not items:
        raise DataError("empty training corpus")
    bn_dim = items[0][0].shape[1]
    rng = make_rng(config.seed, stream=0)
    layers = init_classifier(rng, bn_dim, num_classes, hidden, context)
    params = []
    for layer in layers:
        params += [layer.kernel, layer.bias]
    opt = nn.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    order_rng = make_rng(config.seed, stream=1)
    for _ in range(config.epochs):
        for idx in order_rng.permutation(len(items)):
            X, labels = items[idx]
            K = X.shape[0]
            logits, cache = _run(layers, X.T)
            logp = nn.log_softmax(logits, axis=0)
            g = np.exp(logp)
            g[labels, np.arange(K)] -= 1.0
            _, grads = _run_backward(layers, cache, g / K)
            opt.step(grads)
    return layers


def with_classifier(model: AcousticModel, classifier: list[nn.ConvLayer],
                    epsilon: float | None = None) -> AcousticModel:
    """Model sharing ``model``'s extractor, with a new classifier and noise level."""
    eps = model.epsilon if epsilon is None else epsilon
    return AcousticModel([l.copy() for l in model.extractor], classifier, eps)


def release_bn(model: AcousticModel, O, rng: np.random.Generator | None) -> np.ndarray:
    """Deployment output: noise_layer(extract_bn(O)) for a DP model, norm1(extract_bn(O)) otherwise."""
    B = extract_bn(model, O)
    if math.isfinite(model.epsilon):
        if rng is None:
            raise DataError("a DP model needs an rng for its noise layer")
        return noise_layer(B, model.epsilon, rng)
    if np.any(np.abs(B).sum(axis=1) <= NORM_FLOOR):
        raise DegenerateInputError("a feature row has (near-)zero l1 norm")
    return norm1(B)


def frame_accuracy(model: AcousticModel, corpus, rng: np.random.Generator | None) -> float:
    """Fraction of frames whose argmax class matches the label, noise layer active."""
    hits = total = 0
    for O, labels in corpus:
        pred = classify_frames(model, release_bn(model, O, rng)).argmax(axis=1)
        hits += int(np.sum(pred == np.asarray(labels)))
        total += len(labels)
    if total == 0:
        raise DataError("no frames to score")
    return hits / total
