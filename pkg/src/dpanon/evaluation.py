"""Privacy and utility metrics plus the desk-scale speaker attacks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .dp_core import make_rng
from .errors import DataError, DegenerateInputError

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class ScoreSet:
    mated: np.ndarray
    nonmated: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mated", np.asarray(self.mated, dtype=np.float64).ravel())
        object.__setattr__(self, "nonmated", np.asarray(self.nonmated, dtype=np.float64).ravel())

    def require_both(self) -> None:
        if self.mated.size == 0 or self.nonmated.size == 0:
            raise DataError("both mated and non-mated scores are required")


@dataclass
class MetricReport:
    p_asi: float | None = None
    p_asv_eer: float | None = None
    p_asv_unlinkability: float | None = None
    u_asr: float | None = None
    pitch_correlation: float | None = None

    def as_text(self) -> str:
        """Flat ``key=value`` lines; unset metrics are omitted."""
        keys = [("P_ASI", self.p_asi), ("P_ASV_e", self.p_asv_eer),
                ("P_ASV_l", self.p_asv_unlinkability), ("U_ASR", self.u_asr),
                ("pitch_corr", self.pitch_correlation)]
        return "".join(f"{k}={v!r}\n" for k, v in keys if v is not None)


def pearson_corr(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DataError("pearson_corr needs two equal-length 1-D sequences of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    nx, ny = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx == 0 or ny == 0:
        raise DegenerateInputError("correlation with a constant sequence is undefined")
    return float(np.clip(xc @ yc / (nx * ny), -1.0, 1.0))


def eer(scores: ScoreSet) -> float:
    """Equal error rate in [0, 0.5] (as a fraction).

    Candidate thresholds are the midpoints between consecutive distinct scores
    plus -inf/+inf. FAR(t) counts non-mated scores >= t, FRR(t) mated scores < t.
    At the threshold minimizing |FAR - FRR| the mean (FAR + FRR)/2 is returned;
    among equally close thresholds the smallest mean wins.
    """
    scores.require_both()
    mated = np.sort(scores.mated)
    nonmated = np.sort(scores.nonmated)
    distinct = np.unique(np.concatenate([mated, nonmated]))
    thresholds = np.concatenate([[-np.inf], (distinct[1:] + distinct[:-1]) / 2, [np.inf]])
    nm, nn = mated.size, nonmated.size
    false_accepts = nn - np.searchsorted(nonmated, thresholds, side="left")
    false_rejects = np.searchsorted(mated, thresholds, side="left")
    # compare |FAR - FRR| on integer counts so exact ties stay ties
    gap = np.abs(false_accepts * nm - false_rejects * nn)
    best = gap == gap.min()
    mean = (false_accepts / nn + false_rejects / nm) / 2
    return float(mean[best].min())


def unlinkability(scores: ScoreSet, bins: int = 50) -> float:
    """1 - global linkability D_sys with equal priors and shared-range histograms."""
    if int(bins) != bins or bins < 2:
        raise DataError(f"need at least 2 bins, got {bins}")
    scores.require_both()
    lo = min(scores.mated.min(), scores.nonmated.min())
    hi = max(scores.mated.max(), scores.nonmated.max())
    if hi <= lo:
        return 1.0
    edges = np.linspace(lo, hi, int(bins) + 1)
    pm = np.histogram(scores.mated, edges)[0] / scores.mated.size
    pn = np.histogram(scores.nonmated, edges)[0] / scores.nonmated.size
    tot = pm + pn
    p_mated = np.divide(pm, tot, out=np.zeros_like(pm), where=tot > 0)
    local = np.maximum(0.0, 2.0 * p_mated - 1.0)
    d_sys = float(np.sum(pm * local))
    return float(np.clip(1.0 - d_sys, 0.0, 1.0))


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    prev = np.arange(len(hyp) + 1)
    for i, r in enumerate(ref, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return int(prev[-1])


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Word error rate in percent; utility U_ASR is 100 - wer."""
    if isinstance(reference, str):
        reference = reference.split()
    if isinstance(hypothesis, str):
        hypothesis = hypothesis.split()
    if len(reference) == 0:
        raise DataError("empty reference transcript")
    return 100.0 * edit_distance(reference, hypothesis) / len(reference)


def pool_stats(features) -> np.ndarray:
    """Mean and std over frames, concatenated."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError(f"expected a K x F feature matrix, got shape {X.shape}")
    return np.concatenate([X.mean(axis=0), X.std(axis=0)])


def pitch_attack_features(p, max_lag: int = 16) -> np.ndarray:
    """Per-frame attack inputs for a pitch sequence (voiced frames only).

    Columns: log pitch, the normalized contour z, its first difference, and
    the lagged products z[t] * z[t - k] for k = 1..max_lag (zero where t < k).
    Mean pooling over these gives the contour's short-lag autocorrelation,
    which is where a periodic speaker-specific jitter shows up.
    """
    p = np.asarray(p, dtype=np.float64)
    v = p[p > 0]
    if v.size < 2:
        raise DegenerateInputError("need at least two voiced frames")
    sd = v.std()
    if sd < 1e-6:
        raise DegenerateInputError("constant pitch sequence")
    z = (v - v.mean()) / sd
    cols = [np.log(v), z, np.diff(z, prepend=z[0])]
    for k in range(1, max_lag + 1):
        lagged = np.zeros(z.size)
        if k < z.size:
            lagged[k:] = z[k:] * z[:-k]
        cols.append(lagged)
    return np.stack(cols, axis=1)


# -- labeled corpora and the identification attack ---------------------------------


@dataclass(frozen=True)
class LabeledUtterance:
    features: np.ndarray
    speaker: str
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"split must be one of {SPLITS}, got {self.split!r}")


def assign_splits(speakers: Sequence, rng: np.random.Generator,
                  fractions=(0.8, 0.1, 0.1)) -> list[str]:
    """Per-speaker 80/10/10 split tags, in the order of ``speakers``."""
    speakers = list(speakers)
    tags = [""] * len(speakers)
    by_spk: dict = {}
    for i, s in enumerate(speakers):
        by_spk.setdefault(s, []).append(i)
    for s in sorted(by_spk, key=str):
        idx = by_spk[s]
        order = rng.permutation(len(idx))
        n = len(idx)
        n_train = max(1, int(round(fractions[0] * n)))
        n_val = int(round(fractions[1] * n))
        if n - n_train - n_val < 1 and n >= 3:
            n_train = n - n_val - 1
        for rank, j in enumerate(order):
            tag = "train" if rank < n_train else "validation" if rank < n_train + n_val else "test"
            tags[idx[j]] = tag
    return tags


@dataclass
class AttackConfig:
    hidden: int = 64
    learning_rate: float = 5e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 30
    seed: int = 0


@dataclass
class AttackModel:
    """Pooled-statistics speaker classifier: [mean, std] -> tanh layer -> softmax."""

    speakers: list
    center: np.ndarray
    scale: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def _forward(self, pooled):
        x = (pooled - self.center) / self.scale
        hid = np.tanh(x @ self.w1 + self.b1)
        return x, hid, nn.log_softmax(hid @ self.w2 + self.b2, axis=1)

    def predict(self, features_list) -> list:
        pooled = np.stack([pool_stats(f) for f in features_list])
        if pooled.shape[1] != self.input_dim:
            raise DataError(f"attack expects {self.input_dim // 2}-dim frames")
        idx = self._forward(pooled)[2].argmax(axis=1)
        return [self.speakers[i] for i in idx]


def _split(corpus, name):
    return [u for u in corpus if u.split == name]


def train_asi_attack(corpus: Sequence[LabeledUtterance], config: AttackConfig | None = None) -> AttackModel:
    """Train on the train split, early-stopping on validation accuracy."""
    config = config or AttackConfig()
    train = _split(corpus, "train")
    val = _split(corpus, "validation")
    speakers = sorted({u.speaker for u in train}, key=str)
    if len(speakers) < 2:
        raise DataError("the identification attack needs at least two training speakers")
    if {u.speaker for u in corpus} - set(speakers):
        raise DataError("every speaker must appear in the train split")
    index = {s: i for i, s in enumerate(speakers)}
    X = np.stack([pool_stats(u.features) for u in train])
    y = np.array([index[u.speaker] for u in train])
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-8] = 1.0
    rng = make_rng(config.seed, stream=0)
    D, H, S = X.shape[1], config.hidden, len(speakers)
    model = AttackModel(
        speakers, center, scale,
        rng.normal(0, 1 / np.sqrt(D), (D, H)), np.zeros(H),
        rng.normal(0, 1 / np.sqrt(H), (H, S)), np.zeros(S),
    )
    params = [model.w1, model.b1, model.w2, model.b2]
    opt = nn.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    Xv = np.stack([pool_stats(u.features) for u in val]) if val else None
    yv = np.array([index.get(u.speaker, -1) for u in val]) if val else None
    order_rng = make_rng(config.seed, stream=1)
    best_acc, best_params, stale = -1.0, [p.copy() for p in params], 0
    for _ in range(config.max_epochs):
        order = order_rng.permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            b = order[start:start + config.batch_size]
            xb, hid, logp = model._forward(X[b])
            g = np.exp(logp)
            g[np.arange(b.size), y[b]] -= 1.0
            g /= b.size
            gw2 = hid.T @ g
            gh = (g @ model.w2.T) * (1 - hid**2)
            opt.step([xb.T @ gh, gh.sum(0), gw2, g.sum(0)])
        if Xv is None:
            continue
        acc = float(np.mean(model._forward(Xv)[2].argmax(axis=1) == yv))
        if acc > best_acc:
            best_acc, best_params, stale = acc, [p.copy() for p in params], 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if Xv is not None:
        for p, best in zip(params, best_params):
            p[...] = best
    return model


def asi_error(model: AttackModel, test: Sequence[LabeledUtterance]) -> float:
    """P_ASI: percentage of test utterances attributed to the wrong speaker."""
    test = list(test)
    if not test:
        raise DataError("empty test split")
    pred = model.predict([u.features for u in test])
    correct = sum(p == u.speaker for p, u in zip(pred, test))
    return 100.0 * (1.0 - correct / len(test))


# -- linkage attack ----------------------------------------------------------------


def _cosine(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity with a zero vector")
    return float(a @ b / (na * nb))


def linkage_scores(enroll: Mapping[str, Sequence], trials: Sequence[tuple],
                   center: np.ndarray | None = None) -> ScoreSet:
    """Cosine scores of trial embeddings against enrolled speaker models.

    ``trials`` holds ``(features, true_speaker, claimed_speaker)`` triples; a
    trial is mated when the two speakers agree. Embeddings are mean+std pooled
    frames, optionally shifted by ``center`` before scoring.
    """
    shift = 0.0 if center is None else np.asarray(center, dtype=np.float64)
    models = {}
    for spk, utts in enroll.items():
        if len(utts) == 0:
            raise DataError(f"speaker {spk!r} has no enrollment utterances")
        models[spk] = np.mean([pool_stats(f) - shift for f in utts], axis=0)
    mated, nonmated = [], []
    for features, true_spk, claim in trials:
        if claim not in models:
            raise DataError(f"claimed speaker {claim!r} is not enrolled")
        s = _cosine(pool_stats(features) - shift, models[claim])
        (mated if true_spk == claim else nonmated).append(s)
    return ScoreSet(np.array(mated), np.array(nonmated))
