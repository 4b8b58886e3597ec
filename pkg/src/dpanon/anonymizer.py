"""Pseudo-speaker target selection and the per-utterance anonymization pipeline.

Target vectors come from a public pool: the pool is clustered with Affinity
Propagation on cosine similarity, one of the 10 largest clusters is drawn at
random, and half of its members are averaged. The utterance itself is never
consulted. The pipeline then releases DP pitch and DP bottleneck features
together with a privacy ledger for the pair.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .autoencoder import PitchAutoencoder, anonymize_pitch
from .bn import AcousticModel, release_bn
from .dp_core import PrivacyBudget, PrivacyLedger, make_rng
from .errors import CalibrationError, ConvergenceError, DataError, DegenerateInputError
from .pitch import PitchStats, as_pitch

MODES = ("utterance", "speaker")
TOP_CLUSTERS = 10
DEFAULT_DELTA = 1e-5


def check_pool(pool, min_rows: int = 2) -> np.ndarray:
    X = np.asarray(pool, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DataError(f"vector pool must be an N x D matrix, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise DataError(f"vector pool needs at least {min_rows} rows, has {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise DataError("vector pool has non-finite entries")
    return X


def cosine_similarity_matrix(X) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateInputError("cosine similarity is undefined for a zero vector")
    U = X / norms[:, None]
    return np.clip(U @ U.T, -1.0, 1.0)


@dataclass(frozen=True)
class ClusterAssignment:
    """``labels[i]`` is the cluster of row i; ``exemplars[c]`` is the row exemplifying c."""

    labels: np.ndarray
    exemplars: np.ndarray
    iterations: int = 0

    @property
    def num_clusters(self) -> int:
        return int(self.exemplars.size)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_clusters)


def affinity_propagation(S, preference=None, damping: float = 0.9, max_iter: int = 1000,
                         convergence_iter: int = 50) -> ClusterAssignment:
    """Responsibility/availability message passing on a similarity matrix.

    Converges when the exemplar set has been unchanged for ``convergence_iter``
    iterations. A fixed-seed perturbation of relative size 1e-15 breaks exact
    ties, as in the common reference implementation.
    """
    S = np.array(S, dtype=np.float64)
    n = S.shape[0]
    if S.ndim != 2 or S.shape != (n, n) or n < 2:
        raise DataError("similarity matrix must be square with at least 2 rows")
    if not 0.5 <= damping < 1.0:
        raise DataError(f"damping must lie in [0.5, 1), got {damping}")
    off = S[~np.eye(n, dtype=bool)]
    if preference is None:
        preference = np.median(off)
    if np.allclose(off, off[0]) and np.all(preference >= off[0] - 1e-12):
        # every point is equally similar to every other: one cluster
        return ClusterAssignment(np.zeros(n, dtype=np.int64), np.array([0]), 0)
    np.fill_diagonal(S, preference)
    tiny = np.finfo(np.float64).tiny
    S += (np.finfo(np.float64).eps * S + tiny * 100) * make_rng(0, stream=0).standard_normal((n, n))

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    rows = np.arange(n)
    history = np.zeros((n, convergence_iter), dtype=bool)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        AS = A + S
        best = AS.argmax(axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = AS.max(axis=1)
        Rnew = S - first[:, None]
        Rnew[rows, best] = S[rows, best] - second
        R = damping * R + (1 - damping) * Rnew

        Rp = np.maximum(R, 0)
        Rp[rows, rows] = R[rows, rows]
        col = Rp.sum(axis=0)
        Anew = col[None, :] - Rp
        diag = Anew[rows, rows].copy()
        Anew = np.minimum(Anew, 0)
        Anew[rows, rows] = diag
        A = damping * A + (1 - damping) * Anew

        E = (A[rows, rows] + R[rows, rows]) > 0
        history[:, (it - 1) % convergence_iter] = E
        if it >= convergence_iter:
            stable = np.all(history == history[:, :1], axis=1).all()
            if stable and E.any():
                converged = True
                break
    exemplars = np.flatnonzero((A[rows, rows] + R[rows, rows]) > 0)
    if not converged or exemplars.size == 0:
        raise ConvergenceError(
            f"affinity propagation did not converge in {max_iter} iterations; no assignment returned"
        )
    labels = S[:, exemplars].argmax(axis=1)
    labels[exemplars] = np.arange(exemplars.size)
    # refine each exemplar to the member with the largest within-cluster similarity
    for c in range(exemplars.size):
        idx = np.flatnonzero(labels == c)
        exemplars[c] = idx[S[np.ix_(idx, idx)].sum(axis=0).argmax()]
    labels = S[:, exemplars].argmax(axis=1)
    labels[exemplars] = np.arange(exemplars.size)
    # contiguous ids in exemplar order
    order = np.argsort(exemplars, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return ClusterAssignment(remap[labels].astype(np.int64), exemplars[order], it)


def cluster_pool(pool, damping: float = 0.9, max_iter: int = 1000,
                 convergence_iter: int = 50) -> ClusterAssignment:
    """Affinity Propagation over cosine similarities with the median as preference."""
    X = check_pool(pool)
    return affinity_propagation(cosine_similarity_matrix(X), None, damping, max_iter, convergence_iter)


@dataclass(frozen=True)
class TargetSelection:
    cluster: int
    members: np.ndarray
    vector: np.ndarray
    mode: str


class TargetCache:
    """Speaker-level selections, written once per speaker and then only read."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: dict = {}

    def get_or_set(self, key, make):
        with self._lock:
            if key not in self._items:
                self._items[key] = make()
            return self._items[key]

    def __contains__(self, key) -> bool:
        with self._lock:
            return key in self._items

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


def _draw_target(assignment: ClusterAssignment, X: np.ndarray, rng, mode: str) -> TargetSelection:
    sizes = assignment.sizes()
    # largest first; equal sizes keep the lower cluster id first
    ranked = np.argsort(-sizes, kind="stable")[:min(TOP_CLUSTERS, sizes.size)]
    cluster = int(ranked[rng.integers(ranked.size)])
    members = assignment.members(cluster)
    chosen = np.sort(rng.choice(members, size=math.ceil(members.size / 2), replace=False))
    return TargetSelection(cluster, chosen, X[chosen].mean(axis=0), mode)


def select_target(assignment: ClusterAssignment, pool, mode: str = "utterance",
                  speaker_id=None, rng: np.random.Generator | None = None,
                  cache: TargetCache | None = None) -> TargetSelection:
    """Average of a random half of one of the 10 largest clusters.

    In ``speaker`` mode the first selection for ``speaker_id`` is stored in
    ``cache`` and returned for every later call with that id.
    """
    X = check_pool(pool, min_rows=1)
    if assignment.labels.shape != (X.shape[0],):
        raise DataError("cluster assignment does not match the pool")
    if assignment.num_clusters < 1:
        raise DataError("no clusters to select from")
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {mode!r}")
    if rng is None:
        raise DataError("target selection needs an rng")
    if mode == "utterance":
        return _draw_target(assignment, X, rng, mode)
    if speaker_id is None:
        raise DataError("speaker-level selection needs a speaker_id")
    if cache is None:
        raise DataError("speaker-level selection needs a TargetCache")
    return cache.get_or_set(speaker_id, lambda: _draw_target(assignment, X, rng, mode))


@dataclass(frozen=True)
class AnonymizedBundle:
    pitch: np.ndarray
    bn: np.ndarray
    target: np.ndarray
    ledger: PrivacyLedger

    def __post_init__(self):
        if self.pitch.shape[0] != self.bn.shape[0]:
            raise DataError("bundle pitch length and BN row count differ")

    @property
    def frames(self) -> int:
        return int(self.pitch.shape[0])

    def simple_total(self) -> float:
        return self.ledger.simple_total()

    def advanced_total(self) -> PrivacyBudget:
        return self.ledger.advanced_total()


def draw_pitch_target(rng: np.random.Generator, low_hz: float = 90.0, high_hz: float = 280.0,
                      relative_std: float = 0.1) -> PitchStats:
    """Random pseudo-speaker pitch statistics: mean uniform in [low, high], std a fixed fraction."""
    if not 0 < low_hz <= high_hz or not relative_std > 0:
        raise DataError("need 0 < low_hz <= high_hz and a positive relative std")
    mean = float(rng.uniform(low_hz, high_hz))
    return PitchStats(mean, relative_std * mean)


def utterance_ledger(epsilon_pitch: float, epsilon_bn: float, K: int,
                     delta: float = DEFAULT_DELTA) -> PrivacyLedger:
    """One pitch release plus K per-frame BN releases."""
    return PrivacyLedger(delta_budget=delta).add("pitch", epsilon_pitch, 1).add("bn_frame", epsilon_bn, K)


def anonymize_utterance(pitch_model: PitchAutoencoder, bn_model: AcousticModel, p, O, pool,
                        epsilon_pitch: float, epsilon_bn: float, target_pitch_stats: PitchStats,
                        rng: np.random.Generator, *, assignment: ClusterAssignment | None = None,
                        mode: str = "utterance", speaker_id=None, cache: TargetCache | None = None,
                        delta: float = DEFAULT_DELTA) -> AnonymizedBundle:
    """DP pitch, DP bottleneck features and a pool-derived target for one utterance.

    The epsilons must equal the ones the models were built with; they are
    restated here so the ledger is explicit about what it charges. An
    utterance without voiced frames keeps its all-zero pitch, and the pitch
    budget is still charged.
    """
    for name, eps, model in (("pitch", epsilon_pitch, pitch_model), ("bn", epsilon_bn, bn_model)):
        if not (eps > 0 and math.isfinite(eps)):
            raise CalibrationError(f"{name} epsilon must be positive and finite, got {eps}")
        if model.epsilon != eps:
            raise CalibrationError(f"{name} model was built for epsilon={model.epsilon}, not {eps}")
    p = as_pitch(p)
    O = np.asarray(O, dtype=np.float64)
    if O.ndim != 2 or O.shape[0] != p.size:
        raise DataError(f"pitch has {p.size} frames but features have shape {O.shape}")
    X = check_pool(pool)
    if assignment is None:
        assignment = cluster_pool(X)
    target = select_target(assignment, X, mode, speaker_id, rng, cache)
    if np.any(p > 0):
        pitch_out = anonymize_pitch(pitch_model, p, target_pitch_stats, rng)
    else:
        pitch_out = p.copy()
    bn_out = release_bn(bn_model, O, rng)
    ledger = utterance_ledger(epsilon_pitch, epsilon_bn, p.size, delta)
    return AnonymizedBundle(pitch_out, bn_out, target.vector.copy(), ledger)


BUNDLE_FILES = {"pitch": "pitch.f0", "bn": "bn.dpaf", "target": "target.dpxv", "ledger": "ledger.txt"}


def write_bundle(directory, bundle: AnonymizedBundle) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    formats.write_pitch(root / BUNDLE_FILES["pitch"], bundle.pitch)
    formats.write_features(root / BUNDLE_FILES["bn"], bundle.bn)
    formats.write_pool(root / BUNDLE_FILES["target"], bundle.target[None, :])
    formats.write_ledger(root / BUNDLE_FILES["ledger"], bundle.ledger)
    return root


def read_bundle(directory) -> AnonymizedBundle:
    root = Path(directory)
    target = formats.read_pool(root / BUNDLE_FILES["target"])
    if target.shape[0] != 1:
        raise DataError("bundle target file must hold exactly one vector")
    return AnonymizedBundle(
        formats.read_pitch(root / BUNDLE_FILES["pitch"]),
        formats.read_features(root / BUNDLE_FILES["bn"]),
        target[0],
        formats.read_ledger(root / BUNDLE_FILES["ledger"]),
    )
