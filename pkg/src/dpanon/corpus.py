"""Synthetic multi-speaker corpus with planted, removable identity signals.

Prosody lives in a smooth per-utterance contour drawn from one distribution
shared by all speakers. Identity lives in the base pitch, a speaker-specific
quasi-periodic pitch jitter and a per-speaker offset added to every acoustic
frame. Phone classes drive both the frame features and the voicing pattern.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dp_core import make_rng
from .errors import DataError
from .evaluation import assign_splits

GENERATOR_VERSION = 1
SILENCE = 0


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    """One synthetic speaker.

    ``jitter_amplitude`` is a fraction of ``base_pitch_hz``; ``jitter_period``
    is in frames. ``feature_offset`` is added to every acoustic frame.
    """

    base_pitch_hz: float
    jitter_amplitude: float
    feature_offset: tuple[float, ...]
    phone_inventory: tuple[int, ...]
    jitter_period: float = 6.0

    def __post_init__(self):
        if not 60.0 <= self.base_pitch_hz <= 400.0:
            raise DataError(f"base pitch {self.base_pitch_hz} Hz outside [60, 400]")
        if self.jitter_amplitude < 0 or self.jitter_period < 2:
            raise DataError("jitter amplitude must be >= 0 and period >= 2 frames")
        if len(self.phone_inventory) == 0:
            raise DataError("empty phone inventory")


@dataclass(frozen=True)
class GeneratorParams:
    num_classes: int = 10
    unvoiced_classes: tuple[int, ...] = (0, 1, 2)
    vowel_classes: tuple[int, ...] = (6, 7, 8, 9)
    feature_dim: int = 20
    min_frames: int = 30
    max_frames: int = 50
    min_phone_frames: int = 3
    max_phone_frames: int = 9
    prosody_depth: float = 0.2
    template_weight: float = 1.0
    feature_noise: float = 1.0
    language_seed: int = 1234


@dataclass
class Utterance:
    utt_id: str
    speaker: str
    pitch: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    split: str


@dataclass
class Corpus:
    utterances: list[Utterance]
    params: GeneratorParams
    speakers: dict[str, SyntheticSpeakerSpec] = field(default_factory=dict)
    version: int = GENERATOR_VERSION

    def split(self, name: str) -> list[Utterance]:
        return [u for u in self.utterances if u.split == name]

    def describe(self) -> dict:
        return {
            "generator_version": self.version,
            "params": asdict(self.params),
            "speakers": {k: asdict(v) for k, v in self.speakers.items()},
        }


def phone_prototypes(params: GeneratorParams) -> np.ndarray:
    """Speaker-independent mean feature vector of each phone class."""
    rng = make_rng(params.language_seed, stream=0)
    return rng.normal(0.0, 1.5, (params.num_classes, params.feature_dim))


def random_speakers(n: int, rng: np.random.Generator, params: GeneratorParams = GeneratorParams(),
                    jitter_range=(0.1, 0.5), period_range=(5.0, 16.0),
                    offset_scale: float = 1.0) -> list[SyntheticSpeakerSpec]:
    """Speakers with spread-out base pitches, jitter and feature offsets."""
    if n < 1:
        raise DataError("need at least one speaker")
    bases = rng.uniform(80.0, 300.0, n)
    out = []
    for i in range(n):
        out.append(SyntheticSpeakerSpec(
            base_pitch_hz=float(bases[i]),
            jitter_amplitude=float(rng.uniform(*jitter_range)),
            feature_offset=tuple(rng.normal(0.0, offset_scale, params.feature_dim)),
            phone_inventory=tuple(range(params.num_classes)),
            jitter_period=float(rng.uniform(*period_range)),
        ))
    return out


def _phone_sequence(spec, params, K, rng):
    """Silence, then consonant-vowel syllables with occasional pauses, then silence."""
    labels = np.full(K, SILENCE, dtype=np.int64)
    inventory = set(spec.phone_inventory) - {SILENCE}
    vowels = np.array(sorted(inventory & set(params.vowel_classes)))
    consonants = np.array(sorted(inventory - set(params.vowel_classes)))
    if vowels.size == 0:
        raise DataError("phone inventory has no vowels")
    pos = int(rng.integers(2, 6))
    end = K - int(rng.integers(2, 6))
    lo, hi = params.min_phone_frames, params.max_phone_frames
    while pos < end:
        if consonants.size:
            dur = int(rng.integers(2, max(3, lo + 1)))
            labels[pos:min(pos + dur, end)] = rng.choice(consonants)
            pos += dur
        dur = int(rng.integers(lo + 1, hi + 1))
        labels[pos:min(pos + dur, end)] = rng.choice(vowels)
        pos += dur
        if rng.random() < 0.15:
            pos += int(rng.integers(2, 5))
    return labels


def _prosody(K, rng, template_weight):
    """Shared declination template plus a random smooth utterance-specific part."""
    t = np.arange(K)
    contour = template_weight * (1.0 - 2.0 * t / max(K - 1, 1))
    for _ in range(2):
        period = rng.uniform(30.0, 90.0)
        contour = contour + rng.uniform(0.2, 0.6) * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    return contour / (np.abs(contour).max() + 1e-9)


def synth_utterance(spec: SyntheticSpeakerSpec, params: GeneratorParams, K: int,
                    rng: np.random.Generator, prototypes: np.ndarray):
    """(pitch, features, labels) for one utterance of K frames."""
    labels = _phone_sequence(spec, params, K, rng)
    voiced = ~np.isin(labels, params.unvoiced_classes)
    # the jitter clock runs on voiced frames only, so the voiced sequence that
    # the pitch extractor sees carries an unbroken speaker-specific oscillation
    tv = np.cumsum(voiced) - 1
    jitter = np.sin(2 * np.pi * tv / spec.jitter_period + rng.uniform(0, 2 * np.pi))
    rel = 1.0 + params.prosody_depth * _prosody(K, rng, params.template_weight) + spec.jitter_amplitude * jitter
    pitch = np.where(voiced, spec.base_pitch_hz * np.maximum(rel, 0.2), 0.0)
    features = (prototypes[labels] + np.asarray(spec.feature_offset)
                + rng.normal(0.0, params.feature_noise, (K, params.feature_dim)))
    return pitch, features, labels


def gen_corpus(specs, utterances_per_speaker: int, seed: int = 0,
               params: GeneratorParams = GeneratorParams(), length_range=None) -> Corpus:
    """Generate ``utterances_per_speaker`` utterances per speaker with 80/10/10 splits."""
    specs = list(specs)
    if len(specs) < 2:
        raise DataError("a corpus needs at least two speakers")
    if utterances_per_speaker < 1:
        raise DataError("utterances_per_speaker must be positive")
    lo, hi = length_range or (params.min_frames, params.max_frames)
    if not 10 <= lo <= hi:
        raise DataError(f"bad length range ({lo}, {hi})")
    for spec in specs:
        if len(spec.feature_offset) != params.feature_dim:
            raise DataError("feature_offset length must equal the feature dimension")
        if max(spec.phone_inventory) >= params.num_classes or min(spec.phone_inventory) < 0:
            raise DataError("phone inventory refers to unknown classes")
    rng = make_rng(seed, stream=10)
    protos = phone_prototypes(params)
    utts = []
    names = {}
    for si, spec in enumerate(specs):
        name = f"spk{si:03d}"
        names[name] = spec
        for ui in range(utterances_per_speaker):
            K = int(rng.integers(lo, hi + 1))
            pitch, feats, labels = synth_utterance(spec, params, K, rng, protos)
            utts.append(Utterance(f"{name}_u{ui:03d}", name, pitch, feats, labels, ""))
    tags = assign_splits([u.speaker for u in utts], make_rng(seed, stream=11))
    for u, tag in zip(utts, tags):
        u.split = tag
    return Corpus(utts, params, names)
