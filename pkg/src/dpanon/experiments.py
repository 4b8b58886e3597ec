"""Desk-scale privacy and utility studies on the synthetic corpus.

A public corpus trains the extractors; a separate 20-speaker private corpus
is anonymized and attacked. Each study returns plain dicts keyed by epsilon
(``math.inf`` for the non-private model) so callers can check trends.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autoencoder as ae
from . import bn
from . import corpus as cg
from . import evaluation as ev
from .anonymizer import draw_pitch_target
from .dp_core import make_rng
from .pitch import naive_dp_pitch, normalize, remove_zeros


@dataclass(frozen=True)
class StudyConfig:
    speakers: int = 20
    utterances: int = 50
    public_speakers: int = 10
    public_utterances: int = 30
    epsilons: tuple[float, ...] = (100.0, 1.0)
    pitch_channels: int = 1
    pitch_epochs: int = 15
    bn_dim: int = 128
    bn_context: int = 9
    bn_epochs: int = 20
    bn_finetune_epochs: int = 10
    bn_learning_rate: float = 3e-3
    offset_scale: float = 1.0


def make_corpora(seed: int, cfg: StudyConfig = StudyConfig()):
    """(public, private) corpora drawn from disjoint speaker sets."""
    params = cg.GeneratorParams()
    pub_specs = cg.random_speakers(cfg.public_speakers, make_rng(seed, stream=100), params,
                                  offset_scale=cfg.offset_scale)
    priv_specs = cg.random_speakers(cfg.speakers, make_rng(seed, stream=200), params,
                                   offset_scale=cfg.offset_scale)
    public = cg.gen_corpus(pub_specs, cfg.public_utterances, seed=seed + 1000, params=params)
    private = cg.gen_corpus(priv_specs, cfg.utterances, seed=seed, params=params)
    return public, private


def _voiced_z(p):
    return normalize(remove_zeros(p).voiced)[0]


def _asi(private, features, seed) -> float:
    data = [ev.LabeledUtterance(f, u.speaker, u.split) for f, u in zip(features, private.utterances)]
    model = ev.train_asi_attack(data, ev.AttackConfig(seed=seed))
    return ev.asi_error(model, [d for d in data if d.split == "test"])


def pitch_study(seed: int, cfg: StudyConfig = StudyConfig(), corpora=None) -> dict:
    """Held-out correlation, naive-baseline correlation and P_ASI for the pitch extractor.

    The naive baseline is calibrated to the whole utterance (scale 8K/eps) so
    both mechanisms carry the same per-utterance epsilon. The non-DP attack
    sees the original pitch.
    """
    public, private = corpora or make_corpora(seed, cfg)
    train_z = [_voiced_z(u.pitch) for u in public.utterances]
    held_z = [_voiced_z(u.pitch) for u in private.utterances]
    rng = make_rng(seed, stream=300)
    out = {"corr": {}, "naive_corr": {}, "p_asi": {}}
    out["p_asi"][math.inf] = _asi(private, [ev.pitch_attack_features(u.pitch) for u in private.utterances], seed)
    for eps in (math.inf,) + tuple(cfg.epsilons):
        model = ae.train(train_z, ae.TrainingConfig(epochs=cfg.pitch_epochs, seed=seed), epsilon=eps,
                         channels=cfg.pitch_channels)
        out["corr"][eps] = float(np.mean([ev.pearson_corr(z, ae.reconstruct(model, z, rng)) for z in held_z]))
        if math.isinf(eps):
            continue
        out["naive_corr"][eps] = float(np.mean(
            [ev.pearson_corr(z, naive_dp_pitch(z, eps, rng, level="utterance")) for z in held_z]))
        feats = [ev.pitch_attack_features(ae.anonymize_pitch(model, u.pitch, draw_pitch_target(rng), rng))
                 for u in private.utterances]
        out["p_asi"][eps] = _asi(private, feats, seed)
    return out


def bn_study(seed: int, cfg: StudyConfig = StudyConfig(), corpora=None) -> dict:
    """Held-out frame accuracy, naive-baseline accuracy and P_ASI for the BN extractor.

    Every model, the non-private one included, starts from the same
    pretrained extractor and gets the same fine-tuning budget through its
    noise layer, so differences come from the noise alone. The naive baseline keeps the non-private
    extractor, noises its features and retrains only the classifier.
    """
    public, private = corpora or make_corpora(seed, cfg)
    train = [(u.features, u.labels) for u in public.utterances]
    held = [(u.features, u.labels) for u in private.utterances]
    rng = make_rng(seed, stream=400)
    tcfg = ae.TrainingConfig(epochs=cfg.bn_epochs, seed=seed, dropout=0.0,
                             learning_rate=cfg.bn_learning_rate)
    base = bn.train_bn(train, tcfg, epsilon=math.inf, bn_dim=cfg.bn_dim, context=cfg.bn_context,
                       input_dim=private.params.feature_dim, num_classes=private.params.num_classes)
    tune = dataclasses.replace(tcfg, epochs=cfg.bn_finetune_epochs)
    out = {"acc": {}, "naive_acc": {}, "p_asi": {}}
    for eps in (math.inf,) + tuple(cfg.epsilons):
        model = bn.train_bn(train, tune, epsilon=eps, model=base)
        out["acc"][eps] = bn.frame_accuracy(model, held, rng)
        out["p_asi"][eps] = _asi(private, [bn.release_bn(model, u.features, rng) for u in private.utterances],
                                 seed)
        if math.isinf(eps):
            continue
        noisy = [(bn.naive_dp_bn(bn.extract_bn(base, O), eps, rng), y) for O, y in train]
        cls = bn.train_classifier(noisy, tcfg, num_classes=base.num_classes, context=cfg.bn_context)
        out["naive_acc"][eps] = bn.frame_accuracy(bn.with_classifier(base, cls, eps), held, rng)
    return out
