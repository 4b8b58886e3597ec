"""Command-line entry point: one pipeline stage per invocation.

Global flags ``--seed``, ``--epsilon``, ``--delta`` and ``--config`` are
accepted by every subcommand. A config file holds flat ``key=value`` lines
(keys are flag names without the dashes); command-line flags win over it.
Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from pathlib import Path

import numpy as np

from . import anonymizer, autoencoder, bn, corpus, evaluation, formats, pitch
from .dp_core import compose_advanced, compose_simple, make_rng, MechanismRecord
from .errors import DpanonError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
REQUIRED = object()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _delta(text: str) -> float:
    v = float(text)
    if not 0 <= v < 1:
        raise ValueError("delta must lie in [0, 1)")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


GLOBALS = {
    "seed": (_u64, 0),
    "epsilon": (_positive, math.inf),
    "delta": (_delta, 1e-5),
    "config": (str, None),
}

# command -> {dest: (type, default)}
OPTIONS: dict[str, dict] = {}
HANDLERS = {}


def command(name: str, help: str, **opts):
    """Register a subcommand; each option is ``dest=(type, default, help)``."""
    def wrap(fn):
        OPTIONS[name] = {"help": help, "opts": opts}
        HANDLERS[name] = fn
        return fn
    return wrap


def _add_globals(p):
    p.add_argument("--seed", type=str, default=argparse.SUPPRESS, help="RNG seed (u64)")
    p.add_argument("--epsilon", type=str, default=argparse.SUPPRESS, help="privacy parameter")
    p.add_argument("--delta", type=str, default=argparse.SUPPRESS, help="delta for advanced composition")
    p.add_argument("--config", type=str, default=argparse.SUPPRESS, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    main = _Parser(prog="dpanon", description="Differentially private speaker anonymization tools")
    _add_globals(main)
    sub = main.add_subparsers(dest="command", parser_class=_Parser)
    for name, spec in OPTIONS.items():
        p = sub.add_parser(name, help=spec["help"])
        _add_globals(p)
        for dest, (_, default, help_text) in spec["opts"].items():
            suffix = " (required)" if default is REQUIRED else f" (default {default})"
            p.add_argument("--" + dest.replace("_", "-"), dest=dest, type=str,
                           default=argparse.SUPPRESS, help=help_text + suffix)
    return main


def resolve(argv) -> argparse.Namespace:
    """Parse flags, then fill gaps from the config file and then from defaults."""
    ns = build_parser().parse_args(argv)
    if not getattr(ns, "command", None):
        raise UsageError("dpanon: a subcommand is required")
    given = vars(ns)
    cfg = formats.read_config(given["config"]) if "config" in given else {}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    table = {k: (t, d) for k, (t, d) in GLOBALS.items()}
    table.update({k: (t, d) for k, (t, d, _) in OPTIONS[ns.command]["opts"].items()})
    out = {"command": ns.command}
    for dest, (conv, default) in table.items():
        if dest in given:
            raw, source = given[dest], "flag"
        elif dest in cfg:
            raw, source = cfg[dest], "config"
        elif default is REQUIRED:
            raise UsageError(f"dpanon {ns.command}: --{dest.replace('_', '-')} is required")
        else:
            out[dest] = default
            continue
        try:
            out[dest] = conv(raw)
        except ValueError as exc:
            msg = f"dpanon {ns.command}: bad value {raw!r} for {dest} ({exc})"
            if source == "config":
                raise DpanonError(msg) from None
            raise UsageError(msg) from None
    return argparse.Namespace(**out)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = resolve(argv)
        HANDLERS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        build_parser().print_usage(sys.stderr)
        return EXIT_USAGE
    except (DpanonError, OSError) as exc:
        print(f"dpanon: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _fmt(x: float) -> str:
    return f"{x:.12g}"


# -- subcommands --------------------------------------------------------------------


@command("account", "simple and advanced composition of k epsilon-DP releases",
         k=(_count, REQUIRED, "number of composed releases"))
def _account(args):
    if math.isinf(args.epsilon):
        raise UsageError("dpanon account: --epsilon is required")
    simple = compose_simple([MechanismRecord("release", args.epsilon, args.k)])
    line = f"simple={_fmt(simple)}"
    if args.delta > 0:
        line += f" advanced={math.floor(compose_advanced(args.epsilon, args.k, args.delta))}"
    print(line)


@command("gen-corpus", "write a synthetic multi-speaker corpus",
         out=(Path, REQUIRED, "output directory"),
         speakers=(_count, 20, "number of speakers"),
         utterances=(_count, 50, "utterances per speaker"),
         min_frames=(_count, corpus.GeneratorParams.min_frames, "shortest utterance"),
         max_frames=(_count, corpus.GeneratorParams.max_frames, "longest utterance"))
def _gen_corpus(args):
    params = corpus.GeneratorParams(min_frames=args.min_frames, max_frames=args.max_frames)
    specs = corpus.random_speakers(args.speakers, make_rng(args.seed, stream=20), params)
    c = corpus.gen_corpus(specs, args.utterances, seed=args.seed, params=params)
    print(formats.write_corpus(args.out, c))


def _voiced_z(p):
    return pitch.normalize(pitch.remove_zeros(p).voiced)[0]


@command("train-pitch", "train the pitch autoencoder on a corpus manifest",
         corpus=(Path, REQUIRED, "manifest.json"),
         out=(Path, REQUIRED, "output DPAE checkpoint"),
         epochs=(_count, 15, "training epochs"),
         channels=(_count, autoencoder.DEFAULT_CHANNELS, "latent channels C"))
def _train_pitch(args):
    seqs = []
    for u in formats.read_corpus(args.corpus):
        if np.count_nonzero(u["pitch"]) >= autoencoder.DEFAULT_WIDTH:
            seqs.append(_voiced_z(u["pitch"]))
    cfg = autoencoder.TrainingConfig(epochs=args.epochs, seed=args.seed % 2**32)
    model = autoencoder.train(seqs, cfg, epsilon=args.epsilon, channels=args.channels)
    formats.save_autoencoder(args.out, model)
    print(f"loss={_fmt(model.loss_trace[-1])}")


@command("anonymize-pitch", "release one pitch file through a trained autoencoder",
         model=(Path, REQUIRED, "DPAE checkpoint"),
         pitch=(Path, REQUIRED, "input dpf0 file"),
         out=(Path, REQUIRED, "output dpf0 file"),
         target_mean=(_positive, 150.0, "target mean pitch in Hz"),
         target_std=(_positive, 15.0, "target pitch std in Hz"))
def _anonymize_pitch(args):
    model = formats.load_autoencoder(args.model)
    p = formats.read_pitch(args.pitch)
    out = autoencoder.anonymize_pitch(model, p, pitch.PitchStats(args.target_mean, args.target_std),
                                      make_rng(args.seed, stream=30))
    formats.write_pitch(args.out, out)


@command("train-bn", "train the bottleneck acoustic model on a corpus manifest",
         corpus=(Path, REQUIRED, "manifest.json"),
         out=(Path, REQUIRED, "output DPBN checkpoint"),
         epochs=(_count, 20, "training epochs"),
         bn_dim=(_count, 16, "bottleneck width M"),
         classes=(_count, 10, "number of frame classes"))
def _train_bn(args):
    items = [(u["features"], u["labels"]) for u in formats.read_corpus(args.corpus)]
    if not items:
        raise DpanonError("corpus is empty")
    cfg = autoencoder.TrainingConfig(epochs=args.epochs, seed=args.seed % 2**32, dropout=0.0)
    model = bn.train_bn(items, cfg, epsilon=args.epsilon, input_dim=items[0][0].shape[1],
                        bn_dim=args.bn_dim, num_classes=args.classes)
    formats.save_acoustic_model(args.out, model)
    print(f"loss={_fmt(model.loss_trace[-1])}")


@command("extract-bn", "release bottleneck features for one DPAF feature file",
         model=(Path, REQUIRED, "DPBN checkpoint"),
         features=(Path, REQUIRED, "input DPAF file"),
         out=(Path, REQUIRED, "output DPAF file"))
def _extract_bn(args):
    model = formats.load_acoustic_model(args.model)
    O = formats.read_features(args.features)
    formats.write_features(args.out, bn.release_bn(model, O, make_rng(args.seed, stream=31)))


def _speaker_stream(speaker_id: str) -> int:
    # a stable per-speaker stream makes speaker-level choices repeat across runs
    return 1000 + int.from_bytes(hashlib.sha256(speaker_id.encode()).digest()[:4], "little")


@command("select-target", "pick a pseudo-speaker vector from a DPXV pool",
         pool=(Path, REQUIRED, "DPXV pool"),
         out=(Path, REQUIRED, "output DPXV file (one row)"),
         mode=(str, "utterance", "utterance or speaker"),
         speaker_id=(str, None, "speaker label (speaker mode)"))
def _select_target(args):
    X = formats.read_pool(args.pool)
    assignment = anonymizer.cluster_pool(X)
    if args.mode == "speaker":
        if args.speaker_id is None:
            raise UsageError("dpanon select-target: speaker mode needs --speaker-id")
        rng = make_rng(args.seed, stream=_speaker_stream(args.speaker_id))
    else:
        rng = make_rng(args.seed, stream=32)
    sel = anonymizer.select_target(assignment, X, args.mode, args.speaker_id, rng,
                                   anonymizer.TargetCache())
    formats.write_pool(args.out, sel.vector[None, :])
    print(f"cluster={sel.cluster} members={','.join(map(str, sel.members))}")


@command("anonymize", "anonymize every utterance of a manifest into per-utterance bundles",
         corpus=(Path, REQUIRED, "manifest.json"),
         pitch_model=(Path, REQUIRED, "DPAE checkpoint"),
         bn_model=(Path, REQUIRED, "DPBN checkpoint"),
         pool=(Path, REQUIRED, "DPXV pool"),
         out=(Path, REQUIRED, "output directory"),
         mode=(str, "utterance", "target assignment: utterance or speaker"))
def _anonymize(args):
    pm = formats.load_autoencoder(args.pitch_model)
    bm = formats.load_acoustic_model(args.bn_model)
    X = formats.read_pool(args.pool)
    assignment = anonymizer.cluster_pool(X)
    cache = anonymizer.TargetCache()
    rng = make_rng(args.seed, stream=33)
    root = Path(args.out)
    total = 0.0
    for u in formats.read_corpus(args.corpus):
        target_stats = anonymizer.draw_pitch_target(rng)
        bundle = anonymizer.anonymize_utterance(
            pm, bm, u["pitch"], u["features"], X, pm.epsilon, bm.epsilon, target_stats, rng,
            assignment=assignment, mode=args.mode, speaker_id=u["speaker"], cache=cache,
            delta=args.delta,
        )
        anonymizer.write_bundle(root / u["utt_id"], bundle)
        total = max(total, bundle.simple_total())
    print(f"bundles={root} max_simple_epsilon={_fmt(total)}")


def _labeled(args, kind):
    """Labeled feature matrices from a manifest, optionally swapped for bundle contents."""
    out = []
    for u in formats.read_corpus(args.corpus):
        p, feats = u["pitch"], u["features"]
        if args.bundles is not None:
            b = anonymizer.read_bundle(Path(args.bundles) / u["utt_id"])
            p, feats = b.pitch, b.bn
        X = evaluation.pitch_attack_features(p) if kind == "pitch" else feats
        out.append(evaluation.LabeledUtterance(X, u["speaker"], u["split"]))
    return out


@command("attack-asi", "train the identification attack and report P_ASI on the test split",
         corpus=(Path, REQUIRED, "manifest.json (speakers and splits)"),
         bundles=(str, None, "bundle directory replacing the raw streams"),
         kind=(str, "features", "pitch or features"))
def _attack_asi(args):
    if args.kind not in ("pitch", "features"):
        raise UsageError("dpanon attack-asi: --kind must be pitch or features")
    data = _labeled(args, args.kind)
    model = evaluation.train_asi_attack(data, evaluation.AttackConfig(seed=args.seed % 2**32))
    print(evaluation.MetricReport(p_asi=evaluation.asi_error(
        model, [d for d in data if d.split == "test"])).as_text(), end="")


@command("score-asv", "cosine linkage scores of test utterances against enrolled speakers",
         corpus=(Path, REQUIRED, "manifest.json (speakers and splits)"),
         bundles=(str, None, "bundle directory replacing the raw streams"),
         kind=(str, "features", "pitch or features"),
         out=(Path, REQUIRED, "output score CSV"))
def _score_asv(args):
    if args.kind not in ("pitch", "features"):
        raise UsageError("dpanon score-asv: --kind must be pitch or features")
    data = _labeled(args, args.kind)
    enroll: dict = {}
    for d in data:
        if d.split == "train":
            enroll.setdefault(d.speaker, []).append(d.features)
    center = np.mean([evaluation.pool_stats(f) for fs in enroll.values() for f in fs], axis=0)
    trials = [(d.features, d.speaker, claim) for d in data if d.split == "test" for claim in sorted(enroll)]
    scores = evaluation.linkage_scores(enroll, trials, center=center)
    formats.write_scores(args.out, scores)
    print(f"mated={scores.mated.size} nonmated={scores.nonmated.size}")


def _read_lines(path):
    return formats._read_text(path).splitlines()


@command("metrics", "EER, unlinkability and WER from score and transcript files",
         scores=(str, None, "score CSV"),
         bins=(_count, 50, "histogram bins for unlinkability"),
         ref=(str, None, "reference transcripts, one utterance per line"),
         hyp=(str, None, "hypothesis transcripts, one utterance per line"))
def _metrics(args):
    report = evaluation.MetricReport()
    if args.scores is None and args.ref is None:
        raise UsageError("dpanon metrics: give --scores and/or --ref/--hyp")
    if args.scores is not None:
        s = formats.read_scores(args.scores)
        report.p_asv_eer = 100.0 * evaluation.eer(s)
        report.p_asv_unlinkability = evaluation.unlinkability(s, args.bins)
    if args.ref is not None:
        if args.hyp is None:
            raise UsageError("dpanon metrics: --ref needs --hyp")
        ref, hyp = _read_lines(args.ref), _read_lines(args.hyp)
        if len(ref) != len(hyp):
            raise DpanonError(f"{len(ref)} reference lines but {len(hyp)} hypothesis lines")
        edits = sum(evaluation.edit_distance(r.split(), h.split()) for r, h in zip(ref, hyp))
        words = sum(len(r.split()) for r in ref)
        if words == 0:
            raise DpanonError("reference transcripts are empty")
        report.u_asr = 100.0 - 100.0 * edits / words
    print(report.as_text(), end="")


if __name__ == "__main__":
    sys.exit(main())
