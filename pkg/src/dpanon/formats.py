"""On-disk formats: binary matrices, model checkpoints and small text files.

Binary layouts are little-endian with 32-bit float payloads. Each starts with
a four-byte magic and a version byte. Parsers raise :class:`FormatError`
naming the byte offset and what was expected there.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from . import nn
from .autoencoder import PitchAutoencoder
from .bn import AcousticModel
from .dp_core import PrivacyLedger, format_ledger, parse_ledger
from .errors import DataError, FormatError
from .evaluation import ScoreSet

VERSION = 1
PITCH_HEADER = "dpf0 v1"
LABEL_HEADER = "dplab v1"
SCORE_HEADER = "label,score"
_ACTIVATION_CODES = {name: i for i, name in enumerate(nn.ACTIVATIONS)}


class _Reader:
    """Cursor over a byte buffer that reports where and why parsing failed."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.what = what
        self.pos = 0

    def take(self, n: int, expect: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.what}: truncated at offset {self.pos}: expected {n} bytes for {expect}, "
                f"{len(self.data) - self.pos} available"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, expect: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), expect))

    def header(self, magic: bytes) -> None:
        got = self.take(len(magic), f"magic {magic!r}")
        if got != magic:
            raise FormatError(f"{self.what}: offset 0: expected magic {magic!r}, found {got!r}")
        (version,) = self.unpack("B", "version byte")
        if version != VERSION:
            raise FormatError(f"{self.what}: offset {len(magic)}: expected version {VERSION}, found {version}")

    def floats(self, count: int, expect: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, expect), dtype="<f4").astype(np.float64)

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.what}: offset {self.pos}: expected end of data, {len(self.data) - self.pos} bytes remain"
            )


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


# -- matrices -----------------------------------------------------------------------


def _encode_matrix(magic: bytes, X) -> bytes:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("matrix has non-finite entries")
    return magic + struct.pack("<BII", VERSION, *X.shape) + _f32(X)


def _decode_matrix(magic: bytes, data: bytes, what: str) -> np.ndarray:
    r = _Reader(data, what)
    r.header(magic)
    rows, cols = r.unpack("II", "u32 rows and u32 cols")
    X = r.floats(rows * cols, f"{rows}x{cols} float32 payload").reshape(rows, cols)
    r.finish()
    return X


def encode_features(X) -> bytes:
    return _encode_matrix(b"DPAF", X)


def decode_features(data: bytes) -> np.ndarray:
    return _decode_matrix(b"DPAF", data, "DPAF")


def encode_pool(X) -> bytes:
    return _encode_matrix(b"DPXV", X)


def decode_pool(data: bytes) -> np.ndarray:
    return _decode_matrix(b"DPXV", data, "DPXV")


def write_features(path, X) -> None:
    Path(path).write_bytes(encode_features(X))


def read_features(path) -> np.ndarray:
    return decode_features(_read_bytes(path))


def write_pool(path, X) -> None:
    Path(path).write_bytes(encode_pool(X))


def read_pool(path) -> np.ndarray:
    return decode_pool(_read_bytes(path))


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


# -- model checkpoints --------------------------------------------------------------


def _encode_layers(layers) -> bytes:
    out = b""
    for layer in layers:
        out += struct.pack("<BIII", _ACTIVATION_CODES[layer.activation], *layer.kernel.shape)
        out += _f32(layer.kernel) + _f32(layer.bias)
    return out


def _decode_layers(r: _Reader, count: int) -> list[nn.ConvLayer]:
    layers = []
    for i in range(count):
        code, out_ch, in_ch, width = r.unpack("BIII", f"layer {i} header")
        if code >= len(nn.ACTIVATIONS):
            raise FormatError(f"{r.what}: offset {r.pos - 13}: unknown activation code {code}")
        kernel = r.floats(out_ch * in_ch * width, f"layer {i} kernel").reshape(out_ch, in_ch, width)
        bias = r.floats(out_ch, f"layer {i} bias")
        try:
            layers.append(nn.ConvLayer(kernel, bias, nn.ACTIVATIONS[code]))
        except DataError as exc:
            raise FormatError(f"{r.what}: layer {i}: {exc}") from exc
    return layers


def encode_autoencoder(model: PitchAutoencoder) -> bytes:
    """``DPAE`` v1: C, width, epsilon (f64, inf allowed), then 6 layers."""
    head = b"DPAE" + struct.pack("<BIId", VERSION, model.channels, model.width, model.epsilon)
    return head + _encode_layers(model.layers)


def decode_autoencoder(data: bytes) -> PitchAutoencoder:
    r = _Reader(data, "DPAE")
    r.header(b"DPAE")
    C, width, eps = r.unpack("IId", "C, kernel width and epsilon")
    layers = _decode_layers(r, 6)
    r.finish()
    try:
        model = PitchAutoencoder(layers[:3], layers[3:], eps)
    except DataError as exc:
        raise FormatError(f"DPAE: inconsistent layers: {exc}") from exc
    if (model.channels, model.width) != (C, width):
        raise FormatError(f"DPAE: header says C={C}, width={width} but layers disagree")
    return model


def encode_acoustic_model(model: AcousticModel) -> bytes:
    """``DPBN`` v1: layer counts, epsilon (f64), then extractor and classifier layers."""
    head = b"DPBN" + struct.pack("<BIId", VERSION, len(model.extractor), len(model.classifier),
                                 model.epsilon)
    return head + _encode_layers(model.layers)


def decode_acoustic_model(data: bytes) -> AcousticModel:
    r = _Reader(data, "DPBN")
    r.header(b"DPBN")
    n_ext, n_cls, eps = r.unpack("IId", "layer counts and epsilon")
    if n_ext < 1 or n_cls < 1 or n_ext + n_cls > 64:
        raise FormatError(f"DPBN: offset 5: implausible layer counts {n_ext}/{n_cls}")
    layers = _decode_layers(r, n_ext + n_cls)
    r.finish()
    try:
        return AcousticModel(layers[:n_ext], layers[n_ext:], eps)
    except DataError as exc:
        raise FormatError(f"DPBN: inconsistent layers: {exc}") from exc


def save_autoencoder(path, model: PitchAutoencoder) -> None:
    Path(path).write_bytes(encode_autoencoder(model))


def load_autoencoder(path) -> PitchAutoencoder:
    return decode_autoencoder(_read_bytes(path))


def save_acoustic_model(path, model: AcousticModel) -> None:
    Path(path).write_bytes(encode_acoustic_model(model))


def load_acoustic_model(path) -> AcousticModel:
    return decode_acoustic_model(_read_bytes(path))


# -- text formats -------------------------------------------------------------------


def format_pitch(p) -> str:
    """Header ``dpf0 v1`` then one value per frame; float32 values, shortest repr."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DataError("pitch must be a 1-D sequence")
    return PITCH_HEADER + "\n" + "".join(f"{repr(float(v))}\n" for v in p.astype(np.float32))


def parse_pitch(text: str) -> np.ndarray:
    lines = text.splitlines()
    if not lines or lines[0].strip() != PITCH_HEADER:
        raise FormatError(f"pitch file: line 1: expected header {PITCH_HEADER!r}")
    vals = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            v = float(line)
        except ValueError:
            raise FormatError(f"pitch file: line {n}: expected a decimal value, got {line!r}") from None
        if not math.isfinite(v) or v < 0:
            raise FormatError(f"pitch file: line {n}: pitch must be finite and >= 0")
        vals.append(v)
    return np.asarray(vals, dtype=np.float64)


def write_pitch(path, p) -> None:
    Path(path).write_text(format_pitch(p))


def read_pitch(path) -> np.ndarray:
    return parse_pitch(_read_text(path))


def format_labels(labels) -> str:
    return LABEL_HEADER + "\n" + "".join(f"{int(v)}\n" for v in labels)


def parse_labels(text: str) -> np.ndarray:
    lines = text.splitlines()
    if not lines or lines[0].strip() != LABEL_HEADER:
        raise FormatError(f"label file: line 1: expected header {LABEL_HEADER!r}")
    try:
        return np.array([int(l) for l in lines[1:] if l.strip()], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"label file: {exc}") from exc


def format_scores(scores: ScoreSet) -> str:
    rows = [f"mated,{float(s)!r}" for s in scores.mated]
    rows += [f"nonmated,{float(s)!r}" for s in scores.nonmated]
    return SCORE_HEADER + "\n" + "".join(r + "\n" for r in rows)


def parse_scores(text: str) -> ScoreSet:
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCORE_HEADER:
        raise FormatError(f"score file: line 1: expected header {SCORE_HEADER!r}")
    mated, nonmated = [], []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        label, _, value = line.partition(",")
        try:
            s = float(value)
        except ValueError:
            raise FormatError(f"score file: line {n}: expected a number, got {value!r}") from None
        if label == "mated":
            mated.append(s)
        elif label == "nonmated":
            nonmated.append(s)
        else:
            raise FormatError(f"score file: line {n}: label must be mated or nonmated, got {label!r}")
    return ScoreSet(np.array(mated), np.array(nonmated))


def write_scores(path, scores: ScoreSet) -> None:
    Path(path).write_text(format_scores(scores))


def read_scores(path) -> ScoreSet:
    return parse_scores(_read_text(path))


def write_ledger(path, ledger: PrivacyLedger) -> None:
    Path(path).write_text(format_ledger(ledger))


def read_ledger(path) -> PrivacyLedger:
    return parse_ledger(_read_text(path))


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment; later keys win."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise FormatError(f"config: line {n}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def read_config(path) -> dict[str, str]:
    return parse_config(_read_text(path))


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(manifest, dict) or "utterances" not in manifest:
        raise FormatError("manifest: expected an object with an 'utterances' entry")
    return manifest


def write_corpus(directory, corpus) -> Path:
    """Write every utterance as pitch/feature/label files plus ``manifest.json``."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = {}
    for u in corpus.utterances:
        files = {"pitch": f"{u.utt_id}.f0", "features": f"{u.utt_id}.dpaf", "labels": f"{u.utt_id}.lab"}
        write_pitch(root / files["pitch"], u.pitch)
        write_features(root / files["features"], u.features)
        (root / files["labels"]).write_text(format_labels(u.labels))
        entries[u.utt_id] = dict(files, speaker=u.speaker, split=u.split)
    manifest = {"generator": corpus.describe(), "utterances": entries}
    write_manifest(root / "manifest.json", manifest)
    return root / "manifest.json"


def read_corpus(manifest_path) -> list[dict]:
    """Load a manifest's utterances as dicts with arrays and metadata, in id order."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    out = []
    for utt_id in sorted(manifest["utterances"]):
        e = manifest["utterances"][utt_id]
        try:
            pitch = read_pitch(root / e["pitch"])
            feats = read_features(root / e["features"])
            labels = parse_labels(_read_text(root / e["labels"]))
            speaker, split = e["speaker"], e["split"]
        except KeyError as exc:
            raise FormatError(f"manifest: utterance {utt_id!r} lacks field {exc}") from None
        if not (pitch.size == feats.shape[0] == labels.size):
            raise FormatError(f"manifest: utterance {utt_id!r} has mismatched frame counts")
        out.append({"utt_id": utt_id, "pitch": pitch, "features": feats, "labels": labels,
                    "speaker": speaker, "split": split})
    return out
