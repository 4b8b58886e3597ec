import math
import struct
import wave

import numpy as np
import pytest

from dpanon import autoencoder as ae
from dpanon import bn, formats
from dpanon.dp_core import PrivacyLedger, make_rng
from dpanon.errors import DataError, FormatError
from dpanon.evaluation import ScoreSet
from dpanon.features import (LOG_FLOOR, WaveformRecord, from_float, hz_to_mel, logmel_features,
                             mel_filterbank, mel_to_hz, read_wav, write_wav)


def test_feature_matrix_round_trip_is_bitwise(tmp_path):
    X = make_rng(0).normal(size=(37, 13)).astype(np.float32).astype(np.float64)
    formats.write_features(tmp_path / "x.dpaf", X)
    back = formats.read_features(tmp_path / "x.dpaf")
    assert back.tobytes() == X.tobytes()
    data = formats.encode_features(X)
    assert formats.encode_features(formats.decode_features(data)) == data


def test_pool_round_trip(tmp_path):
    X = make_rng(1).normal(size=(5, 7)).astype(np.float32).astype(np.float64)
    formats.write_pool(tmp_path / "p.dpxv", X)
    np.testing.assert_array_equal(formats.read_pool(tmp_path / "p.dpxv"), X)


def test_matrix_layout():
    data = formats.encode_features(np.array([[1.0, 2.0]]))
    assert data[:4] == b"DPAF" and data[4] == 1
    assert struct.unpack("<II", data[5:13]) == (1, 2)
    assert struct.unpack("<2f", data[13:]) == (1.0, 2.0)


def test_truncated_matrix_names_expected_and_available():
    data = formats.encode_features(np.ones((4, 3)))
    with pytest.raises(FormatError, match=r"offset 13: expected 48 bytes .* 40 available"):
        formats.decode_features(data[:-8])


@pytest.mark.parametrize("mutate,pattern", [
    (lambda d: b"XXXX" + d[4:], "expected magic"),
    (lambda d: d[:4] + b"\x02" + d[5:], "expected version 1, found 2"),
    (lambda d: d + b"\x00", "expected end of data"),
    (lambda d: d[:7], "u32 rows"),
])
def test_corrupted_matrix(mutate, pattern):
    data = formats.encode_features(np.ones((2, 2)))
    with pytest.raises(FormatError, match=pattern):
        formats.decode_features(mutate(data))


def test_pool_magic_is_distinct():
    with pytest.raises(FormatError):
        formats.decode_pool(formats.encode_features(np.ones((1, 1))))


def test_matrix_rejects_non_finite():
    with pytest.raises(DataError):
        formats.encode_features(np.array([[np.inf]]))


def _f32_model(model):
    for layer in model.layers:
        layer.kernel[...] = layer.kernel.astype(np.float32)
        layer.bias[...] = layer.bias.astype(np.float32)
    return model


def test_autoencoder_checkpoint_round_trip(tmp_path):
    m = _f32_model(ae.PitchAutoencoder.init(3, 5, 12.5, seed=2))
    formats.save_autoencoder(tmp_path / "m.dpae", m)
    back = formats.load_autoencoder(tmp_path / "m.dpae")
    assert back.epsilon == 12.5
    for a, b in zip(m.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()
    assert formats.encode_autoencoder(back) == formats.encode_autoencoder(m)


def test_acoustic_checkpoint_round_trip(tmp_path):
    m = _f32_model(bn.AcousticModel.init(input_dim=6, bn_dim=4, num_classes=5, context=3, seed=1))
    formats.save_acoustic_model(tmp_path / "m.dpbn", m)
    back = formats.load_acoustic_model(tmp_path / "m.dpbn")
    assert math.isinf(back.epsilon)
    assert [l.activation for l in back.layers] == [l.activation for l in m.layers]
    for a, b in zip(m.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()


def test_truncated_checkpoint():
    data = formats.encode_autoencoder(ae.PitchAutoencoder.init(2))
    with pytest.raises(FormatError, match="truncated"):
        formats.decode_autoencoder(data[:-3])
    with pytest.raises(FormatError):
        formats.decode_acoustic_model(data)


def test_pitch_text_round_trip(tmp_path):
    p = np.r_[0.0, 123.456, 0.0, 98.1].astype(np.float32).astype(np.float64)
    formats.write_pitch(tmp_path / "a.f0", p)
    assert (tmp_path / "a.f0").read_text().startswith("dpf0 v1\n")
    np.testing.assert_array_equal(formats.read_pitch(tmp_path / "a.f0"), p)


@pytest.mark.parametrize("text,pattern", [("", "header"), ("dpf0 v2\n1.0\n", "header"),
                                          ("dpf0 v1\nabc\n", "line 2"), ("dpf0 v1\n-3\n", "line 2")])
def test_pitch_text_errors(text, pattern):
    with pytest.raises(FormatError, match=pattern):
        formats.parse_pitch(text)


def test_labels_round_trip():
    y = np.array([0, 3, 3, 9])
    np.testing.assert_array_equal(formats.parse_labels(formats.format_labels(y)), y)
    with pytest.raises(FormatError):
        formats.parse_labels("dplab v1\nx\n")


def test_scores_round_trip(tmp_path):
    s = ScoreSet([0.9, 0.1 + 0.2], [-0.5])
    formats.write_scores(tmp_path / "s.csv", s)
    back = formats.read_scores(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.mated, s.mated)
    np.testing.assert_array_equal(back.nonmated, s.nonmated)
    with pytest.raises(FormatError):
        formats.parse_scores("label,score\nmaybe,1.0\n")


def test_ledger_file_round_trip(tmp_path):
    ledger = PrivacyLedger(delta_budget=1e-5).add("pitch", 1.0).add("bn_frame", 0.5, 100)
    formats.write_ledger(tmp_path / "l.txt", ledger)
    assert formats.read_ledger(tmp_path / "l.txt") == ledger


def test_config_parsing():
    cfg = formats.parse_config("# top\nseed = 7\nepsilon=1 # trailing\n\nseed=8\n")
    assert cfg == {"seed": "8", "epsilon": "1"}
    with pytest.raises(FormatError, match="line 1"):
        formats.parse_config("no equals sign\n")


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        formats.read_config(tmp_path / "absent.cfg")
    with pytest.raises(DataError):
        formats.read_features(tmp_path / "absent.dpaf")


def test_corpus_round_trip(tmp_path, small_corpus):
    manifest = formats.write_corpus(tmp_path / "c", small_corpus)
    loaded = formats.read_corpus(manifest)
    assert len(loaded) == len(small_corpus.utterances)
    meta = formats.read_manifest(manifest)
    assert meta["generator"]["generator_version"] == 1
    by_id = {u.utt_id: u for u in small_corpus.utterances}
    for item in loaded:
        u = by_id[item["utt_id"]]
        np.testing.assert_array_equal(item["pitch"], u.pitch.astype(np.float32))
        np.testing.assert_array_equal(item["features"], u.features.astype(np.float32))
        np.testing.assert_array_equal(item["labels"], u.labels)
        assert (item["speaker"], item["split"]) == (u.speaker, u.split)


def test_bad_manifest(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(FormatError):
        formats.read_manifest(tmp_path / "m.json")
    (tmp_path / "m.json").write_text("[]")
    with pytest.raises(FormatError):
        formats.read_manifest(tmp_path / "m.json")


def test_wav_round_trip(tmp_path):
    w = from_float(0.3 * np.sin(np.arange(800) / 5), 16000)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000
    np.testing.assert_array_equal(back.samples, w.samples)


def test_non_mono_wav_is_rejected(tmp_path):
    with wave.open(str(tmp_path / "st.wav"), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(16000)
        f.writeframes(b"\x00" * 400)
    with pytest.raises(FormatError, match="unsupported format"):
        read_wav(tmp_path / "st.wav")


def test_garbage_wav(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"RIFF0000junk")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "g.wav")


def test_waveform_validation():
    with pytest.raises(DataError):
        WaveformRecord(np.zeros((2, 2), dtype=np.int16), 16000)
    with pytest.raises(DataError):
        WaveformRecord(np.zeros(4), 16000)


def test_mel_scale_round_trip():
    f = np.array([0.0, 440.0, 4000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(1000.0) == pytest.approx(999.9855, abs=1e-3)


@pytest.mark.parametrize("n", [400, 401, 1234, 16000])
def test_frame_count(n):
    w = WaveformRecord(np.ones(n, dtype=np.int16), 16000)
    assert logmel_features(w).shape == ((n - 400) // 160 + 1, 20)


def test_tone_lands_in_its_band():
    sr = 16000
    tone = 1000.0
    w = from_float(0.5 * np.sin(2 * np.pi * tone * np.arange(sr) / sr), sr)
    F = logmel_features(w, n_mels=20)
    fb = mel_filterbank(20, 512, sr)
    expected = int(np.argmax(fb[:, int(round(tone * 512 / sr))]))
    assert np.all(F.argmax(axis=1) == expected)


def test_silence_hits_the_floor():
    F = logmel_features(WaveformRecord(np.zeros(1600, dtype=np.int16), 16000))
    np.testing.assert_allclose(F, math.log(LOG_FLOOR))


def test_logmel_rejects():
    with pytest.raises(DataError):
        logmel_features(WaveformRecord(np.zeros(1000, dtype=np.int16), 4000))
    with pytest.raises(DataError):
        logmel_features(WaveformRecord(np.zeros(100, dtype=np.int16), 16000))
