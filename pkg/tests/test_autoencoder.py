import math

import numpy as np
import pytest

from dpanon import autoencoder as ae
from dpanon import nn
from dpanon.dp_core import make_rng
from dpanon.errors import CalibrationError, DataError
from dpanon.pitch import PitchStats, normalize, remove_zeros
from helpers import autoencoder_gradient_error


def zero_model(channels=3, epsilon=math.inf):
    m = ae.PitchAutoencoder.init(channels, 5, epsilon, seed=0)
    for layer in m.layers:
        layer.kernel[...] = 0.0
    return m


def test_latent_range_and_width():
    model = ae.PitchAutoencoder.init(4, 5, seed=1)
    r = make_rng(0)
    for K in (5, 147, 3261):
        h = ae.encode(model, r.normal(0, 50, K))
        assert h.shape == (4, K)
        assert np.all((h >= 0) & (h <= 1))


def test_zero_weight_encoder_outputs_sigmoid_bias():
    m = zero_model()
    h = ae.encode(m, np.linspace(-2, 2, 9))
    expected = nn.sigmoid(m.encoder[2].bias)
    np.testing.assert_allclose(h, np.repeat(expected[:, None], 9, axis=1))


def test_encode_rejects_short_input():
    with pytest.raises(DataError):
        ae.encode(ae.PitchAutoencoder.init(2, 5), np.zeros(3))


def test_latent_noise_scale_and_mean_abs_deviation():
    assert ae.latent_noise_scale(8, 100, 100.0) == 8.0
    h = np.full((8, 12500), 0.5)
    out = ae.perturb_latent(h, 12500.0, make_rng(2))
    # C*K = 1e5 entries, scale = 1e5 / 12500 = 8
    assert out.shape == h.shape
    assert np.mean(np.abs(out - h)) == pytest.approx(8.0, rel=0.03)


def test_perturb_rejects():
    with pytest.raises(CalibrationError):
        ae.perturb_latent(np.zeros((1, 3)), 0.0, make_rng(0))
    with pytest.raises(DataError):
        ae.perturb_latent(np.full((1, 3), 1.5), 1.0, make_rng(0))


def test_clip():
    np.testing.assert_array_equal(ae.clip_latent([[1.7, -0.3, 0.5]]), [[1.0, 0.0, 0.5]])
    m = make_rng(0).normal(size=(3, 7))
    np.testing.assert_array_equal(ae.clip_latent(ae.clip_latent(m)), ae.clip_latent(m))
    inside = make_rng(1).random((3, 7))
    np.testing.assert_array_equal(ae.clip_latent(inside), inside)


def test_decode_shapes_and_zero_model():
    m = zero_model()
    out = ae.decode(m, np.full((3, 11), 0.4))
    assert out.shape == (11,)
    np.testing.assert_allclose(out, m.decoder[2].bias[0])
    assert np.all(np.isfinite(ae.decode(ae.PitchAutoencoder.init(3), make_rng(0).random((3, 20)))))
    with pytest.raises(DataError):
        ae.decode(m, np.zeros((2, 11)))


def test_correlation_loss():
    z = make_rng(0).normal(size=30)
    assert ae.correlation_loss([(z, z)]) == pytest.approx(0.0, abs=1e-12)
    assert ae.correlation_loss([(z, -z)]) == pytest.approx(2.0, abs=1e-12)
    y = make_rng(1).normal(size=30)
    mx, my = sum(z) / 30, sum(y) / 30
    cov = sum((a - mx) * (b - my) for a, b in zip(z, y))
    sx = math.sqrt(sum((a - mx) ** 2 for a in z))
    sy = math.sqrt(sum((b - my) ** 2 for b in y))
    assert ae.correlation_loss([(z, y)]) == pytest.approx(1 - cov / (sx * sy), abs=1e-12)


def test_correlation_loss_rejects():
    with pytest.raises(DataError):
        ae.correlation_loss([])
    with pytest.raises(DataError):
        ae.correlation_loss([(np.zeros(3), np.zeros(4))])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    assert autoencoder_gradient_error(seed) < 1e-4


def test_saturated_latent_blocks_encoder_gradient():
    model = ae.PitchAutoencoder.init(2, 5, 1.0, seed=0)
    z = make_rng(0).normal(size=10)
    _, grads = ae.loss_gradient(model, z, np.full((2, 10), 5.0))
    assert all(np.all(g == 0) for g in grads[:6])


def test_loss_gradient_rejects_bad_noise_shape():
    with pytest.raises(DataError):
        ae.loss_gradient(ae.PitchAutoencoder.init(2), np.zeros(10), np.zeros((3, 10)))


def test_noise_free_training_reduces_loss():
    r = make_rng(5)
    data = [normalize(np.sin(np.arange(40) / (3 + i)) + 0.1 * r.normal(size=40))[0] for i in range(8)]
    model = ae.train(data, ae.TrainingConfig(epochs=30, seed=1, learning_rate=3e-3, dropout=0.0),
                     channels=2)
    assert model.loss_trace[-1] < model.loss_trace[0]


def _pitch_sets(corpus):
    z = [normalize(remove_zeros(u.pitch).voiced)[0] for u in corpus.utterances]
    return z[::2], z[1::2]


def test_training_is_deterministic_and_makes_progress(small_corpus):
    train, _ = _pitch_sets(small_corpus)
    cfg = ae.TrainingConfig(epochs=5, seed=3)
    a = ae.train(train, cfg, epsilon=100.0, channels=1)
    b = ae.train(train, cfg, epsilon=100.0, channels=1)
    assert a.loss_trace == b.loss_trace
    assert a.loss_trace[-1] < a.loss_trace[0]


def test_training_rejects_empty():
    with pytest.raises(DataError):
        ae.train([])
    with pytest.raises(DataError):
        ae.train([np.zeros(2)])
    with pytest.raises(DataError):
        ae.TrainingConfig(batch_size=4)


def test_more_noise_less_correlation(small_corpus):
    train, held = _pitch_sets(small_corpus)
    corr = {}
    for eps in (100.0, 1.0):
        model = ae.train(train, ae.TrainingConfig(epochs=5, seed=0), epsilon=eps, channels=1)
        r = make_rng(1)
        corr[eps] = np.mean([ae.pearson(z, ae.reconstruct(model, z, r)) for z in held])
    assert corr[100.0] > corr[1.0]


def test_anonymize_pitch_contract(small_corpus):
    model = ae.PitchAutoencoder.init(2, 5, 10.0, seed=0)
    target = PitchStats(180.0, 18.0)
    r = make_rng(0)
    for u in small_corpus.utterances[:10]:
        out = ae.anonymize_pitch(model, u.pitch, target, r)
        assert out.shape == u.pitch.shape
        np.testing.assert_array_equal(out == 0, u.pitch == 0)
        v = out[out > 0]
        assert v.mean() == pytest.approx(180.0, rel=1e-6)
        assert v.std() == pytest.approx(18.0, rel=1e-6)


def test_anonymize_pitch_floors_voiced_frames():
    model = ae.PitchAutoencoder.init(2, 5, 10.0, seed=0)
    p = np.r_[0, np.linspace(100, 200, 30), 0]
    out = ae.anonymize_pitch(model, p, PitchStats(30.0, 60.0), make_rng(0))
    assert np.all(out[1:-1] >= ae.MIN_VOICED_HZ)


def test_dp_model_needs_rng():
    model = ae.PitchAutoencoder.init(2, 5, 10.0)
    with pytest.raises(DataError):
        ae.reconstruct(model, np.zeros(10), None)


def test_model_validation():
    m = ae.PitchAutoencoder.init(2)
    with pytest.raises(DataError):
        ae.PitchAutoencoder(m.encoder[:2], m.decoder)
    with pytest.raises(CalibrationError):
        ae.PitchAutoencoder(m.encoder, m.decoder, epsilon=0.0)
