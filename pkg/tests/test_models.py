import numpy as np
import pytest

from sadm import autodiff as ad
from sadm.autodiff import ShapeError, Tape
from sadm.checkpoint import from_bytes, to_bytes
from sadm.models import denoise, denoise_array, embed, init_denoiser, init_encoder, time_features
from sadm.structure import structural_loss
from sadm.trainer import TrainConfig, new_state


def test_default_shapes_and_parameter_counts():
    den = init_denoiser(0)
    assert den.widths == [18, 64, 64, 2]
    assert den.n_params() == 18 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2
    enc = init_encoder(0)
    assert enc.widths == [2, 32, 8]
    assert enc.n_params() == 2 * 32 + 32 + 32 * 8 + 8


def test_zero_output_layer_predicts_the_origin():
    den = init_denoiser(3)
    out = denoise_array(den, np.random.default_rng(0).normal(size=(5, 2)), 0.4)
    assert np.array_equal(out, np.zeros((5, 2)))


def test_time_features_are_bounded_and_distinguish_times():
    f1, f2 = time_features(0.2), time_features(0.21)
    assert f1.shape == (16,)
    assert np.all(np.abs(f1) <= 1.0)
    assert not np.allclose(f1, f2)


def test_embedding_bounded_by_tanh():
    emb = embed(init_encoder(0), np.random.default_rng(0).normal(scale=10, size=(20, 2))).data
    assert emb.shape == (20, 8) and np.all(np.abs(emb) <= 1.0)


def test_initialisation_is_seeded():
    a, b, c = init_denoiser(1), init_denoiser(1), init_denoiser(2)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert not np.array_equal(a.weights[0].data, c.weights[0].data)


def test_input_shape_errors():
    with pytest.raises(ShapeError, match=r"\(batch, 2\)"):
        denoise(init_denoiser(0), np.ones((4, 3)), 0.5)
    with pytest.raises(ShapeError):
        embed(init_encoder(0), np.ones(2))
    with pytest.raises(ValueError, match="positive"):
        init_denoiser(0, hidden=0)


def test_gradient_reaches_denoiser_through_frozen_encoder():
    den = init_denoiser(0)
    rng = np.random.default_rng(0)
    den.weights[-1].data = 0.1 * rng.normal(size=den.weights[-1].shape)
    enc = init_encoder(0, frozen=True)
    x0 = rng.normal(size=(8, 2))
    with Tape() as tape:
        loss = structural_loss(x0, denoise(den, x0 + 0.3 * rng.normal(size=x0.shape), 0.5), 0.5, enc)
    g = tape.backward(loss)
    assert all(np.abs(g[p]).sum() > 0 for p in den.parameters())
    assert all(p not in g for p in enc.parameters())


def test_model_round_trips_through_checkpoint():
    state = new_state(TrainConfig(), 2, hidden=16, n_freqs=4, enc_hidden=8, embed_dim=3)
    back = from_bytes(to_bytes(state))
    assert back.denoiser.widths == state.denoiser.widths
    assert back.encoder.widths == state.encoder.widths
    assert back.denoiser.n_params() == state.denoiser.n_params()
    for p, q in zip(state.denoiser.parameters() + state.encoder.parameters(),
                    back.denoiser.parameters() + back.encoder.parameters()):
        assert p.shape == q.shape and np.array_equal(p.data, q.data)


def test_denoiser_gradients_match_finite_differences():
    den = init_denoiser(0, hidden=8, n_freqs=2)
    den.weights[-1].data = 0.5 * np.random.default_rng(1).normal(size=den.weights[-1].shape)
    xt = np.random.default_rng(2).normal(size=(3, 2))
    assert ad.grad_check(lambda *p: ad.squared_l2(denoise(den, xt, 0.3)), den.parameters()) < 1e-4
