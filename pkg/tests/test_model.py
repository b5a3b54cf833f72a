import numpy as np
import pytest

from helpers import gradcheck, micro_config, micro_model
from tinytransducer.model import ModelConfig, TransformerModel, count_params, shift_right
from tinytransducer.tensor import cross_entropy_ls, no_grad
from tinytransducer.tokens import EOS_ID, PAD_ID, SOS_ID


def toy_batch(r, b=2, n=7, f=5, u=4, vocab=7):
    frames = r.normal(size=(b, n, f)).astype(np.float32)
    lengths = np.array([n] + [n - 2] * (b - 1))
    labels = r.integers(3, vocab, size=(b, u))
    labels[:, -1] = EOS_ID
    labels[1:, -1:] = PAD_ID
    labels[1:, -2] = EOS_ID
    return frames, lengths, labels


def test_all_ones_param_count():
    cfg = ModelConfig(n_enc_blocks=1, n_dec_blocks=1, h=1, d_m=1, d_ff=1, vocab_size=1,
                      frontend_dims=[1], input_feature_dim=1, max_positions=1)
    # front-end 2, encoder block 12, decoder block 18, embedding + output 2
    assert count_params(cfg) == 34
    assert TransformerModel(cfg).num_parameters() == 34


@pytest.mark.parametrize("kw", [
    {},
    {"enc_pe_mode": "none", "dec_pe_mode": "none", "enc_rpe_k": 3, "dec_rpe_k": 2},
    {"enc_pe_mode": "learned", "dec_pe_mode": "learned"},
    {"n_enc_blocks": 3, "h": 4, "frontend_dims": [20, 11, 8]},
])
def test_count_params_matches_model(kw):
    cfg = micro_config(**kw)
    assert count_params(cfg) == TransformerModel(cfg).num_parameters()


def test_parameter_names_are_deterministic():
    a = [n for n, _ in micro_model(enc_rpe_k=2).named_parameters()]
    b = [n for n, _ in micro_model(enc_rpe_k=2).named_parameters()]
    assert a == b
    assert len(set(a)) == len(a)
    assert a[0] == "frontend.0.weight" and a[-1] == "out_proj"


def test_end_to_end_gradient_micro_model():
    r = np.random.default_rng(0)
    model = micro_model(enc_pe_mode="none", enc_rpe_k=2, dec_rpe_k=2)
    frames, lengths, labels = toy_batch(r)
    dec_in = shift_right(labels)

    def loss():
        return cross_entropy_ls(model(frames, lengths, dec_in), labels, 0.1, PAD_ID)

    # a 1e-3 step straddles ReLU kinks deep in the stack; float64 makes 1e-5 safe
    assert gradcheck(loss, model.parameters(), step=1e-5, max_coords=6) < 1e-2


def test_padding_does_not_change_outputs():
    r = np.random.default_rng(1)
    model = micro_model()
    frames = r.normal(size=(1, 5, 5)).astype(np.float32)
    dec_in = np.array([[SOS_ID, 4, 5]])
    with no_grad():
        short = model(frames, [5], dec_in).data
        padded_frames = np.concatenate([frames, r.normal(size=(1, 3, 5)).astype(np.float32)], axis=1)
        padded = model(padded_frames, [5], dec_in).data
    np.testing.assert_allclose(short, padded, atol=1e-5)


def test_decoder_is_causal():
    r = np.random.default_rng(2)
    model = micro_model(dec_pe_mode="none", dec_rpe_k=2)
    frames = r.normal(size=(1, 6, 5)).astype(np.float32)
    with no_grad():
        enc = model.encode(frames, [6])
        a = model.decode_step_parallel(enc, [[SOS_ID, 3, 4, 5]]).data
        b = model.decode_step_parallel(enc, [[SOS_ID, 3, 6, 6]]).data
    np.testing.assert_allclose(a[:, :2], b[:, :2], atol=1e-6)
    assert not np.allclose(a[:, 2:], b[:, 2:])


def test_zero_length_utterance_rejected():
    model = micro_model()
    with pytest.raises(ValueError, match="zero-length"):
        model.encode(np.zeros((1, 3, 5), dtype=np.float32), [0])


def test_decoder_input_out_of_vocab():
    model = micro_model()
    enc = model.encode(np.zeros((1, 3, 5), dtype=np.float32), [3])
    with pytest.raises(IndexError):
        model.decode_step_parallel(enc, [[SOS_ID, 99]])


def test_dropout_only_in_training():
    r = np.random.default_rng(3)
    model = micro_model(dropout=0.5)
    frames, lengths, labels = toy_batch(r)
    dec_in = shift_right(labels)
    with no_grad():
        e1 = model(frames, lengths, dec_in).data
        e2 = model(frames, lengths, dec_in).data
        model.train()
        t1 = model(frames, lengths, dec_in).data
    np.testing.assert_array_equal(e1, e2)
    assert not np.allclose(e1, t1)


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        micro_config(d_m=9, frontend_dims=[9])
    with pytest.raises(ValueError, match="frontend"):
        micro_config(frontend_dims=[12])
    with pytest.raises(ValueError, match="unknown model config"):
        ModelConfig.from_dict({"bogus": 1})
    assert ModelConfig.from_dict(micro_config().to_dict()) == micro_config()


def test_full_scale_config_counts():
    cfg = ModelConfig.full_scale(vocab_size=5000, input_feature_dim=80)
    assert (cfg.n_enc_blocks, cfg.n_dec_blocks, cfg.h, cfg.d_m, cfg.d_ff) == (5, 3, 16, 768, 2048)
    assert count_params(cfg) > 30_000_000


def test_shift_right():
    np.testing.assert_array_equal(shift_right(np.array([[5, 6, EOS_ID]])), [[SOS_ID, 5, 6]])
