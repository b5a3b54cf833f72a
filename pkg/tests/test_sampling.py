import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import micro_model
from tinytransducer.sampling import (
    HypothesisSource,
    ScheduleConfig,
    decoder_input,
    error_channel,
    mix_batch,
    mix_tokens,
    online_mix,
    read_hypothesis_file,
    schedule_step,
    sequential_scheduled_sampling,
    teacher_force_rate,
    write_hypothesis_file,
)
from tinytransducer.tensor import no_grad
from tinytransducer.tokens import EOS_ID, PAD_ID, SOS_ID


def test_schedule_anchor_points():
    cfg = ScheduleConfig(p_min=0.6, n_st=10, n_ed=30)
    assert teacher_force_rate(0, cfg) == 1.0
    assert teacher_force_rate(10, cfg) == 1.0
    assert teacher_force_rate(20, cfg) == pytest.approx(0.8)   # halfway: 1 - 0.4 * 0.5
    assert teacher_force_rate(30, cfg) == pytest.approx(0.6)
    assert teacher_force_rate(500, cfg) == pytest.approx(0.6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0, 50), st.floats(0.5, 100), st.floats(0, 200), st.floats(0, 200))
def test_schedule_monotone(p_min, n_st, width, i, j):
    cfg = ScheduleConfig(p_min=p_min, n_st=n_st, n_ed=n_st + width)
    lo, hi = sorted((i, j))
    assert teacher_force_rate(hi, cfg) <= teacher_force_rate(lo, cfg) + 1e-12
    assert p_min - 1e-12 <= teacher_force_rate(i, cfg) <= 1.0


def test_schedule_step_units():
    assert schedule_step(ScheduleConfig(step_unit="batch"), 3, 5, 10, 35) == 35
    assert schedule_step(ScheduleConfig(step_unit="epoch"), 3, 5, 10, 35) == pytest.approx(3.5)


@pytest.mark.parametrize("bad", [dict(p_min=0.0), dict(n_st=5, n_ed=5), dict(mix_level="word")])
def test_schedule_validation(bad):
    with pytest.raises(ValueError):
        ScheduleConfig(**bad)


def test_token_mix_fraction():
    rng = np.random.default_rng(0)
    y = np.arange(100_000) % 7 + 3
    plan = mix_tokens(y, y + 1, 0.7, "token", rng)
    assert abs(plan.teacher_mask.mean() - 0.7) < 0.01
    np.testing.assert_array_equal(plan.mixed[plan.teacher_mask], y[plan.teacher_mask])
    np.testing.assert_array_equal(plan.mixed[~plan.teacher_mask], y[~plan.teacher_mask] + 1)


def test_short_hypothesis_pads():
    y = [5, 6, 7, 8, EOS_ID]
    plan = mix_tokens(y, [9, 9], 0.0, "token", np.random.default_rng(0))
    np.testing.assert_array_equal(plan.mixed, [9, 9, PAD_ID, PAD_ID, PAD_ID])


def test_long_hypothesis_truncates():
    plan = mix_tokens([5, EOS_ID], [9, 8, 7, 6], 0.0, "token", np.random.default_rng(0))
    np.testing.assert_array_equal(plan.mixed, [9, 8])


def test_sentence_level_all_or_nothing():
    rng = np.random.default_rng(1)
    for _ in range(50):
        plan = mix_tokens([5, 6, 7], [8, 9, 10], 0.5, "sentence", rng)
        assert plan.teacher_mask.all() or not plan.teacher_mask.any()


def test_mix_batch_leaves_padding():
    labels = np.array([[5, 6, EOS_ID], [7, EOS_ID, PAD_ID]])
    plan = mix_batch(labels, np.array([3, 2]), [[9, 9, 9], [9, 9]], 0.0, "token", np.random.default_rng(0))
    assert plan.mixed[1, 2] == PAD_ID
    assert not plan.teacher_mask[1, 2]


def test_decoder_input_shift():
    np.testing.assert_array_equal(decoder_input(np.array([[5, 6, EOS_ID]])), [[SOS_ID, 5, 6]])


def test_online_mix_zero_passes_is_teacher_forcing():
    model = micro_model()
    r = np.random.default_rng(0)
    frames = r.normal(size=(2, 6, 5)).astype(np.float32)
    labels = np.array([[4, 5, EOS_ID], [6, EOS_ID, PAD_ID]])
    with no_grad():
        enc = model.encode(frames, [6, 4])
    before = model.decoder_passes
    plan = online_mix(model, enc, labels, np.array([3, 2]), 0.3, 0, "token", r)
    assert model.decoder_passes == before
    np.testing.assert_array_equal(plan.mixed, labels)
    with no_grad():
        tf = model.decode_step_parallel(enc, decoder_input(labels)).data
        mixed = model.decode_step_parallel(enc, decoder_input(plan.mixed)).data
    assert np.array_equal(tf, mixed)


def test_online_mix_counts_passes():
    model = micro_model()
    r = np.random.default_rng(1)
    frames = r.normal(size=(1, 6, 5)).astype(np.float32)
    labels = np.array([[4, 5, 6, EOS_ID]])
    with no_grad():
        enc = model.encode(frames, [6])
    before = model.decoder_passes
    online_mix(model, enc, labels, np.array([4]), 0.5, 3, "token", r)
    assert model.decoder_passes - before == 3


def test_sequential_reference_costs_u_passes():
    model = micro_model()
    r = np.random.default_rng(2)
    frames = r.normal(size=(1, 6, 5)).astype(np.float32)
    labels = np.array([[4, 5, 6, 4, 5, EOS_ID]])
    with no_grad():
        enc = model.encode(frames, [6])
    before = model.decoder_passes
    sequential_scheduled_sampling(model, enc, labels, np.array([6]), 0.5, r)
    assert model.decoder_passes - before == labels.shape[1]


def test_error_channel_rates():
    rng = np.random.default_rng(0)
    y = list(np.arange(20_000) % 9 + 3)
    out = error_channel(y, 0.0, 0.2, 0.0, 12, rng)
    assert abs(len(out) / len(y) - 0.8) < 0.01
    out = error_channel(y, 0.0, 0.0, 0.1, 12, rng)
    assert abs(len(out) / len(y) - 1.1) < 0.01
    subbed = error_channel([5] * 5000, 1.0 - 1e-9, 0.0, 0.0, 12, rng)
    assert 5 not in subbed and min(subbed) >= 3


def test_hypothesis_file_round_trip(tmp_path):
    table = {"u1": [3, 4, 5], "u2": []}
    path = tmp_path / "hyps.tsv"
    write_hypothesis_file(path, table)
    assert read_hypothesis_file(path) == table
    src = HypothesisSource.from_file(path)
    with pytest.raises(KeyError, match="u3"):
        src.check_coverage(["u1", "u3"])


def test_source_validation():
    with pytest.raises(ValueError):
        HypothesisSource("error_channel", 0.5, 0.3, 0.3, vocab_size=10)
    with pytest.raises(ValueError):
        HypothesisSource("offline_self")
    with pytest.raises(ValueError):
        HypothesisSource("guesswork")
