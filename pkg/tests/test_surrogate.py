import numpy as np
import pytest

from nminus1.scenarios import SamplingConfig, generate_dataset
from nminus1.surrogate import (
    Dense,
    DimensionError,
    ModelParams,
    TrainConfig,
    TrainingError,
    backward,
    fit_codec,
    forward,
    init_params,
    load_checkpoint,
    mse_loss,
    predict,
    predict_many,
    save_checkpoint,
    train,
)


@pytest.fixture(scope="module")
def records14(case14):
    return generate_dataset(case14, SamplingConfig(n_instances=200, cut_probability=0.3, seed=21))


def _zero_head(params):
    params.head.weight[:] = 0
    params.head.bias[:] = 0
    return params


def test_codec_layout(case14, records14):
    codec = fit_codec(records14, case14)
    assert codec.n_inputs == 2 * 4 + 2 * 9 + 20
    assert codec.n_outputs == 2 * 20 + 14
    x = codec.raw_inputs(records14[:3])
    assert x.shape == (3, codec.n_inputs)
    np.testing.assert_array_equal(x[:, -20:], [r.topology.as_array() for r in records14[:3]])


def test_codec_identical_records(case14, records14):
    codec = fit_codec([records14[0]] * 5, case14)
    assert np.all(codec.x_std == 1) and np.all(codec.y_std == 1)
    z = codec.encode_targets(codec.raw_targets([records14[0]]))
    np.testing.assert_allclose(z, 0, atol=1e-12)


def test_codec_roundtrip_and_moments(case14, records14):
    codec = fit_codec(records14, case14)
    y = codec.raw_targets(records14)
    z = codec.encode_targets(y)
    np.testing.assert_allclose(codec.decode_targets(z), y, atol=1e-12)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-10)
    varying = y.std(axis=0) > 0
    np.testing.assert_allclose(z.std(axis=0)[varying], 1, atol=1e-10)
    x = codec.raw_inputs(records14)
    np.testing.assert_allclose(codec.decode_inputs(codec.encode_inputs(x)), x, atol=1e-12)


def test_topology_bits_pass_through(case14, records14):
    codec = fit_codec(records14, case14)
    x = codec.raw_inputs(records14)
    np.testing.assert_array_equal(codec.encode_inputs(x)[:, -20:], x[:, -20:])


def test_codec_uses_only_training_split(case14, records14):
    a = fit_codec(records14[:100], case14)
    b = fit_codec(records14[:100] + [records14[150]], case14)
    assert not np.array_equal(a.y_mean, b.y_mean)
    c = fit_codec(records14[:100], case14)
    assert np.array_equal(a.y_mean, c.y_mean)


def test_codec_dimension_error(case14, case118, records14):
    codec = fit_codec(records14, case14)
    other = generate_dataset(case118, SamplingConfig(n_instances=1))
    with pytest.raises(DimensionError):
        codec.raw_inputs(other)


def test_zero_head_outputs_zero():
    params = _zero_head(init_params(5, 3, seed=0, variant="custom", depth=2, width=8))
    out = forward(params, np.random.default_rng(0).normal(size=(4, 5)))
    assert out.shape == (4, 3) and not np.any(out)


def test_forward_hand_computed():
    eye = np.eye(2)
    params = ModelParams(
        stem=Dense(eye.copy(), np.zeros(2)),
        blocks=[Dense(np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([0.0, 0.5]))],
        head=Dense(eye.copy(), np.zeros(2)),
    )
    # z = [1, -2 + 0.5] -> leaky = [1, -0.015]; h = [1, 2] + that
    out = forward(params, np.array([1.0, 2.0]))
    np.testing.assert_allclose(out, [2.0, 1.985], atol=1e-15)


def test_forward_is_deterministic():
    a = init_params(10, 4, "small", seed=3)
    b = init_params(10, 4, "small", seed=3)
    x = np.ones((2, 10))
    assert np.array_equal(forward(a, x), forward(b, x))
    assert not np.array_equal(forward(a, x), forward(init_params(10, 4, "small", seed=4), x))


def test_variants_differ_in_depth():
    small, medium = init_params(6, 2, "small"), init_params(6, 2, "medium")
    assert len(medium.blocks) > len(small.blocks)
    with pytest.raises(ValueError):
        init_params(6, 2, "huge")


def test_forward_dimension_error():
    with pytest.raises(DimensionError):
        forward(init_params(6, 2, "small"), np.ones(5))


def test_loss_single_element():
    assert mse_loss([1.5], [1.0]) == pytest.approx(0.25)
    with pytest.raises(DimensionError):
        mse_loss(np.ones(2), np.ones(3))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    params = init_params(4, 3, "custom", seed=1, depth=3, width=6)
    # larger head so gradients are not tiny
    params.head.weight *= 10
    x, y = rng.normal(size=(7, 4)), rng.normal(size=(7, 3))
    _, grads = backward(params, x, y)
    h = 1e-5
    worst = 0.0
    for arr, grad in zip(params.arrays(), grads):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = mse_loss(forward(params, x), y)
            arr[idx] = old - h
            down = mse_loss(forward(params, x), y)
            arr[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - grad[idx]) / max(1.0, abs(fd)))
    assert worst < 1e-4


def test_zero_learning_rate_keeps_params(case14, records14):
    init = init_params(46, 54, "small", seed=0)
    res = train(records14, case14, TrainConfig(epochs=2, learning_rate=0.0), init=init)
    for a, b in zip(init.arrays(), res.params.arrays()):
        assert np.array_equal(a, b)


def test_training_reduces_loss(case14, records14):
    res = train(records14, case14, TrainConfig(epochs=6, batch_size=32))
    assert res.losses[-1] < res.losses[0]
    assert len(res.losses) == 6


def test_training_is_bitwise_reproducible(case14, records14):
    cfg = TrainConfig(epochs=2, batch_size=50, seed=9)
    a, b = train(records14, case14, cfg), train(records14, case14, cfg)
    for x, y in zip(a.params.arrays(), b.params.arrays()):
        assert np.array_equal(x, y)
    assert a.losses == b.losses


def test_training_overfits_tiny_set(case14, records14):
    tiny = records14[:8]
    res = train(tiny, case14, TrainConfig(epochs=300, batch_size=8, learning_rate=1e-3, scheduler_step=1000))
    assert res.losses[-1] < 1e-3
    err = predict(res.params, res.codec, tiny[0]) - res.codec.raw_targets([tiny[0]])[0]
    assert np.mean(err**2) < 1e-3


def test_training_reports_non_finite(case14, records14):
    with pytest.raises(TrainingError, match="epoch 1"):
        train(records14, case14, TrainConfig(epochs=1, learning_rate=1e200))


def test_step_schedule():
    cfg = TrainConfig(learning_rate=1.0, scheduler_step=5, scheduler_gamma=0.5)
    assert [cfg.lr_at(e) for e in (0, 4, 5, 9, 10)] == [1.0, 1.0, 0.5, 0.5, 0.25]


def test_zero_head_predicts_training_mean(case14, records14):
    codec = fit_codec(records14, case14)
    params = _zero_head(init_params(codec.n_inputs, codec.n_outputs, "small"))
    np.testing.assert_allclose(predict(params, codec, records14[0]), codec.y_mean, atol=1e-12)


def test_topology_changes_prediction(case14, records14):
    res = train(records14, case14, TrainConfig(epochs=1))
    cut = next(r for r in records14 if r.cut_branch is not None)
    full = next(r for r in records14 if r.cut_branch is None)
    x_cut = res.codec.encode_inputs(res.codec.raw_inputs([cut]))
    assert x_cut[0, -20 + cut.cut_branch] == 0
    assert not np.array_equal(predict(res.params, res.codec, cut), predict(res.params, res.codec, full))


def test_checkpoint_roundtrip(tmp_path, case14, records14):
    res = train(records14, case14, TrainConfig(epochs=1, variant="medium"))
    path = tmp_path / "model.npz"
    save_checkpoint(path, res.params, res.codec)
    params, codec = load_checkpoint(path)
    for a, b in zip(res.params.arrays(), params.arrays()):
        assert np.array_equal(a, b)
    assert params.variant == "medium" and len(params.blocks) == 4
    assert np.array_equal(predict_many(params, codec, records14), predict_many(res.params, res.codec, records14))


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, header=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_predict_dimension_mismatch(case14, case118, records14):
    res = train(records14, case14, TrainConfig(epochs=1))
    other = generate_dataset(case118, SamplingConfig(n_instances=1))
    with pytest.raises(DimensionError):
        predict_many(res.params, res.codec, other)
