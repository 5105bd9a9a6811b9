import numpy as np
import pytest
from pydantic import ValidationError

from oadet.diffcore import Tape, Tensor, log_softmax, mix, mul, total
from oadet.diffcore.gradcheck import numerical_gradient
from oadet.enums.mode import Mode
from oadet.errors import ConfigError, ContractError
from oadet.gumbel import (
    ProgressionDistribution,
    gumbel_max_select,
    gumbel_softmax_relax,
    one_hot,
    sample_progression,
    straight_through,
)
from oadet.memory import FeaturePool
from oadet.sampler import (
    SamplerConfig,
    adaptive_supplementary,
    aggregate_window,
    compute_stride,
    fixed_progression,
    window_indices,
    window_means,
)


@pytest.mark.parametrize("window_size,stride", [(7, 3), (9, 2), (3, 4)])
def test_reference_strides(window_size, stride):
    assert compute_stride(8, window_size, 4) == stride


def test_windows_stay_inside_pool_for_every_geometry():
    for history_size in range(2, 13):
        pool_size = 2 * history_size
        for window_size in range(1, pool_size + 1):
            for num_states in range(2, 7):
                stride = compute_stride(history_size, window_size, num_states)
                windows = [
                    window_indices(p, stride, window_size, num_states) for p in range(num_states)
                ]
                assert len(windows) == num_states
                assert all(len(w) == window_size and w.start >= 0 for w in windows)
                assert windows[-1].stop <= pool_size
                assert [w.start for w in windows] == sorted(w.start for w in windows)


@pytest.mark.parametrize(
    "history_size,window_size,num_states", [(4, 9, 3), (4, 0, 3), (4, 3, 1), (0, 1, 2)]
)
def test_invalid_geometry(history_size, window_size, num_states):
    with pytest.raises(ConfigError):
        compute_stride(history_size, window_size, num_states)


def test_config_rejects_oversized_window():
    with pytest.raises(ValidationError):
        SamplerConfig(history_size=3, window_size=7, num_states=2)


def test_window_index_out_of_range():
    with pytest.raises(ContractError):
        window_indices(4, 3, 7, num_states=4)


def _pool(values: np.ndarray, requires_grad: bool = False) -> FeaturePool:
    frames = tuple(Tensor(v, requires_grad=requires_grad, name=f"f{i}") for i, v in enumerate(values))
    return FeaturePool(frames=frames, boundary=len(frames) // 2)


def test_window_means(rng):
    config = SamplerConfig(history_size=4, window_size=3, num_states=3)
    values = rng.normal(size=(8, 2))
    means = window_means(_pool(values), config)
    stride = config.stride
    for p, mean in enumerate(means):
        np.testing.assert_allclose(mean.values, values[p * stride : p * stride + 3].mean(axis=0))


def test_fixed_progression_selects_last_window(rng):
    config = SamplerConfig(history_size=4, window_size=3, num_states=3)
    values = rng.normal(size=(8, 2))
    distribution = fixed_progression(config.num_states - 1, config)
    feature = adaptive_supplementary(_pool(values), distribution, config)
    start = (config.num_states - 1) * config.stride
    np.testing.assert_allclose(feature.values, values[start : start + 3].mean(axis=0), atol=1e-12)


def test_single_frame_window_is_the_frame(rng):
    values = rng.normal(size=(6, 2))
    pool = _pool(values)
    for index in range(6):
        np.testing.assert_array_equal(aggregate_window(pool, range(index, index + 1)).values, values[index])


def test_window_mean_matches_loop_sum(rng):
    values = rng.normal(size=(10, 3))
    pool = _pool(values)
    expected = np.zeros(3)
    for index in range(2, 7):
        expected += values[index]
    np.testing.assert_allclose(aggregate_window(pool, range(2, 7)).values, expected / 5, atol=1e-14)


def _selection(chosen: int, relaxed_values) -> tuple[ProgressionDistribution, Tensor]:
    hard = one_hot(chosen, len(relaxed_values))
    relaxed = Tensor(np.asarray(relaxed_values, dtype=float), requires_grad=True)
    distribution = ProgressionDistribution(
        soft_estimate=relaxed.values,
        relaxed=relaxed.values,
        hard_sample=np.array(chosen),
        one_hot=hard,
        temperature=1.0,
        selection=straight_through(hard, relaxed),
    )
    return distribution, relaxed


def test_pool_gradient_follows_the_relaxed_mixture(rng):
    config = SamplerConfig(history_size=4, window_size=2, num_states=4)
    values = rng.normal(size=(8, 3))
    pool = _pool(values, requires_grad=True)
    with Tape() as tape:
        distribution, relaxed = _selection(1, [0.1, 0.6, 0.2, 0.1])
        feature = adaptive_supplementary(pool, distribution, config)
        loss = total(feature)
    tape.backward(loss)

    np.testing.assert_array_equal(feature.values, values[2:4].mean(axis=0))
    expected = [0.05, 0.05, 0.3, 0.3, 0.1, 0.1, 0.05, 0.05]
    for share, frame in zip(expected, pool.frames):
        np.testing.assert_allclose(frame.grad, share, atol=1e-15)
    # the predicted-future half of the pool is reached through unselected windows
    assert all(frame.grad.any() for frame in pool.frames[config.history_size :])
    np.testing.assert_allclose(relaxed.grad, [values[2 * p : 2 * p + 2].mean(axis=0).sum() for p in range(4)])


def test_one_hot_relaxation_gives_the_same_window_on_both_paths(rng):
    config = SamplerConfig(history_size=4, window_size=3, num_states=3)
    values = rng.normal(size=(8, 2))
    pool = _pool(values, requires_grad=True)
    with Tape() as tape:
        distribution, _ = _selection(2, [0.0, 0.0, 1.0])
        loss = total(adaptive_supplementary(pool, distribution, config))
    tape.backward(loss)
    start = 2 * config.stride
    for index, frame in enumerate(pool.frames):
        np.testing.assert_allclose(frame.grad, 1 / 3 if start <= index < start + 3 else 0.0)


def test_forward_value_ignores_temperature(rng):
    config = SamplerConfig(history_size=4, window_size=3, num_states=3)
    pool = _pool(rng.normal(size=(8, 2)))
    log_probs = log_softmax(Tensor(rng.normal(size=3)))
    features = [
        adaptive_supplementary(pool, sample_progression(log_probs, tau, Mode.EVAL), config).values
        for tau in (0.05, 1.0, 20.0)
    ]
    np.testing.assert_array_equal(features[0], features[1])
    np.testing.assert_array_equal(features[0], features[2])


def test_logit_gradients_match_the_soft_mixture(rng):
    config = SamplerConfig(history_size=3, window_size=2, num_states=3)
    pool = _pool(rng.normal(size=(6, 2)))
    logits = Tensor(rng.normal(size=3), requires_grad=True, name="logits")
    weights = Tensor(rng.normal(size=2))
    noise = rng.gumbel(size=3)
    temperature = 0.7

    def soft_objective() -> Tensor:
        relaxed = gumbel_softmax_relax(log_softmax(logits), noise, temperature)
        return total(mul(mix(relaxed, window_means(pool, config)), weights))

    log_probs_values = log_softmax(Tensor(logits.values)).values
    hard = one_hot(gumbel_max_select(log_probs_values, noise), 3)
    with Tape() as tape:
        relaxed = gumbel_softmax_relax(log_softmax(logits), noise, temperature)
        distribution = ProgressionDistribution(
            soft_estimate=np.exp(log_probs_values),
            relaxed=relaxed.values.copy(),
            hard_sample=hard.argmax(),
            one_hot=hard,
            temperature=temperature,
            selection=straight_through(hard, relaxed),
        )
        loss = total(mul(adaptive_supplementary(pool, distribution, config), weights))
    tape.backward(loss)

    numeric = numerical_gradient(soft_objective, logits)
    np.testing.assert_allclose(logits.grad, numeric, rtol=1e-4, atol=1e-9)
