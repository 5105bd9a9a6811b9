import numpy as np
import pytest

import oadet.cells
from oadet import gumbel
from oadet.cells import (
    DetectorParameters,
    GruParameters,
    LinearHead,
    StreamState,
    detector_step,
    estimate_progression,
    gru_step,
    predict_future,
)
from oadet.diffcore import Tensor, add, mean_rows, mix, mul, total
from oadet.diffcore.gradcheck import analytic_gradients, check_gradients
from oadet.enums.mode import Mode
from oadet.errors import ContractError, DimensionError
from oadet.losses import loss_cls, loss_pre, total_loss
from oadet.sampler import fixed_progression, window_means


class FrozenStraightThrough:
    """
    Straight-through replacement whose hard samples and stop-gradient anchors
    are fixed at their first evaluation.

    Its value is ``hard + relaxed - anchor``: exactly the hard sample at the
    recorded point, moving with ``relaxed`` under perturbation, so finite
    differences see the same derivative the straight-through backward uses.
    """

    def __init__(self):
        self.frozen: list[tuple[np.ndarray, np.ndarray]] = []
        self.calls = 0

    def rewind(self) -> None:
        self.calls = 0

    def __call__(self, hard_one_hot, relaxed: Tensor) -> Tensor:
        if self.calls == len(self.frozen):
            self.frozen.append((np.asarray(hard_one_hot, dtype=float), relaxed.values.copy()))
        hard, anchor = self.frozen[self.calls]
        self.calls += 1
        return add(Tensor(hard - anchor), relaxed)


class FrozenSupplementary:
    """
    Supplementary-feature replacement for finite differences.

    Its value is ``hard_mean + soft - anchor`` with the hard window mean and
    the soft-mixture anchor fixed at the first evaluation, so its derivative
    is the soft mixture's: the gradient the detector backpropagates.
    """

    def __init__(self):
        self.frozen: list[tuple[np.ndarray, np.ndarray]] = []
        self.calls = 0

    def rewind(self) -> None:
        self.calls = 0

    def __call__(self, pool, distribution, config) -> Tensor:
        selection = distribution.selection
        relaxed = add(selection, Tensor(distribution.relaxed - selection.values))
        soft = mix(relaxed, window_means(pool, config))
        if self.calls == len(self.frozen):
            hard = mix(Tensor(distribution.one_hot), window_means(pool, config)).values
            self.frozen.append((hard.copy(), soft.values.copy()))
        hard, anchor = self.frozen[self.calls]
        self.calls += 1
        return add(soft, Tensor(hard - anchor))


class TestGru:
    def test_zero_parameters_halve_the_state(self):
        params = GruParameters(
            *(Tensor(np.zeros((3, 5))) for _ in range(3)),
            *(Tensor(np.zeros(3)) for _ in range(3)),
        )
        h_prev = Tensor([1.0, -2.0, 0.5])
        h = gru_step(params, h_prev, Tensor([0.3, 0.7]))
        np.testing.assert_allclose(h.values, 0.5 * h_prev.values, atol=1e-15)

    def test_gradients(self, rng):
        params = GruParameters.initialize(3, 2, rng, "gru")
        h_prev = Tensor(rng.normal(size=(2, 3)), name="h_prev")
        x = Tensor(rng.normal(size=(2, 2)), name="x")
        weights = Tensor(rng.normal(size=(2, 3)))

        def loss():
            return total(mul(gru_step(params, h_prev, x), weights))

        for result in check_gradients(loss, [*params.parameters(), h_prev, x], rtol=1e-4, atol=1e-7):
            assert result.passed, result.name

    def test_shape_mismatch(self, rng):
        params = GruParameters.initialize(3, 2, rng, "gru")
        with pytest.raises(DimensionError):
            gru_step(params, Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestEstimateProgression:
    def test_zero_head_is_uniform(self, rng):
        head = LinearHead(weight=Tensor(np.zeros((4, 6))), bias=Tensor(np.zeros(4)))
        log_probs = estimate_progression(Tensor(rng.normal(size=6)), head)
        np.testing.assert_allclose(log_probs.values, np.log(0.25), atol=1e-15)

    def test_matches_linear_softmax_log(self, rng):
        head = LinearHead.initialize(3, 6, rng, "progression")
        h_prev = rng.normal(size=(2, 6))
        log_probs = estimate_progression(Tensor(h_prev), head)
        logits = h_prev @ head.weight.values.T + head.bias.values
        expected = np.log(np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True))
        np.testing.assert_allclose(log_probs.values, expected, atol=1e-10)
        np.testing.assert_allclose(np.exp(log_probs.values).sum(axis=-1), 1.0, atol=1e-9)


class TestPredictFuture:
    def test_depth_and_normalization(self, tiny_config, tiny_params, rng):
        prediction = predict_future(
            Tensor(rng.normal(size=6)), Tensor(rng.normal(size=4)), tiny_params, 3
        )
        assert len(prediction.features) == len(prediction.class_probs) == 3
        for probs in prediction.class_probs:
            assert probs.values.sum() == pytest.approx(1.0)
        assert all(f.shape == (4,) for f in prediction.features)

    def test_single_step(self, tiny_params, rng):
        prediction = predict_future(
            Tensor(rng.normal(size=6)), Tensor(rng.normal(size=4)), tiny_params, 1
        )
        assert len(prediction.features) == len(prediction.class_probs) == len(prediction.hiddens) == 1

    def test_zero_decoder_and_heads(self, tiny_params, rng):
        for p in (
            *tiny_params.decoder.parameters(),
            *tiny_params.feature.parameters(),
            *tiny_params.classifier.parameters(),
        ):
            p.values[...] = 0.0
        prediction = predict_future(
            Tensor(rng.normal(size=6)), Tensor(rng.normal(size=4)), tiny_params, 3
        )
        for feature, probs in zip(prediction.features, prediction.class_probs):
            np.testing.assert_array_equal(feature.values, np.zeros(4))
            np.testing.assert_allclose(probs.values, 1 / 3, atol=1e-15)

    def test_third_step_reaches_previous_hidden(self, tiny_params, rng):
        h_prev = Tensor(rng.normal(size=6), name="h_prev")
        f_curr = Tensor(rng.normal(size=4))
        weights = Tensor(rng.normal(size=4))

        def loss() -> Tensor:
            return total(mul(predict_future(h_prev, f_curr, tiny_params, 3).features[2], weights))

        (result,) = check_gradients(loss, [h_prev], rtol=1e-3, atol=1e-7)
        assert result.passed
        assert np.abs(result.analytic).max() > 0

    def test_non_positive_depth(self, tiny_params):
        with pytest.raises(ContractError):
            predict_future(Tensor(np.zeros(6)), Tensor(np.zeros(4)), tiny_params, 0)


class TestDetectorStep:
    def test_first_frames_produce_outputs(self, tiny_config, tiny_params, rng):
        state = StreamState.initial(tiny_config)
        for t in range(tiny_config.sampler.history_size):
            output = detector_step(state, rng.normal(size=4), tiny_params, tiny_config)
            assert output.probs.values.sum() == pytest.approx(1.0)
            assert np.all(output.probs.values > 0)
        assert state.time == tiny_config.sampler.history_size

    def test_eval_is_deterministic(self, tiny_config, tiny_params, rng):
        frames = rng.normal(size=(6, 4))
        runs = []
        for _ in range(2):
            state = StreamState.initial(tiny_config)
            runs.append([detector_step(state, f, tiny_params, tiny_config).probs.values for f in frames])
        np.testing.assert_array_equal(np.array(runs[0]), np.array(runs[1]))

    def test_batched_matches_single_streams(self, tiny_config, tiny_params, rng):
        frames = rng.normal(size=(5, 2, 4))
        batched = StreamState.initial(tiny_config, batch=2)
        singles = [StreamState.initial(tiny_config) for _ in range(2)]
        for frame in frames:
            joint = detector_step(batched, frame, tiny_params, tiny_config)
            for b, state in enumerate(singles):
                alone = detector_step(state, frame[b], tiny_params, tiny_config)
                np.testing.assert_allclose(joint.probs.values[b], alone.probs.values, atol=1e-12)
                assert joint.progression.hard_sample[b] == alone.progression.hard_sample

    def test_forced_window(self, tiny_config, tiny_params, rng):
        state = StreamState.initial(tiny_config)
        output = detector_step(state, rng.normal(size=4), tiny_params, tiny_config, forced_progression=0)
        assert output.progression.hard_sample == 0
        assert output.window_start == 0
        # window 0 covers the zero-initialized history only
        np.testing.assert_array_equal(output.supplementary.values, np.zeros(4))

    def test_forced_last_state_equals_fixed_window_baseline(self, tiny_config, tiny_params, rng):
        baseline_config = tiny_config.model_copy(update={"adaptive_sampling": False})
        frames = rng.normal(size=(5, 4))
        forced = StreamState.initial(tiny_config)
        baseline = StreamState.initial(baseline_config)
        last = tiny_config.sampler.num_states - 1
        for frame in frames:
            a = detector_step(forced, frame, tiny_params, tiny_config, forced_progression=last)
            b = detector_step(baseline, frame, tiny_params, baseline_config)
            np.testing.assert_array_equal(a.probs.values, b.probs.values)
            np.testing.assert_array_equal(a.supplementary.values, b.supplementary.values)

    def test_forced_window_is_the_fixed_progression_window(self, tiny_config, tiny_params, rng):
        state = StreamState.initial(tiny_config)
        for frame in rng.normal(size=(4, 4)):
            output = detector_step(state, frame, tiny_params, tiny_config, forced_progression=1)
            expected = fixed_progression(1, tiny_config.sampler)
            np.testing.assert_array_equal(output.progression.one_hot, expected.one_hot)
            assert output.window_start == tiny_config.sampler.stride

    def test_wrong_frame_width(self, tiny_config, tiny_params):
        with pytest.raises(DimensionError):
            detector_step(StreamState.initial(tiny_config), np.zeros(5), tiny_params, tiny_config)

    def test_missing_state(self, tiny_config, tiny_params):
        with pytest.raises(ContractError):
            detector_step(None, np.zeros(4), tiny_params, tiny_config)

    def test_shared_classifier(self, tiny_config, tiny_params, rng):
        frame = rng.normal(size=4)
        state = StreamState.initial(tiny_config)
        before = detector_step(state.snapshot(), frame, tiny_params, tiny_config)
        tiny_params.classifier.weight.values[1] += 0.5
        after = detector_step(state.snapshot(), frame, tiny_params, tiny_config)
        assert not np.allclose(before.probs.values, after.probs.values)
        for old, new in zip(before.future.class_probs, after.future.class_probs):
            assert not np.allclose(old.values, new.values)
        # the future features do not pass through the classifier
        for old, new in zip(before.future.features, after.future.features):
            np.testing.assert_array_equal(old.values, new.values)


def test_full_step_gradients_match_finite_differences(tiny_config, tiny_params, monkeypatch):
    data = np.random.default_rng(11)
    frames = data.normal(size=(3, 4))
    labels = data.integers(0, 3, size=3)
    future = data.integers(0, 3, size=(3, 3))
    frozen = [FrozenStraightThrough(), FrozenSupplementary()]

    def loss() -> Tensor:
        for wrapper in frozen:
            wrapper.rewind()
        state = StreamState.initial(tiny_config, temperature=0.8, rng=np.random.default_rng(5))
        totals = []
        for frame, label, ahead in zip(frames, labels, future):
            output = detector_step(state, frame, tiny_params, tiny_config, Mode.TRAIN)
            totals.append(
                total_loss(
                    loss_cls(output.probs, label),
                    loss_pre(output.future.class_probs, ahead),
                    1.0,
                )
            )
        return mean_rows(totals)

    params = tiny_params.parameters()
    backpropagated = analytic_gradients(loss, params)

    monkeypatch.setattr(gumbel, "straight_through", frozen[0])
    monkeypatch.setattr(oadet.cells, "adaptive_supplementary", frozen[1])
    loss()
    results = check_gradients(loss, params, rtol=1e-3, atol=1e-7)
    for result, expected in zip(results, backpropagated):
        np.testing.assert_allclose(result.analytic, expected, rtol=1e-9, atol=1e-12, err_msg=result.name)
    failed = [r.name for r in results if not r.passed]
    assert not failed
    assert np.abs(tiny_params.progression.weight.grad).max() > 0
    assert all(np.abs(p.grad).max() > 0 for p in tiny_params.decoder.parameters()[:3])


class CallCounter:
    def __init__(self, target):
        self.target = target
        self.calls = 0

    def __call__(self, *args, **kwargs):
        self.calls += 1
        return self.target(*args, **kwargs)


@pytest.mark.parametrize("adaptive,expect_calls", [(False, False), (True, True)])
def test_gumbel_usage_follows_adaptive_flag(tiny_config, rng, monkeypatch, adaptive, expect_calls):
    config = tiny_config.model_copy(update={"adaptive_sampling": adaptive})
    params = DetectorParameters.initialize(config, rng)
    counters = {}
    for name in ("sample_gumbel", "gumbel_softmax_relax", "straight_through", "sample_progression"):
        counters[name] = CallCounter(getattr(gumbel, name))
        monkeypatch.setattr(gumbel, name, counters[name])

    state = StreamState.initial(config, temperature=1.0, rng=np.random.default_rng(0))
    for frame in rng.normal(size=(4, 4)):
        output = detector_step(state, frame, params, config, Mode.TRAIN)
        if not adaptive:
            assert output.progression.hard_sample == config.sampler.num_states - 1
    total_calls = sum(counter.calls for counter in counters.values())
    assert (total_calls > 0) == expect_calls


def test_freeze_decoder(tiny_params):
    tiny_params.freeze_decoder()
    frozen = {*tiny_params.decoder.parameters(), *tiny_params.feature.parameters()}
    assert all(not p.requires_grad for p in frozen)
    assert all(p.requires_grad for p in tiny_params.parameters() if p not in frozen)


def test_parameter_names_are_unique(tiny_params):
    names = [name for name, _ in tiny_params.named_parameters()]
    assert len(names) == len(set(names))
    assert all(names)


def test_initialization_is_seeded(tiny_config):
    first = DetectorParameters.initialize(tiny_config, np.random.default_rng(3))
    second = DetectorParameters.initialize(tiny_config, np.random.default_rng(3))
    for a, b in zip(first.parameters(), second.parameters()):
        np.testing.assert_array_equal(a.values, b.values)
