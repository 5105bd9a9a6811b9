import copy
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from oadet import gumbel
from oadet.diffcore import (
    Tensor,
    add,
    concat,
    linear,
    log_softmax,
    mul,
    one_minus,
    sigmoid,
    softmax,
    tanh,
)
from oadet.enums.mode import Mode
from oadet.errors import ContractError, DimensionError
from oadet.gumbel import ProgressionDistribution
from oadet.memory import HistoryStack, build_pool, push_history
from oadet.sampler import SamplerConfig, adaptive_supplementary, fixed_progression

DEFAULT_HIDDEN_SIZE = 64


class DetectorConfig(BaseModel):
    """Shapes of the detection cell and its sampling geometry."""

    model_config = ConfigDict(extra="forbid")

    feature_dim: int = Field(..., ge=1, description="D: per-frame feature width")
    num_classes: int = Field(..., ge=2, description="Output classes, background included")
    hidden_size: int = Field(DEFAULT_HIDDEN_SIZE, ge=1, description="Detector and decoder width")
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    adaptive_sampling: bool = Field(
        True, description="Sample windows by progression; otherwise use the last window"
    )


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LinearHead:
    weight: Tensor
    bias: Tensor

    @classmethod
    def initialize(
        cls, out_dim: int, in_dim: int, rng: np.random.Generator, name: str
    ) -> "LinearHead":
        return cls(
            weight=Tensor(_uniform(rng, (out_dim, in_dim), in_dim), True, f"{name}.weight"),
            bias=Tensor(np.zeros(out_dim), True, f"{name}.bias"),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class GruParameters:
    """Gate weights act on ``[h_prev; x]``, shape ``(H, H + D_in)``."""

    w_update: Tensor
    w_reset: Tensor
    w_candidate: Tensor
    b_update: Tensor
    b_reset: Tensor
    b_candidate: Tensor

    @classmethod
    def initialize(
        cls, hidden_size: int, input_size: int, rng: np.random.Generator, name: str
    ) -> "GruParameters":
        fan_in = hidden_size + input_size
        shape = (hidden_size, fan_in)
        return cls(
            w_update=Tensor(_uniform(rng, shape, fan_in), True, f"{name}.w_update"),
            w_reset=Tensor(_uniform(rng, shape, fan_in), True, f"{name}.w_reset"),
            w_candidate=Tensor(_uniform(rng, shape, fan_in), True, f"{name}.w_candidate"),
            b_update=Tensor(np.zeros(hidden_size), True, f"{name}.b_update"),
            b_reset=Tensor(np.zeros(hidden_size), True, f"{name}.b_reset"),
            b_candidate=Tensor(np.zeros(hidden_size), True, f"{name}.b_candidate"),
        )

    @property
    def hidden_size(self) -> int:
        return self.w_update.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_update.shape[1] - self.hidden_size

    def parameters(self) -> list[Tensor]:
        return [
            self.w_update,
            self.w_reset,
            self.w_candidate,
            self.b_update,
            self.b_reset,
            self.b_candidate,
        ]


@dataclass
class DetectorParameters:
    """
    Every learnable tensor of the detector.

    ``classifier`` is a single head applied both to the detector hidden state
    and to every decoder hidden state.
    """

    detector: GruParameters
    decoder: GruParameters
    progression: LinearHead
    feature: LinearHead
    classifier: LinearHead

    @classmethod
    def initialize(cls, config: DetectorConfig, rng: np.random.Generator) -> "DetectorParameters":
        hidden, dim = config.hidden_size, config.feature_dim
        return cls(
            detector=GruParameters.initialize(hidden, 2 * dim, rng, "detector"),
            decoder=GruParameters.initialize(hidden, dim, rng, "decoder"),
            progression=LinearHead.initialize(config.sampler.num_states, hidden, rng, "progression"),
            feature=LinearHead.initialize(dim, hidden, rng, "feature"),
            classifier=LinearHead.initialize(config.num_classes, hidden, rng, "classifier"),
        )

    def parameters(self) -> list[Tensor]:
        return [
            *self.detector.parameters(),
            *self.decoder.parameters(),
            *self.progression.parameters(),
            *self.feature.parameters(),
            *self.classifier.parameters(),
        ]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.parameters()]

    def freeze_decoder(self) -> None:
        """Exclude the decoder GRU and feature head from gradients and updates."""
        for p in [*self.decoder.parameters(), *self.feature.parameters()]:
            p.requires_grad = False
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


@dataclass
class FuturePrediction:
    features: list[Tensor]
    class_probs: list[Tensor]
    hiddens: list[Tensor]


@dataclass
class StreamState:
    """Recurrent state of one stream (or one lock-step batch of streams)."""

    hidden: Tensor
    history: HistoryStack
    temperature: float = 1.0
    rng: np.random.Generator | None = None
    time: int = 0

    @classmethod
    def initial(
        cls,
        config: DetectorConfig,
        batch: int | None = None,
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> "StreamState":
        lead = () if batch is None else (batch,)
        return cls(
            hidden=Tensor(np.zeros((*lead, config.hidden_size))),
            history=HistoryStack.zeros(config.sampler.history_size, config.feature_dim, batch),
            temperature=temperature,
            rng=rng,
        )

    def snapshot(self) -> "StreamState":
        """Copy of the state detached from any recorded computation."""
        return StreamState(
            hidden=Tensor(self.hidden.values),
            history=self.history,
            temperature=self.temperature,
            rng=copy.deepcopy(self.rng),
            time=self.time,
        )


@dataclass
class StepOutput:
    scores: Tensor
    probs: Tensor
    future: FuturePrediction
    progression: ProgressionDistribution
    supplementary: Tensor
    window_start: np.ndarray


def gru_step(params: GruParameters, h_prev: Tensor, x: Tensor) -> Tensor:
    """
    One gated recurrent update.

    z = sigmoid(W_z [h; x] + b_z), r = sigmoid(W_r [h; x] + b_r),
    c = tanh(W_h [r * h; x] + b_h), h' = (1 - z) * h + z * c.
    """
    if h_prev.shape[-1] != params.hidden_size:
        raise DimensionError(f"hidden shape {h_prev.shape} does not match {params.hidden_size}")
    if x.shape[-1] != params.input_size or x.shape[:-1] != h_prev.shape[:-1]:
        raise DimensionError(f"input shape {x.shape} does not match {params.input_size}")
    joint = concat([h_prev, x])
    update = sigmoid(linear(joint, params.w_update, params.b_update))
    reset = sigmoid(linear(joint, params.w_reset, params.b_reset))
    candidate = tanh(linear(concat([mul(reset, h_prev), x]), params.w_candidate, params.b_candidate))
    return add(mul(one_minus(update), h_prev), mul(update, candidate))


def estimate_progression(h_prev: Tensor, head: LinearHead) -> Tensor:
    """Log-probabilities over progression states from the previous hidden state."""
    return log_softmax(head(h_prev))


def predict_future(
    h_prev: Tensor, f_curr: Tensor, params: DetectorParameters, steps: int
) -> FuturePrediction:
    """
    Roll the decoder forward ``steps`` times from ``h_prev``.

    Step 0 reads the current frame; each later step reads the previous
    predicted feature.
    """
    if steps < 1:
        raise ContractError(f"prediction depth must be positive, got {steps}")
    prediction = FuturePrediction(features=[], class_probs=[], hiddens=[])
    hidden, inputs = h_prev, f_curr
    for _ in range(steps):
        hidden = gru_step(params.decoder, hidden, inputs)
        feature = params.feature(hidden)
        prediction.hiddens.append(hidden)
        prediction.features.append(feature)
        prediction.class_probs.append(softmax(params.classifier(hidden)))
        inputs = feature
    return prediction


def detector_step(
    state: StreamState,
    feature: ArrayLike,
    params: DetectorParameters,
    config: DetectorConfig,
    mode: Mode = Mode.EVAL,
    forced_progression: int | None = None,
) -> StepOutput:
    """
    Classify one frame and advance the stream state.

    Order: predict futures from h_{t-1} and f_t, build the history/future
    pool, estimate and sample the progression (unless forced or adaptive
    sampling is off), average the selected window, run the detection GRU on
    ``[f_t; f_s]``, classify, then push f_t into the history.

    :param state: Stream state; updated in place.
    :param feature: Observed features of shape ``(..., D)``.
    :param params: Model parameters.
    :param config: Model configuration.
    :param mode: Train samples Gumbel noise; eval takes the argmax.
    :param forced_progression: Use this state's window instead of sampling.
    :return: Scores, probabilities and diagnostics for this frame.
    """
    if state is None:
        raise ContractError("stream state is not initialized")
    frame = np.asarray(feature, dtype=np.float64)
    if frame.shape != state.history.frame_shape:
        raise DimensionError(
            f"frame shape {frame.shape} does not match stream shape {state.history.frame_shape}"
        )
    h_prev = state.hidden
    observed = Tensor(frame)
    sampler = config.sampler

    future = predict_future(h_prev, observed, params, sampler.history_size)
    pool = build_pool(state.history, future.features)
    if forced_progression is None and config.adaptive_sampling:
        log_probs = estimate_progression(h_prev, params.progression)
        progression = gumbel.sample_progression(log_probs, state.temperature, mode, state.rng)
    else:
        chosen = sampler.num_states - 1 if forced_progression is None else forced_progression
        progression = fixed_progression(chosen, sampler, frame.shape[:-1], state.temperature)
    supplementary = adaptive_supplementary(pool, progression, sampler)

    hidden = gru_step(params.detector, h_prev, concat([observed, supplementary]))
    scores = params.classifier(hidden)
    probs = softmax(scores)

    state.hidden = hidden
    state.history = push_history(state.history, frame)
    state.time += 1
    return StepOutput(
        scores=scores,
        probs=probs,
        future=future,
        progression=progression,
        supplementary=supplementary,
        window_start=progression.hard_sample * sampler.stride,
    )
