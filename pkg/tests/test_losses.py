import numpy as np
import pytest
from pydantic import ValidationError

from oadet.constants import UNLABELED
from oadet.diffcore import Tape, Tensor
from oadet.errors import ContractError, DimensionError
from oadet.losses import LossReport, feature_regression, loss_cls, loss_pre, total_loss


def test_total_loss_weighting():
    combined = total_loss(Tensor(0.5), Tensor(0.3), 1.0)
    assert combined.item() == pytest.approx(0.8, abs=1e-12)
    assert total_loss(Tensor(0.5), Tensor(0.3), 0.0).item() == pytest.approx(0.5)


def test_total_loss_feature_term():
    combined = total_loss(Tensor(0.5), Tensor(0.3), 2.0, Tensor(0.1), 0.5)
    assert combined.item() == pytest.approx(0.5 + 0.6 + 0.05)


def test_negative_balance_rejected():
    with pytest.raises(ContractError):
        total_loss(Tensor(0.5), Tensor(0.3), -1.0)


def test_loss_cls_ignores_unlabeled_rows():
    probs = Tensor([[0.5, 0.5], [0.9, 0.1], [0.2, 0.8]])
    labels = np.array([0, UNLABELED, 1])
    expected = -(np.log(0.5) + np.log(0.8)) / 2
    assert loss_cls(probs, labels).item() == pytest.approx(expected)


def test_loss_cls_without_labels_is_zero():
    probs = Tensor([[0.5, 0.5]], requires_grad=True)
    assert loss_cls(probs, np.array([UNLABELED])).item() == 0.0


def test_loss_pre_averages_steps():
    steps = [Tensor([0.25, 0.75]), Tensor([0.5, 0.5])]
    value = loss_pre(steps, np.array([1, 0]))
    assert value.item() == pytest.approx(-(np.log(0.75) + np.log(0.5)) / 2)


def test_loss_pre_batched_labels():
    steps = [Tensor([[0.25, 0.75], [0.6, 0.4]])]
    value = loss_pre(steps, np.array([[1, 0]]))
    assert value.item() == pytest.approx(-(np.log(0.75) + np.log(0.6)) / 2)


def test_loss_pre_step_mismatch():
    with pytest.raises(DimensionError):
        loss_pre([Tensor([0.5, 0.5])], np.array([0, 1]))


def test_loss_pre_gradient_reaches_every_step():
    steps = [Tensor([0.25, 0.75], requires_grad=True), Tensor([0.5, 0.5], requires_grad=True)]
    with Tape() as tape:
        value = loss_pre(steps, np.array([1, 0]))
    tape.backward(value)
    np.testing.assert_allclose(steps[0].grad, [0.0, -1 / (2 * 0.75)])
    np.testing.assert_allclose(steps[1].grad, [-1 / (2 * 0.5), 0.0])


def test_feature_regression():
    predicted = [Tensor([1.0, 2.0]), Tensor([0.0, 0.0])]
    targets = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert feature_regression(predicted, targets).item() == pytest.approx((2.0 + 1.0) / 2)


def test_loss_report_checks_total():
    report = LossReport(classification=0.5, prediction=0.3, balance=1.0, total=0.8)
    assert report.total == 0.8
    with pytest.raises(ValidationError):
        LossReport(classification=0.5, prediction=0.3, balance=1.0, total=0.9)
