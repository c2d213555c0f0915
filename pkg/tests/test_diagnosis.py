import numpy as np
import pytest

from vsr_fdx.diagnosis import (ERROR, LOG_HEADER, DiagnosisSession, LocalizationState,
                               aggregate_window, classify_sample, classify_samples, decide,
                               decide_array, evaluate, evaluate_decisions, localize,
                               localize_stream, mean_diagonal)
from vsr_fdx.errors import EmptyDatasetError, RegimeMismatchError
from vsr_fdx.features import FaultLabel
from vsr_fdx.mlp import Layer, MlpModel
from vsr_fdx.sim import SwitchId

# network outputs and decisions printed for eight sample currents
OUTPUT_EXAMPLES = [(-0.07, 0), (1.02, 1), (1.99, 2), (2.96, 3), (4.01, 4), (5.01, 5),
                   (5.99, 6), (6.97, 7)]


@pytest.mark.parametrize("f, y", OUTPUT_EXAMPLES)
def test_decide_examples(f, y):
    assert decide(f) is FaultLabel(y)


def test_decide_boundaries():
    for f in (-0.5, 7.5, -3.0, 12.0, float("nan")):
        assert decide(f) is None
    assert decide(-0.4999) is FaultLabel.F0
    assert decide(7.4999) is FaultLabel.F7
    # round half away from zero
    assert decide(0.5) is FaultLabel.F1 and decide(2.5) is FaultLabel.F3
    np.testing.assert_array_equal(decide_array([-0.5, -0.07, 2.5, 7.5, 6.97]),
                                  [ERROR, 0, 3, ERROR, 7])


def constant_model(value, regime="transient", dim=3):
    return MlpModel([Layer(np.zeros((1, dim)), [value], "purelin")], regime=regime)


def test_classify_with_constant_models(rng):
    x = rng.normal(scale=10, size=(5, 3))
    assert classify_sample(constant_model(3.2), x[0]) is FaultLabel.F3
    assert classify_sample(constant_model(12.0), x[0]) is None
    np.testing.assert_array_equal(classify_samples(constant_model(3.2, "synthetic", 7), x), 3)
    with pytest.raises(RegimeMismatchError):
        classify_samples(constant_model(1.0, "timeseries:4", 12), x)


def test_aggregate_half_split():
    rep = aggregate_window([0] * 100 + [1] * 100, 0.1)
    assert rep.fault_switches == {SwitchId.SaP}
    assert rep.counts[:2] == (100, 100) and rep.size == 200


def test_aggregate_below_threshold_and_errors():
    assert aggregate_window([0] * 200).fault_switches == frozenset()
    assert aggregate_window([5] + [0] * 199, 0.1).fault_switches == frozenset()
    rep = aggregate_window([None] * 50 + [ERROR] * 50 + [0] * 100)
    assert rep.error_count == 100 and rep.fault_switches == frozenset()
    rep = aggregate_window([7] * 20 + [6] * 19 + [0] * 161)
    assert rep.fault_switches == {SwitchId.SaP, SwitchId.SbP}
    with pytest.raises(ValueError):
        aggregate_window([0] * 10, 0.0)


def _report(labels):
    return aggregate_window(labels)


def test_localize_debounce():
    fault = _report([0] * 100 + [3] * 100)
    clean = _report([0] * 200)
    state = LocalizationState(debounce=2)
    assert localize(fault, state) == frozenset()
    assert localize(fault, state) == {SwitchId.SbP}
    assert localize(clean, state) == {SwitchId.SbP}  # one miss is not enough
    assert localize(fault, state) == {SwitchId.SbP}
    assert localize(clean, state) == {SwitchId.SbP}
    assert localize(clean, state) == frozenset()


def test_isolated_glitch_never_confirms():
    reports = [_report([0] * 200), _report([0] * 150 + [4] * 50)] * 10
    assert all(c == frozenset() for c in localize_stream(reports))
    with pytest.raises(ValueError):
        LocalizationState(debounce=0)


def test_session_log(rng):
    session = DiagnosisSession(constant_model(1.0))
    for k in range(3):
        session.process(k, rng.normal(size=(200, 3)))
    assert session.confirmed == {SwitchId.SaP}
    lines = session.log_text().splitlines()
    assert lines[0] == LOG_HEADER
    assert lines[1] == "0,0.000000,0,200,0,0,0,0,0,0,0,SaP"
    assert lines[3].startswith("2,0.040000,")


def test_evaluate_perfect_and_constant():
    y = np.repeat(np.arange(8), 10)
    ev = evaluate_decisions(y, y)
    np.testing.assert_array_equal(ev.matrix[:, :8], np.eye(8))
    assert ev.macro_accuracy == ev.micro_accuracy == 1.0
    ev = evaluate_decisions(y, np.zeros_like(y))
    assert ev.recalls.tolist() == [1.0] + [0.0] * 7
    assert ev.macro_accuracy == 0.125


def test_evaluate_error_column(tmp_path):
    ev = evaluate_decisions([0, 0, 1, 1], [0, ERROR, 1, 1])
    assert ev.matrix[0, 8] == 0.5 and ev.error_rate == 0.25
    np.testing.assert_allclose(ev.matrix[:2].sum(axis=1), 1.0)
    ev.to_csv(tmp_path / "c.csv", {"seed": 1})
    text = (tmp_path / "c.csv").read_text().splitlines()
    assert text[0] == "# seed=1"
    assert text[2].startswith("F0,0.5000,0.0000") and text[2].endswith(",0.5000,2")
    with pytest.raises(EmptyDatasetError):
        evaluate_decisions([], [])


def test_evaluate_model(rng):
    x = rng.normal(size=(30, 3))
    ev = evaluate(constant_model(2.0), x, np.full(30, 2))
    assert ev.micro_accuracy == 1.0


def test_mean_diagonal_reference_rows():
    diag = [0.9842, 0.9582, 0.9695, 0.9808, 0.9987, 0.9722, 0.9978, 0.9431]
    assert mean_diagonal(np.diag(diag)) == pytest.approx(0.97556, abs=5e-6)
