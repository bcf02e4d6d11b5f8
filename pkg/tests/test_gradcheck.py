import time

import numpy as np
import pytest

from rseed import gradcheck
from rseed import tensor as T


def _cases_for(op):
    return [name for name in gradcheck.all_cases() if name.split("[")[0] == op]


def test_every_op_has_a_case():
    for op in T.OPS:
        assert _cases_for(op), op


@pytest.mark.parametrize("op", sorted(T.OPS))
def test_sign_flip_is_caught(op):
    with T.sign_flip(op):
        report = gradcheck.run_checks(seed=1, instances=1, ops=_cases_for(op))
    assert not report.passed
    assert any(line.startswith("FAIL") for line in report.lines())


def test_unflipped_cases_pass_small_run():
    report = gradcheck.run_checks(seed=3, instances=2)
    assert report.passed, "\n".join(report.lines())


def test_same_seed_same_report():
    a = gradcheck.run_checks(seed=5, instances=2, ops=["conv2d[chw,reflect,3]", "abs"])
    b = gradcheck.run_checks(seed=5, instances=2, ops=["conv2d[chw,reflect,3]", "abs"])
    assert a.lines() == b.lines()


def test_unknown_op():
    with pytest.raises(KeyError):
        gradcheck.run_checks(ops=["nope"])


def test_check_case_detects_wrong_gradient():
    class Wrong(T.Function):
        def forward(self, x):
            self.x = x
            return x * x

        def backward(self, g):
            return (g * 3.0 * self.x,)

    rng = np.random.default_rng(0)
    *_, ok, _ = gradcheck.check_case(lambda t: Wrong.apply(t[0]), [rng.standard_normal(4)])
    assert not ok


def test_kink_refinement():
    # an element within h of zero spoils the plain central difference of |x|
    rel, err, _, _, ok, refined = gradcheck.check_case(lambda t: T.absolute(t[0]), [np.array([2e-4, 1.0])])
    assert ok and refined == 1


def test_composite_runs_in_budget():
    start = time.perf_counter()
    report = gradcheck.run_checks(seed=0, instances=3, ops=["composite_total_loss"])
    assert report.passed
    assert time.perf_counter() - start < 60
