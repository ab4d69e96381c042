import numpy as np

from hcfmtts.gradcheck import (MODEL_TOL, PRIMITIVE_TOL, check_gradients, check_model, rel_err,
                               run_primitives)
from hcfmtts.tensor import Tensor


def test_rel_err_floor():
    assert rel_err(1e-6, 2e-6) == 1e-6 / 1e-3
    assert rel_err(2.0, 1.0) == 0.5


def test_detects_a_wrong_gradient():
    # sum of squares with the backward rule deliberately bypassed
    def fn(x):
        return (Tensor(x.data * x.data) + x * 0.0).sum()
    assert not check_gradients("broken", fn, [np.array([1.0, 2.0])]).passed


def test_every_primitive_within_tolerance():
    reports = run_primitives()
    names = {r.op for r in reports}
    assert {"matmul", "softmax", "layer_norm", "conv1d", "attention", "cross_modal_align"} <= names
    for r in reports:
        assert r.max_rel_err < PRIMITIVE_TOL, r.format()


def test_full_model_within_tolerance():
    rep = check_model()
    assert rep.max_rel_err < MODEL_TOL
    assert len({row[0] for row in rep.table}) > 50
