import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hcfmtts.errors import ContractError, ShapeError
from hcfmtts.gradcheck import check_gradients
from hcfmtts.hca import EmbeddingPair, HcaConfig, hca_loss, in_batch_scores, info_nce, similarity
from hcfmtts.tensor import Tensor


def scores(pos, neg):
    return Tensor(np.asarray(pos, float)), Tensor(np.asarray(neg, float))


def reference_info_nce(pos, neg):
    pos, neg = np.asarray(pos, float), np.asarray(neg, float)
    return float(np.mean([-math.log(math.exp(p) / (math.exp(p) + sum(math.exp(x) for x in n)))
                          for p, n in zip(pos, neg)]))


def test_similarity_examples():
    x = np.array([0.3, -1.2, 2.0])
    assert float(similarity(x, x, 1.0).data) == pytest.approx(1.0, abs=1e-12)
    assert float(similarity([1.0, 0.0], [0.0, 3.0], 1.0).data) == 0.0
    assert float(similarity(x, -x, 0.5).data) == pytest.approx(-2.0, abs=1e-12)


def test_similarity_rejects_zero_vector_and_mismatch():
    with pytest.raises(ContractError):
        similarity([0.0, 0.0], [1.0, 0.0], 1.0)
    with pytest.raises(ShapeError):
        similarity([1.0, 0.0], [1.0, 0.0, 0.0], 1.0)
    with pytest.raises(ShapeError):
        EmbeddingPair(np.ones(2), np.ones(3), "phon")


def test_uniform_similarities_three_ln_two():
    tiers = {k: scores([0.7, 0.7], [[0.7], [0.7]]) for k in ("phon", "syll", "pros")}
    assert float(hca_loss(tiers, HcaConfig()).data) == pytest.approx(3 * math.log(2), abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 5, 31])
def test_uniform_similarities_ln_n_plus_one(n):
    lam = {"phon": 0.5, "syll": 1.0, "pros": 2.0}
    tiers = {k: scores(np.full(3, -1.3), np.full((3, n), -1.3)) for k in lam}
    expected = sum(lam.values()) * math.log(n + 1)
    assert abs(float(hca_loss(tiers, HcaConfig(lam)).data) - expected) <= 1e-6


def test_saturation():
    tiers = {k: scores([20.0], [[0.0]]) for k in ("phon", "syll", "pros")}
    for k in tiers:
        assert float(hca_loss({k: tiers[k]}, HcaConfig()).data) < 1e-8


def test_lambda_masking_equals_standalone_tier():
    rng = np.random.default_rng(0)
    tiers = {k: scores(rng.standard_normal(4), rng.standard_normal((4, 3))) for k in ("phon", "syll", "pros")}
    only = HcaConfig({"phon": 1.0, "syll": 0.0, "pros": 0.0})
    assert float(hca_loss(tiers, only).data) == float(info_nce(*tiers["phon"]).data)


def test_matches_reference_formula():
    rng = np.random.default_rng(1)
    pos, neg = rng.standard_normal(5) * 3, rng.standard_normal((5, 4)) * 3
    assert float(info_nce(pos, neg).data) == pytest.approx(reference_info_nce(pos, neg), rel=1e-12)


def test_empty_negative_set_rejected():
    with pytest.raises(ContractError):
        info_nce(np.ones(2), np.ones((2, 0)))
    with pytest.raises(ContractError):
        HcaConfig(tau=0.0)
    with pytest.raises(ContractError):
        HcaConfig({"phon": -1.0})


def test_monotone_in_positive_score_1000_instances():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        pos, neg = rng.normal(0, 3, 1), rng.normal(0, 3, (1, n))
        lam = {"phon": float(rng.uniform(0.1, 2.0))}
        lo = float(hca_loss({"phon": scores(pos, neg)}, HcaConfig(lam)).data)
        hi = float(hca_loss({"phon": scores(pos + rng.uniform(0.01, 2.0), neg)}, HcaConfig(lam)).data)
        assert hi < lo


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2 ** 16))
def test_non_negative(p, n, seed):
    rng = np.random.default_rng(seed)
    tiers = {k: scores(rng.normal(0, 10, p), rng.normal(0, 10, (p, n))) for k in ("phon", "syll", "pros")}
    assert float(hca_loss(tiers, HcaConfig()).data) >= 0


def test_in_batch_scores_layout():
    rng = np.random.default_rng(3)
    s, c = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    pos, neg = in_batch_scores(Tensor(s), Tensor(c), 0.5)
    assert pos.shape == (3,) and neg.shape == (3, 2)
    for i in range(3):
        assert pos.data[i] == pytest.approx(float(similarity(s[i], c[i], 0.5).data), abs=1e-12)
        others = [j for j in range(3) if j != i]
        for k, j in enumerate(others):
            assert neg.data[i, k] == pytest.approx(float(similarity(s[i], c[j], 0.5).data), abs=1e-12)
    with pytest.raises(ContractError):
        in_batch_scores(Tensor(s[:1]), Tensor(c[:1]), 0.5)


def test_gradient_through_similarity_and_loss():
    rng = np.random.default_rng(4)

    def fn(s, c):
        return hca_loss({"phon": in_batch_scores(s, c, 0.2), "syll": in_batch_scores(s, c * 2.0, 0.3)},
                        HcaConfig({"phon": 1.0, "syll": 0.5}))
    rep = check_gradients("hca", fn, [rng.standard_normal((4, 5)), rng.standard_normal((4, 5))])
    assert rep.max_rel_err < 1e-4
