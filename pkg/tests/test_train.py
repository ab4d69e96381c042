import math

import numpy as np
import pytest

from hcfmtts import train as tr
from hcfmtts.config import ModelConfig, TrainConfig
from hcfmtts.corpus import generate_synthetic_corpus
from hcfmtts.errors import TrainingAborted
from hcfmtts.hca import HcaConfig
from hcfmtts.model import FieldModel
from hcfmtts.tensor import Tensor


def tiny(**kw):
    base = dict(steps=6, warmup_steps=2, batch_size=4, corpus_items=8, val_items=4, eval_draws=1,
                model=ModelConfig(dit_layers=1, dit_hidden=32, enc_channels=32, hca_dim=16))
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule_landmarks():
    cfg = TrainConfig(steps=500, warmup_steps=50, peak_lr=5e-3, final_lr=1e-5)
    assert tr.lr_at(0, cfg) == 0.0
    assert abs(tr.lr_at(50, cfg) - 5e-3) <= 1e-9
    assert abs(tr.lr_at(499, cfg) - 1e-5) <= 1e-9
    assert tr.lr_at(25, cfg) == pytest.approx(2.5e-3)
    lrs = [tr.lr_at(s, cfg) for s in range(50, 500)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_adamw_matches_scalar_reference():
    b1, b2, eps, wd, lr = 0.9, 0.98, 1e-8, 0.01, 0.05
    p = Tensor(np.array([1.5]), requires_grad=True)
    opt = tr.AdamW([p], (b1, b2), eps, wd)
    w, m, v = 1.5, 0.0, 0.0
    for t in range(1, 11):
        g = 2.0 * w - 1.0 + 0.3 * math.sin(t)   # gradient of a drifting quadratic
        p.grad = np.array([2.0 * float(p.data[0]) - 1.0 + 0.3 * math.sin(t)])
        opt.step(lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1 ** t), v / (1 - b2 ** t)
        w = w - lr * wd * w - lr * mh / (math.sqrt(vh) + eps)
        assert abs(float(p.data[0]) - w) <= 1e-7


def test_clip_bounds_global_norm():
    rng = np.random.default_rng(0)
    params = [Tensor(np.zeros(s), requires_grad=True) for s in [(3, 4), (5,), (2, 2, 2)]]
    for p in params:
        p.grad = rng.standard_normal(p.shape) * 10
    pre = tr.clip_grad_norm(params, 1.2)
    assert pre > 1.2
    assert tr.global_norm(params) <= 1.2 + 1e-6
    for p in params:
        p.grad = p.grad * 1e-3
    small = tr.global_norm(params)
    assert tr.clip_grad_norm(params, 1.2) == small == tr.global_norm(params)


def test_csv_deterministic_across_runs(tmp_path):
    cfg = tiny()
    corpus = generate_synthetic_corpus(cfg.seed, cfg.corpus_items, cfg.model.mel_bins)
    a = tr.train(cfg, corpus, log_path=tmp_path / "a.csv")
    b = tr.train(cfg, generate_synthetic_corpus(cfg.seed, cfg.corpus_items, cfg.model.mel_bins),
                 log_path=tmp_path / "b.csv")
    text = (tmp_path / "a.csv").read_text()
    assert text == (tmp_path / "b.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "step,lr,cfm_loss,hca_loss,grad_norm"
    assert len(lines) == cfg.steps + 1
    for pa, pb in zip(a.model.parameters(), b.model.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_seed_changes_run():
    corpus = generate_synthetic_corpus(42, 8, 16)
    assert tr.train(tiny(), corpus).csv() != tr.train(tiny(seed=43), corpus).csv()


def test_non_finite_loss_aborts_with_last_checkpoint(tmp_path, monkeypatch):
    real = tr.step_losses
    calls = []

    def poisoned(*args):
        cfm, hca, dur, align = real(*args)
        calls.append(1)
        if len(calls) == 4:
            cfm = cfm * float("nan")
        return cfm, hca, dur, align
    monkeypatch.setattr(tr, "step_losses", poisoned)
    with pytest.raises(TrainingAborted) as err:
        tr.train(tiny(ckpt_every=2), ckpt_dir=tmp_path)
    assert err.value.step == 3
    assert err.value.last_good == tmp_path / "step_000002.ckpt"
    assert err.value.last_good.exists()


def test_every_parameter_gets_gradient():
    cfg = TrainConfig(ref_prob=1.0)
    corpus = generate_synthetic_corpus(42, 16, 16)
    model = FieldModel(cfg.model, seed=0)
    params = dict(model.named_parameters())
    touched = {name: False for name in params}
    sampler = tr.BatchSampler(corpus.items, 8, np.random.default_rng(1), np.random.default_rng(2),
                              cfg.ref_prob)
    hca_cfg = HcaConfig(cfg.lambdas, cfg.hca_tau)
    noise = np.random.default_rng(3)
    for _ in range(3):
        model.zero_grad()
        cfm, hca, dur, align = tr.step_losses(model, sampler.next(), cfg, noise, hca_cfg)
        tr.T.backward(cfm + hca * cfg.hca_weight + dur + align)
        for name, p in params.items():
            if p.grad is not None and np.any(p.grad != 0):
                touched[name] = True
        # move off the zero-initialised output layer so upstream grads flow
        model.out.weight.data = model.out.weight.data + 0.01
    dead = [n for n, hit in touched.items() if not hit]
    assert dead == []


def test_guided_attention_prefers_diagonal():
    from hcfmtts.model import Utterance, collate
    from hcfmtts.frontend import build_hierarchical_representation
    ht = build_hierarchical_representation("ama")
    batch = collate([Utterance(ht, 0, n_frames=6)])
    on = np.zeros((1, 1, 6, 3))
    off = np.zeros((1, 1, 6, 3))
    for f in range(6):
        on[0, 0, f, f // 2] = 1.0
        off[0, 0, f, 2 - f // 2] = 1.0
    loss_on = float(tr.guided_attention_loss(Tensor(on), batch, 0.2).data)
    loss_off = float(tr.guided_attention_loss(Tensor(off), batch, 0.2).data)
    assert 0 <= loss_on < loss_off <= 1


def test_ablation_report_has_three_rows():
    rep = tr.run_ablation(tiny(steps=3, warmup_steps=1), mcd_items=1)
    assert [r.variant for r in rep.rows] == ["A", "B", "C"]
    assert [r.tiers for r in rep.rows] == ["phon", "phon,syll", "phon,syll,pros"]
    assert len(rep.format().splitlines()) == 5


def test_duration_loss_halves_within_200_steps(desk_run):
    result, _ = desk_run
    d = result.dur_losses
    assert np.mean(d[190:200]) <= 0.5 * np.mean(d[:10])


def test_trained_mcd_half_of_untrained(desk_run):
    result, _ = desk_run
    from conftest import desk_config
    cfg = desk_config()
    items = generate_synthetic_corpus(cfg.seed, cfg.corpus_items, cfg.model.mel_bins).items[:8]
    init_seed = int(tr._streams(cfg.seed)[0].integers(2 ** 31))
    untrained = FieldModel(cfg.model, seed=init_seed)
    trained_mcd = tr.synth_mcd(result.model, items)
    untrained_mcd = tr.synth_mcd(untrained, items)
    assert trained_mcd <= 0.5 * untrained_mcd
