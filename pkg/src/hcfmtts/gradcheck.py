"""Central finite-difference checks of the autodiff tape, in float64.

Each check reduces an op's output to a scalar with fixed random weights,
so every output element contributes a distinct gradient.
"""

from dataclasses import dataclass, field
import time

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, CrossModalAlign, MultiHeadAttention
from .flow import cfm_loss
from .frontend import build_hierarchical_representation
from .hca import HcaConfig, hca_loss, in_batch_scores, info_nce
from .tensor import Tensor

STEP = 1e-4
FLOOR = 1e-3
PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class GradReport:
    op: str
    max_rel_err: float
    tol: float
    table: list = field(default_factory=list)   # (input, index, analytic, numeric, rel_err)

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def format(self):
        status = "ok" if self.passed else "FAIL"
        return f"{self.op:<22} max rel err {self.max_rel_err:.3e}  (tol {self.tol:.0e})  {status}"


def rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), FLOOR)


def check_gradients(op, fn, inputs, tol=PRIMITIVE_TOL, h=STEP, max_elems=None, rng=None):
    """Compare tape gradients of scalar ``fn(*tensors)`` against central differences.

    ``inputs`` are float64 arrays; with ``max_elems`` only that many elements
    per input (chosen by ``rng``) are perturbed.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    T.backward(out)
    table = []
    worst = 0.0
    for k, (a, leaf) in enumerate(zip(arrays, leaves)):
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(a)
        flat = np.arange(a.size)
        if max_elems is not None and a.size > max_elems:
            flat = np.sort((rng or np.random.default_rng(0)).choice(a.size, max_elems, replace=False))
        for i in flat:
            idx = np.unravel_index(i, a.shape)
            orig = a[idx]
            a[idx] = orig + h
            up = float(fn(*[Tensor(x) for x in arrays]).data)
            a[idx] = orig - h
            down = float(fn(*[Tensor(x) for x in arrays]).data)
            a[idx] = orig
            num = (up - down) / (2 * h)
            err = rel_err(float(grad[idx]), num)
            worst = max(worst, err)
            table.append((k, idx, float(grad[idx]), num, err))
    return GradReport(op, worst, tol, table)


def _weighted(shape, seed):
    w = Tensor(np.random.default_rng(seed).standard_normal(shape))
    return lambda y: (y * w).sum()


def primitive_cases(seed=0):
    """(name, fn, inputs) for every differentiable primitive and small composites."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)
    pos = lambda *s: rng.uniform(0.5, 2.0, s)
    w23 = _weighted((2, 3), 1)
    w234 = _weighted((2, 3, 4), 2)
    mask = np.array([[True, True, False, True], [True, False, True, True], [True] * 4])
    ids = np.array([[0, 2, 1], [3, 3, 0]])

    def drop(x):
        return (T.dropout(x, 0.3, np.random.default_rng(5), training=True) * Tensor(r_drop)).sum()
    r_drop = r(3, 4)

    mha = MultiHeadAttention(np.random.default_rng(7), 8, 2, 0.0).astype(np.float64)
    attn_mask = np.array([[True] * 5, [True, True, True, False, False]])[:, None, :]

    def mha_fn(q, kv):
        return _weighted((2, 4, 8), 8)(mha(q, kv, kv, attn_mask))

    cases = [
        ("add", lambda a, b: w23(a + b), [r(2, 3), r(3)]),
        ("sub", lambda a, b: w23(a - b), [r(2, 3), r(2, 1)]),
        ("mul", lambda a, b: w23(a * b), [r(2, 3), r(2, 3)]),
        ("div", lambda a, b: w23(a / b), [r(2, 3), pos(2, 3)]),
        ("matmul", lambda a, b: _weighted((2, 3, 5), 3)(a @ b), [r(2, 3, 4), r(4, 5)]),
        ("exp", lambda a: w23(T.exp(a)), [r(2, 3)]),
        ("log", lambda a: w23(T.log(a)), [pos(2, 3)]),
        ("sqrt", lambda a: w23(T.sqrt(a)), [pos(2, 3)]),
        ("tanh", lambda a: w23(T.tanh(a)), [r(2, 3)]),
        ("sigmoid", lambda a: w23(T.sigmoid(a)), [r(2, 3) * 3]),
        ("silu", lambda a: w23(T.silu(a)), [r(2, 3) * 2]),
        ("gelu", lambda a: w23(T.gelu(a)), [r(2, 3) * 2]),
        ("sum", lambda a: (a.sum(axis=1) * Tensor(np.arange(2.0) + 1)).sum(), [r(2, 3)]),
        ("mean", lambda a: _weighted((2, 4), 4)(a.mean(axis=1)), [r(2, 3, 4)]),
        ("reshape", lambda a: _weighted((6, 4), 5)(a.reshape(6, 4)), [r(2, 3, 4)]),
        ("transpose", lambda a: _weighted((4, 2, 3), 6)(a.transpose(2, 0, 1)), [r(2, 3, 4)]),
        ("getitem", lambda a: _weighted((2, 2), 9)(a[:, [0, 2, 2]][:, 1:, 1]), [r(2, 3, 4)]),
        ("concat", lambda a, b: _weighted((2, 5), 10)(T.concat([a, b], axis=1)), [r(2, 3), r(2, 2)]),
        ("softmax", lambda a: _weighted((3, 4), 11)(T.softmax(a, axis=-1, mask=mask)), [r(3, 4)]),
        ("log_softmax", lambda a: _weighted((3, 4), 12)(T.log_softmax(a, axis=-1)), [r(3, 4)]),
        ("layer_norm", lambda a, g, b: w234(T.layer_norm(a, g, b)), [r(2, 3, 4), r(4), r(4)]),
        ("conv1d", lambda x, w, b: _weighted((2, 6, 3), 13)(T.conv1d(x, w, b)), [r(2, 6, 4), r(3, 4, 3), r(3)]),
        ("embedding", lambda tbl: _weighted((2, 3, 5), 14)(T.embedding(tbl, ids)), [r(4, 5)]),
        ("dropout", drop, [r(3, 4)]),
        ("attention", mha_fn, [r(2, 4, 8), r(2, 5, 8)]),
        ("info_nce", lambda p, n: info_nce(p, n), [r(4), r(4, 3)]),
        ("in_batch_hca", lambda s, c: hca_loss({"phon": in_batch_scores(s, c, 0.1)}, HcaConfig({"phon": 1.0})),
         [r(3, 6), r(3, 6)]),
    ]
    return cases


def alignment_case(seed=0):
    rng = np.random.default_rng(seed)
    block = CrossModalAlign(rng, AttentionConfig(8, 2, 0.0)).astype(np.float64)
    block.eval()
    for p in block.parameters():
        p.data = p.data + rng.normal(0.0, 0.3, p.data.shape)
    tv = np.array([[True] * 3, [True, True, False]])
    av = np.array([[True] * 4, [True, True, True, False]])
    wt, wa = _weighted((2, 3, 8), 20), _weighted((2, 4, 8), 21)

    def fn(text, audio):
        out = block(text, audio, tv, av)
        return wt(out.text) + wa(out.audio)
    return "cross_modal_align", fn, [rng.standard_normal((2, 3, 8)), rng.standard_normal((2, 4, 8))]


def run_primitives(seed=0):
    reports = []
    for name, fn, inputs in primitive_cases(seed) + [alignment_case(seed)]:
        reports.append(check_gradients(name, fn, inputs))
    return reports


def desk_model_case(cfg=None, seed=0):
    """Full model in float64, randomly re-initialised (output layer included), eval mode.

    Returns (model, loss_fn) where ``loss_fn()`` evaluates the full training
    objective (CFM, HCA, duration, alignment) on a fixed two-item batch with
    fixed noise.
    """
    from .config import ModelConfig
    from .model import FieldModel, Utterance, collate
    from .train import guided_attention_loss
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    model = FieldModel(cfg, seed=seed).astype(np.float64)
    model.eval()
    for p in model.parameters():
        p.data = p.data + rng.normal(0.0, 0.1, p.data.shape)
    texts = ["ama genehe.", "šunggira?"]
    utts = []
    for k, text in enumerate(texts):
        ht = build_hierarchical_representation(text)
        frames = 2 * len(ht)
        utts.append(Utterance(ht, k, mel=rng.standard_normal((frames, cfg.mel_bins))))
    batch = collate(utts, dtype=np.float64)
    hca_cfg = HcaConfig({t: 1.0 for t in cfg.active_tiers})

    def loss_fn():
        cond, tiers = model.encode_conditions(batch)
        store = {}

        def field(x_t, t, c):
            v, hidden = model.forward_field(x_t, t, c, batch)
            store["hidden"] = hidden
            return v
        cfm = cfm_loss(field, batch.mel, cond, np.random.default_rng(99), batch.f_target[..., None])
        hca = hca_loss(model.hca_scores(store["hidden"], tiers, batch, 0.5), hca_cfg)
        err = model.duration(cond, batch.t_target) - Tensor(np.log(batch.target_frames.astype(np.float64)))
        align = guided_attention_loss(model.align.audio_cross._weights, batch, 0.2)
        return cfm + hca * 0.1 + (err * err).mean() + align
    return model, loss_fn


def check_model(cfg=None, seed=0, per_param=2):
    """Finite-difference check of sampled elements of every model parameter."""
    model, loss_fn = desk_model_case(cfg, seed)
    params = model.named_parameters()
    model.zero_grad()
    T.backward(loss_fn())
    rng = np.random.default_rng(seed + 1)
    table, worst = [], 0.0
    for name, p in params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        picks = rng.choice(p.data.size, min(per_param, p.data.size), replace=False)
        for i in np.sort(picks):
            idx = np.unravel_index(i, p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + STEP
            up = float(loss_fn().data)
            p.data[idx] = orig - STEP
            down = float(loss_fn().data)
            p.data[idx] = orig
            num = (up - down) / (2 * STEP)
            err = rel_err(float(grad[idx]), num)
            worst = max(worst, err)
            table.append((name, idx, float(grad[idx]), num, err))
    return GradReport("desk_model", worst, MODEL_TOL, table)


def run_suite(seed=0, out=None):
    """All primitive checks plus the full model; returns (reports, seconds)."""
    start = time.perf_counter()
    reports = run_primitives(seed)
    for rep in reports:
        if out:
            out(rep.format())
    rep = check_model(seed=seed)
    reports.append(rep)
    if out:
        out(rep.format())
    return reports, time.perf_counter() - start
