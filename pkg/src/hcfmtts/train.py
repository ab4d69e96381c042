"""Training loop, optimizer, LR schedule and the tier ablation runner."""

from dataclasses import dataclass, field
import math
from pathlib import Path
import time

import numpy as np

from . import checkpoint
from . import tensor as T
from .audio import mcd
from .corpus import generate_synthetic_corpus, load_corpus
from .errors import TrainingAborted
from .flow import OdeConfig, cfm_loss
from .hca import HcaConfig, hca_loss
from .model import FieldModel, Utterance, collate, synthesize, SynthesisRequest
from .tensor import Tensor

CSV_HEADER = "step,lr,cfm_loss,hca_loss,grad_norm"
VARIANTS = (("A", "phon"), ("B", "phon,syll"), ("C", "phon,syll,pros"))

# independent RNG streams derived from the run seed
STREAM_INIT, STREAM_ORDER, STREAM_NOISE, STREAM_DROPOUT, STREAM_REF = range(5)


def lr_at(step, cfg):
    """Linear warmup from 0 to the peak, then cosine decay to ``final_lr`` at the last step."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = max(cfg.steps - 1 - cfg.warmup_steps, 1)
    p = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * p))


def global_norm(params):
    return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))


def clip_grad_norm(params, max_norm):
    """Scale grads in place so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return norm


class AdamW:
    """Adam with decoupled weight decay, bias-corrected moments."""

    def __init__(self, params, betas=(0.9, 0.98), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            w = p.data.astype(np.float64)
            w = w - lr * self.weight_decay * w - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = w.astype(p.data.dtype)


@dataclass
class TrainResult:
    model: FieldModel
    rows: list                      # (step, lr, cfm, hca, grad_norm)
    eval_initial: float
    eval_final: float
    dur_losses: list = field(default_factory=list)
    seconds: float = 0.0

    def csv(self):
        return format_csv(self.rows)


def format_csv(rows):
    lines = [CSV_HEADER]
    lines += [f"{s},{lr:.9e},{c:.9e},{h:.9e},{g:.9e}" for s, lr, c, h, g in rows]
    return "\n".join(lines) + "\n"


def _streams(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def _utterance(item):
    return Utterance(item.ht, item.speaker, mel=np.asarray(item.mel.values, dtype=np.float32))


class BatchSampler:
    """Shuffle-by-seed epochs; optional same-speaker reference pairing."""

    def __init__(self, items, batch_size, order_rng, ref_rng, ref_prob):
        self.items = items
        self.batch_size = min(batch_size, len(items))
        self.order_rng, self.ref_rng = order_rng, ref_rng
        self.ref_prob = ref_prob
        self.queue = []
        by_speaker = {}
        for i, it in enumerate(items):
            by_speaker.setdefault(it.speaker, []).append(i)
        self.by_speaker = by_speaker

    def next(self):
        idx = []
        while len(idx) < self.batch_size:
            if not self.queue:
                self.queue = list(self.order_rng.permutation(len(self.items)))
            j = int(self.queue.pop(0))
            if j not in idx:
                idx.append(j)
        utts = [_utterance(self.items[j]) for j in idx]
        refs = []
        for j in idx:
            others = [k for k in self.by_speaker[self.items[j].speaker] if k != j]
            if others and self.ref_rng.random() < self.ref_prob:
                refs.append(_utterance(self.items[others[int(self.ref_rng.integers(len(others)))]]))
            else:
                refs.append(None)
        return collate(utts, refs if any(refs) else None)


def _field_with_context(model, batch, store):
    """Field wrapper that keeps reference frames clean and stashes the hidden state."""
    ctx = batch.f_context[..., None]

    def field(x_t, t, cond):
        if ctx.any():
            x_t = Tensor(np.where(ctx, batch.mel, x_t.data))
        v, hidden = model.forward_field(x_t, t, cond, batch)
        store["hidden"] = hidden
        return v
    return field


def guided_attention_loss(weights, batch, width):
    """Mean attention mass placed away from the frame-axis text positions.

    ``weights`` [B, h, F, T] are audio-to-text attention weights. Frame f and
    token k are penalised by 1 - exp(-d^2 / (2 width^2)) with d their distance
    on the frame axis divided by the utterance length.
    """
    b, h, frames, _ = weights.shape
    centres = np.arange(frames)[None, :, None] + 0.5
    length = np.maximum(batch.f_valid.sum(axis=1), 1)[:, None, None]
    d = (centres - batch.t_pos[:, None, :]) / length
    penalty = 1.0 - np.exp(-d * d / (2.0 * width * width))
    penalty *= batch.f_valid[:, :, None] & batch.t_valid[:, None, :]
    rows = h * float(batch.f_valid.sum())
    return (weights * Tensor(penalty[:, None].astype(weights.dtype))).sum() * (1.0 / rows)


def step_losses(model, batch, cfg, noise_rng, hca_cfg):
    """(cfm, hca, duration, alignment) loss Tensors for one batch."""
    cond, tiers = model.encode_conditions(batch)
    store = {}
    mask = batch.f_target[..., None]
    cfm = cfm_loss(_field_with_context(model, batch, store), batch.mel, cond, noise_rng, mask)
    if cfg.hca_weight > 0 and batch.size >= 2:
        scores = model.hca_scores(store["hidden"], tiers, batch, cfg.hca_tau)
        hca = hca_loss(scores, hca_cfg)
    else:
        hca = Tensor(np.zeros((), np.float32))
    log_d = model.predict_log_duration(cond, batch)
    err = log_d - Tensor(np.log(batch.target_frames).astype(np.float32))
    dur = (err * err).mean()
    align = guided_attention_loss(model.align.audio_cross._weights, batch, cfg.align_width)
    return cfm, hca, dur, align


def eval_cfm(model, items, seed=0, draws=4, batch_size=16):
    """Held-out flow-matching loss with fixed noise: mean over ``draws`` passes."""
    was = model.training
    model.eval()
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    try:
        for _ in range(draws):
            for s in range(0, len(items), batch_size):
                batch = collate([_utterance(it) for it in items[s:s + batch_size]])
                cond, _ = model.encode_conditions(batch)
                loss = cfm_loss(_field_with_context(model, batch, {}), batch.mel, cond, rng,
                                batch.f_target[..., None])
                n = float(batch.f_target.sum())
                total += float(loss.data) * n
                count += n
    finally:
        model.train(was)
    return total / count


def _corpus(cfg):
    if cfg.corpus_dir and (Path(cfg.corpus_dir) / "meta.txt").exists():
        return load_corpus(cfg.corpus_dir)
    return generate_synthetic_corpus(cfg.seed, cfg.corpus_items, cfg.model.mel_bins, cfg.mel)


def train(cfg, corpus=None, log_path=None, ckpt_dir=None, eval_items=None, quiet=True):
    """Train a FieldModel on the synthetic corpus; fully determined by ``cfg.seed``.

    Loss per step is L_cfm + w * L_hca + dur_weight * L_dur, plus
    align_weight times the guided attention penalty. Writes the metrics
    CSV to ``log_path`` and checkpoints to ``ckpt_dir`` every ``ckpt_every``
    steps (when > 0). A non-finite loss raises TrainingAborted.
    """
    start = time.perf_counter()
    corpus = corpus or _corpus(cfg)
    items = corpus.items
    eval_items = items if eval_items is None else eval_items
    init_rng, order_rng, noise_rng, dropout_rng, ref_rng = _streams(cfg.seed)
    model = FieldModel(cfg.model, seed=int(init_rng.integers(2 ** 31)))
    model.set_dropout_rng(dropout_rng)
    params = model.parameters()
    opt = AdamW(params, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)
    sampler = BatchSampler(items, cfg.batch_size, order_rng, ref_rng, cfg.ref_prob)
    hca_cfg = HcaConfig(cfg.lambdas, cfg.hca_tau)
    eval_seed = cfg.seed + 1
    eval_initial = eval_cfm(model, eval_items, eval_seed, cfg.eval_draws)
    rows, dur_losses = [], []
    last_good = None
    if ckpt_dir:
        Path(ckpt_dir).mkdir(parents=True, exist_ok=True)
    model.train()
    for step in range(cfg.steps):
        lr = lr_at(step, cfg)
        batch = sampler.next()
        model.zero_grad()
        cfm, hca, dur, align = step_losses(model, batch, cfg, noise_rng, hca_cfg)
        total = cfm + hca * cfg.hca_weight + dur * cfg.dur_weight
        if cfg.align_weight > 0:
            total = total + align * cfg.align_weight
        if not np.isfinite(total.data):
            raise TrainingAborted(f"non-finite loss at step {step}", step, last_good)
        T.backward(total)
        norm = clip_grad_norm(params, cfg.clip)
        if not np.isfinite(norm):
            raise TrainingAborted(f"non-finite gradient at step {step}", step, last_good)
        opt.step(lr)
        rows.append((step, lr, float(cfm.data), float(hca.data), norm))
        dur_losses.append(float(dur.data))
        if not quiet and step % 50 == 0:
            print(f"step {step:5d} lr {lr:.2e} cfm {float(cfm.data):.4f} hca {float(hca.data):.4f} "
                  f"dur {float(dur.data):.4f} |g| {norm:.3f}", flush=True)
        if ckpt_dir and cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            last_good = Path(ckpt_dir) / f"step_{step + 1:06d}.ckpt"
            checkpoint.save_model(model, last_good, cfg)
    model.eval()
    eval_final = eval_cfm(model, eval_items, eval_seed, cfg.eval_draws)
    if log_path:
        Path(log_path).write_text(format_csv(rows), encoding="utf-8")
    if ckpt_dir:
        checkpoint.save_model(model, Path(ckpt_dir) / "final.ckpt", cfg)
    return TrainResult(model, rows, eval_initial, eval_final, dur_losses, time.perf_counter() - start)


# -- ablation ----------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    tiers: str
    val_cfm: float
    val_mcd: float


@dataclass
class AblationReport:
    rows: list

    @property
    def ordered(self):
        a, b, c = (r.val_cfm for r in self.rows)
        return a > b > c

    @property
    def mcd_improves(self):
        return self.rows[2].val_mcd < self.rows[0].val_mcd

    def format(self):
        lines = ["variant  tiers            val_cfm     val_mcd"]
        lines += [f"{r.variant:<8} {r.tiers:<16} {r.val_cfm:.6f}  {r.val_mcd:.4f}" for r in self.rows]
        lines.append(f"ordering A > B > C: {'yes' if self.ordered else 'NO'}")
        return "\n".join(lines)


def synth_mcd(model, items, ode=None):
    """Mean MCD of synthesized mels (true frame counts) against corpus targets."""
    ode = ode or OdeConfig(steps=8, method="midpoint", seed=0)
    scores = []
    for item in items:
        out = synthesize(model, SynthesisRequest(item.text, speaker=item.speaker), ode, n_frames=item.frames)
        scores.append(mcd(out.values, item.mel.values))
    return float(np.mean(scores))


def run_ablation(cfg, corpus=None, held_out=None, mcd_items=8, quiet=True):
    corpus = corpus or _corpus(cfg)
    held_out = held_out or generate_synthetic_corpus(cfg.seed + 1000, cfg.val_items, cfg.model.mel_bins, cfg.mel)
    rows = []
    for name, tiers in VARIANTS:
        result = train(cfg.with_tiers(tiers), corpus)
        model = result.model
        val = eval_cfm(model, held_out.items, cfg.seed + 1, cfg.eval_draws)
        score = synth_mcd(model, held_out.items[:mcd_items])
        rows.append(AblationRow(name, tiers, val, score))
        if not quiet:
            print(f"{name} ({tiers}): val_cfm {val:.6f} mcd {score:.4f} [{result.seconds:.1f}s]", flush=True)
    return AblationReport(rows)
