"""Condition encoder, duration predictor and DiT vector-field network.

Data flow for one forward pass of the field:

    text tiers -> encoder -> cond [B, T, d]
    x_t [B, F, mel] -> input projection (+ time embedding, positions)
    (cond, frames) -> cross-modal alignment block -> DiT stack -> v [B, F, mel]

The aligned audio stream is the DiT input; the aligned text stream is pooled
and added to the time embedding that drives every adaLN modulation.

Text positions are placed on the frame axis: token k of a T-token segment
spanning F frames sits at frame (k + 0.5) F / T. This gives the attention a
uniform-alignment prior without any hard duration assignment.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, CrossModalAlign, MultiHeadAttention
from .audio import MelConfig, MelSpectrogram
from .config import ModelConfig
from .errors import CheckpointError, ContractError, NumericError
from .flow import OdeConfig, sample_ode
from .frontend import (BOUNDARIES, MAX_SYLLABLE_POSITION, SENTENCE_TYPES, SEP,
                       build_hierarchical_representation)
from .hca import in_batch_scores
from .nn import Conv1d, Embedding, LayerNorm, Linear, Module, param, trunc_normal
from .tensor import Tensor

PROSODY_DIM = len(SENTENCE_TYPES) + 1 + len(BOUNDARIES)
TIME_SCALE = 1000.0


@dataclass
class Utterance:
    ht: object            # HierarchicalText
    speaker: int = 0
    mel: np.ndarray = None  # [frames, bins] target / reference frames
    n_frames: int = 0

    def __post_init__(self):
        if self.mel is not None and not self.n_frames:
            self.n_frames = int(self.mel.shape[0])


@dataclass
class SynthesisRequest:
    text: str
    ref_mel: MelSpectrogram = None
    ref_text: str = None
    speaker: int = 0

    def __post_init__(self):
        if (self.ref_mel is None) != (self.ref_text is None):
            raise ContractError("reference mel and reference text must be given together")


@dataclass
class Batch:
    ids: np.ndarray        # [B, T] phoneme ids (0 = pad)
    syll_pos: np.ndarray   # [B, T]
    morph: np.ndarray      # [B, T]
    pros: np.ndarray       # [B, T, PROSODY_DIM]
    t_valid: np.ndarray    # [B, T] bool
    t_target: np.ndarray   # [B, T] bool, target-text tokens only
    t_pos: np.ndarray      # [B, T] positions in frame units
    speaker: np.ndarray    # [B]
    mel: np.ndarray        # [B, F, bins]; reference frames first, zeros for padding
    f_valid: np.ndarray    # [B, F] bool
    f_context: np.ndarray  # [B, F] bool, reference (clean) frames
    target_frames: np.ndarray = field(default=None)  # [B]
    ref_frames: np.ndarray = field(default=None)     # [B]

    @property
    def f_target(self):
        return self.f_valid & ~self.f_context

    @property
    def size(self):
        return self.ids.shape[0]


def _token_rows(ht):
    pos, kind = ht.syllable_features()
    return np.asarray(ht.phon.ids), pos, kind, ht.prosody_features()


def collate(utts, refs=None, dtype=np.float32):
    """Pad a list of utterances (optionally each with a reference prefix)."""
    refs = refs or [None] * len(utts)
    rows = []
    for utt, ref in zip(utts, refs):
        ids, pos, kind, pros = _token_rows(utt.ht)
        n_tgt = len(ids)
        f_tgt = int(utt.n_frames)
        tpos = (np.arange(n_tgt) + 0.5) * f_tgt / max(n_tgt, 1)
        mel = utt.mel if utt.mel is not None else np.zeros((f_tgt, 0))
        target = np.ones(n_tgt, bool)
        f_ref = 0
        ref_mel = None
        if ref is not None:
            rids, rpos, rkind, rpros = _token_rows(ref.ht)
            f_ref = int(ref.mel.shape[0])
            rtpos = (np.arange(len(rids)) + 0.5) * f_ref / max(len(rids), 1)
            ids = np.concatenate([rids, [SEP], ids])
            pos = np.concatenate([rpos, [0], pos])
            kind = np.concatenate([rkind, [0], kind])
            pros = np.concatenate([rpros, np.zeros((1, PROSODY_DIM)), pros])
            tpos = np.concatenate([rtpos, [f_ref], tpos + f_ref])
            target = np.concatenate([np.zeros(len(rids) + 1, bool), target])
            ref_mel = ref.mel
        rows.append((ids, pos, kind, pros, tpos, target, utt, mel, ref_mel, f_ref, f_tgt))
    b = len(rows)
    t_max = max(len(r[0]) for r in rows)
    f_max = max(r[9] + r[10] for r in rows)
    bins = max(r[7].shape[1] for r in rows)
    if any(r[8] is not None for r in rows):
        bins = max(bins, max(r[8].shape[1] for r in rows if r[8] is not None))
    batch = Batch(
        ids=np.zeros((b, t_max), np.int64), syll_pos=np.zeros((b, t_max), np.int64),
        morph=np.zeros((b, t_max), np.int64), pros=np.zeros((b, t_max, PROSODY_DIM), dtype),
        t_valid=np.zeros((b, t_max), bool), t_target=np.zeros((b, t_max), bool),
        t_pos=np.zeros((b, t_max)), speaker=np.zeros(b, np.int64),
        mel=np.zeros((b, f_max, bins), dtype), f_valid=np.zeros((b, f_max), bool),
        f_context=np.zeros((b, f_max), bool),
        target_frames=np.zeros(b, np.int64), ref_frames=np.zeros(b, np.int64),
    )
    for i, (ids, pos, kind, pros, tpos, target, utt, mel, ref_mel, f_ref, f_tgt) in enumerate(rows):
        n = len(ids)
        batch.ids[i, :n] = ids
        batch.syll_pos[i, :n] = pos
        batch.morph[i, :n] = kind
        batch.pros[i, :n] = pros
        batch.t_valid[i, :n] = True
        batch.t_target[i, :n] = target
        batch.t_pos[i, :n] = tpos
        batch.speaker[i] = utt.speaker
        if ref_mel is not None:
            batch.mel[i, :f_ref] = ref_mel
            batch.f_context[i, :f_ref] = True
        if mel.shape[1]:
            batch.mel[i, f_ref:f_ref + f_tgt] = mel
        batch.f_valid[i, :f_ref + f_tgt] = True
        batch.target_frames[i] = f_tgt
        batch.ref_frames[i] = f_ref
    return batch


def masked_mean(x, mask):
    """Mean of x [B, L, d] over valid positions of mask [B, L]."""
    m = np.asarray(mask, dtype=x.dtype)
    count = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return (x * Tensor(m[..., None])).sum(axis=1) * Tensor(1.0 / count)


class TextEncoder(Module):
    """Phoneme conv stack plus syllable-structure, prosody and speaker embeddings."""

    def __init__(self, rng, cfg):
        d = cfg.dit_hidden
        c = cfg.enc_channels
        self.tiers = cfg.active_tiers
        self.phoneme = Embedding(rng, cfg.vocab_size, c)
        self.convs = [Conv1d(rng, c, c, cfg.enc_kernel) for _ in range(cfg.enc_layers)]
        self.proj = Linear(rng, c, d)
        self.syll_pos = Embedding(rng, MAX_SYLLABLE_POSITION + 1, d)
        self.morph = Embedding(rng, 2, d)
        self.prosody = Linear(rng, PROSODY_DIM, d)
        self.speaker = Embedding(rng, cfg.n_speakers, cfg.speaker_dim)
        self.speaker_proj = Linear(rng, cfg.speaker_dim, d)
        # each tier is normalised so its scale does not depend on init depth
        self.phon_norm = LayerNorm(d)
        self.syll_norm = LayerNorm(d)
        self.pros_norm = LayerNorm(d)

    def __call__(self, batch):
        """Returns (cond [B, T, d], per-tier encodings)."""
        mask = Tensor(batch.t_valid[..., None].astype(self.proj.weight.dtype))
        x = self.phoneme(batch.ids)
        for i, conv in enumerate(self.convs):
            if i:
                x = T.gelu(x)
            x = conv(x) * mask
        phon = self.phon_norm(self.proj(x)) * mask
        tiers = {"phon": phon}
        cond = phon
        if "syll" in self.tiers:
            syll = self.syll_norm(self.syll_pos(batch.syll_pos) + self.morph(batch.morph)) * mask
            tiers["syll"] = syll
            cond = cond + syll
        if "pros" in self.tiers:
            pros = self.pros_norm(self.prosody(Tensor(batch.pros.astype(mask.dtype)))) * mask
            tiers["pros"] = pros
            cond = cond + pros
        spk = self.speaker_proj(self.speaker(batch.speaker))
        cond = cond + spk.reshape(spk.shape[0], 1, spk.shape[1]) * mask
        return cond, tiers


class LSTMLayer(Module):
    def __init__(self, rng, d_in, hidden):
        self.hidden = hidden
        self.input = Linear(rng, d_in, 4 * hidden)
        self.recurrent = Linear(rng, hidden, 4 * hidden, bias=False)

    def __call__(self, x, valid):
        b, steps, _ = x.shape
        hsz = self.hidden
        gates_x = self.input(x)
        h = Tensor(np.zeros((b, hsz), x.dtype))
        c = Tensor(np.zeros((b, hsz), x.dtype))
        outs = []
        for s in range(steps):
            g = gates_x[:, s] + self.recurrent(h)
            i = T.sigmoid(g[:, :hsz])
            f = T.sigmoid(g[:, hsz:2 * hsz])
            o = T.sigmoid(g[:, 2 * hsz:3 * hsz])
            cand = T.tanh(g[:, 3 * hsz:])
            c_new = f * c + i * cand
            h_new = o * T.tanh(c_new)
            keep = valid[:, s:s + 1].astype(x.dtype)
            # padded steps carry the previous state forward
            c = c_new * keep + c * (1.0 - keep)
            h = h_new * keep + h * (1.0 - keep)
            outs.append(h.reshape(b, 1, hsz))
        return T.concat(outs, axis=1), h


class DurationPredictor(Module):
    """LSTM stack over the condition sequence; final state -> log total frames."""

    def __init__(self, rng, cfg):
        dims = [cfg.dit_hidden] + [cfg.dur_hidden] * cfg.dur_layers
        self.layers = [LSTMLayer(rng, a, b) for a, b in zip(dims, dims[1:])]
        self.head = Linear(rng, cfg.dur_hidden, 1)

    def __call__(self, cond, valid):
        x = cond
        h = None
        for layer in self.layers:
            x, h = layer(x, valid)
        return self.head(h).reshape(-1)


def decode_duration(log_frames, n_tokens):
    """round(exp(log_frames)) clamped to [T, 200 T]."""
    frames = int(np.round(np.exp(np.clip(float(log_frames), -50.0, 50.0))))
    return int(np.clip(frames, n_tokens, 200 * n_tokens))


class DiTBlock(Module):
    """Self-attention + feed-forward with adaptive LayerNorm shift/scale/gate."""

    def __init__(self, rng, cfg):
        d = cfg.dit_hidden
        self.d = d
        self.modulation = Linear(rng, d, 6 * d)
        self.attn = MultiHeadAttention(rng, d, cfg.dit_heads, cfg.attn_dropout)
        self.ff_in = Linear(rng, d, cfg.ff_mult * d)
        self.ff_out = Linear(rng, cfg.ff_mult * d, d)
        self.ff_dropout = cfg.ff_dropout
        self.dropout_rng = None

    def __call__(self, h, temb_act, valid):
        b, d = h.shape[0], self.d
        mod = self.modulation(temb_act).reshape(b, 1, 6 * d)
        shift1, scale1, gate1, shift2, scale2, gate2 = (mod[:, :, k * d:(k + 1) * d] for k in range(6))
        x = T.layer_norm(h) * (scale1 + 1.0) + shift1
        h = h + gate1 * self.attn(x, x, x, valid[:, None, :])
        x = T.layer_norm(h) * (scale2 + 1.0) + shift2
        y = T.gelu(self.ff_in(x))
        y = T.dropout(y, self.ff_dropout, self.dropout_rng, self.training)
        return h + gate2 * self.ff_out(y)


class FieldModel(Module):
    """The full synthesis network; parameters are created from ``seed``."""

    def __init__(self, cfg=None, seed=0):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.dit_hidden
        self.encoder = TextEncoder(rng, cfg)
        self.duration = DurationPredictor(rng, cfg)
        self.mel_in = Linear(rng, cfg.mel_bins, d)
        self.context_flag = param(trunc_normal(rng, (d,)))
        self.time_in = Linear(rng, d, d)
        self.time_out = Linear(rng, d, d)
        self.text_summary = Linear(rng, d, d)
        self.align = CrossModalAlign(rng, AttentionConfig(d, cfg.dit_heads, cfg.attn_dropout))
        self.blocks = [DiTBlock(rng, cfg) for _ in range(cfg.dit_layers)]
        self.final_modulation = Linear(rng, d, 2 * d)
        self.out = Linear(rng, d, cfg.mel_bins, zero=True)
        self.speech_proj = Linear(rng, d, cfg.hca_dim)
        self.tier_proj_phon = Linear(rng, d, cfg.hca_dim)
        self.tier_proj_syll = Linear(rng, d, cfg.hca_dim)
        self.tier_proj_pros = Linear(rng, d, cfg.hca_dim)

    @property
    def dtype(self):
        return self.out.weight.dtype

    def set_dropout_rng(self, rng):
        for m in self.modules():
            if hasattr(m, "dropout_rng"):
                m.dropout_rng = rng

    # -- ops ---------------------------------------------------------------
    def encode_conditions(self, batch):
        return self.encoder(batch)

    def predict_log_duration(self, cond, batch):
        return self.duration(Tensor(cond.data), batch.t_target)

    def time_embedding(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(t < 0) or np.any(t > 1):
            raise ContractError("t must lie in [0, 1]")
        enc = Tensor(T.sinusoidal_encoding(t * TIME_SCALE, self.cfg.dit_hidden).astype(self.dtype))
        return self.time_out(T.silu(self.time_in(enc)))

    def forward_field(self, x_t, t, cond, batch):
        """v(x_t, t | cond) for a batch; returns (v [B, F, mel], final hidden [B, F, d])."""
        x_t = T._as_tensor(x_t)
        if not np.all(np.isfinite(x_t.data)):
            raise NumericError("forward_field: non-finite input frames")
        if x_t.dtype != self.dtype:
            x_t = Tensor(x_t.data.astype(self.dtype))
        b, frames, _ = x_t.shape
        d = self.cfg.dit_hidden
        temb = self.time_embedding(t)
        if temb.shape[0] != b:
            temb = temb * Tensor(np.ones((b, 1), self.dtype))
        valid = batch.f_valid[:, :frames]
        fpos = T.sinusoidal_encoding(np.arange(frames), d).astype(self.dtype)
        audio = self.mel_in(x_t) + Tensor(fpos) + temb.reshape(b, 1, d)
        ctx = batch.f_context[:, :frames, None].astype(self.dtype)
        audio = audio + self.context_flag * Tensor(ctx)
        text = cond + Tensor(T.sinusoidal_encoding(batch.t_pos, d).astype(self.dtype))
        aligned = self.align(text, audio, batch.t_valid, valid)
        # adaLN conditioning: time plus a pooled summary of the aligned target text
        temb_act = T.silu(temb + self.text_summary(masked_mean(aligned.text, batch.t_target)))
        h = aligned.audio
        for block in self.blocks:
            h = block(h, temb_act, valid)
        mod = self.final_modulation(temb_act).reshape(b, 1, 2 * d)
        hidden = T.layer_norm(h) * (mod[:, :, d:] + 1.0) + mod[:, :, :d]
        return self.out(hidden), hidden

    def hca_scores(self, hidden, tiers, batch, tau):
        speech = self.speech_proj(masked_mean(hidden, batch.f_target))
        out = {}
        for name, enc in tiers.items():
            proj = getattr(self, f"tier_proj_{name}")
            out[name] = in_batch_scores(speech, proj(masked_mean(enc, batch.t_target)), tau)
        return out

    def parameter_breakdown(self):
        groups = {}
        for name, p in self.named_parameters():
            top = name.split(".")[0]
            groups[top] = groups.get(top, 0) + p.data.size
        return groups


def predict_duration(model, ht, speaker=0):
    """Frame count for a text: decoded LSTM prediction, clamped to [T, 200 T]."""
    batch = collate([Utterance(ht, speaker, n_frames=len(ht))])
    cond, _ = model.encode_conditions(batch)
    return decode_duration(model.predict_log_duration(cond, batch).data[0], len(ht))


def encode_conditions(model, ht, speaker=0):
    """Single-utterance condition sequence [T, d]."""
    batch = collate([Utterance(ht, speaker, n_frames=len(ht))])
    cond, _ = model.encode_conditions(batch)
    return cond.reshape(cond.shape[1:])


def mel_config_for(model, base=None):
    base = base or MelConfig()
    return MelConfig(base.sample_rate, base.frame_length_ms, base.frame_shift_ms, base.n_fft,
                     model.cfg.mel_bins, base.fmin, base.fmax, base.log_floor)


def synthesize(model, req, ode=None, n_frames=None, mel_cfg=None):
    """Text (and optional reference) -> generated mel spectrogram.

    Reference frames are prepended to the acoustic stream as clean context
    for every ODE step and stripped from the output. ``n_frames`` overrides
    the duration predictor.
    """
    ode = ode or OdeConfig()
    was_training = model.training
    model.eval()
    try:
        ht = build_hierarchical_representation(req.text)
        if n_frames is None:
            n_frames = predict_duration(model, ht, req.speaker)
        utt = Utterance(ht, req.speaker, n_frames=int(n_frames))
        ref = None
        if req.ref_mel is not None:
            ref_ht = build_hierarchical_representation(req.ref_text)
            if req.ref_mel.bins != model.cfg.mel_bins:
                raise ContractError(f"reference mel has {req.ref_mel.bins} bins, model expects {model.cfg.mel_bins}")
            ref = Utterance(ref_ht, req.speaker, mel=np.asarray(req.ref_mel.values, dtype=model.dtype))
        batch = collate([utt], [ref] if ref else None, dtype=model.dtype)
        cond, _ = model.encode_conditions(batch)
        f_ref = int(batch.ref_frames[0])
        prefix = batch.mel[:, :f_ref] if f_ref else np.zeros((1, 0, model.cfg.mel_bins), model.dtype)

        def field(x, t, _c):
            x_in = np.concatenate([prefix, x[None].astype(model.dtype)], axis=1)
            v, _ = model.forward_field(Tensor(x_in), t, cond, batch)
            return v.data[0, f_ref:]

        x1 = sample_ode(field, None, (int(n_frames), model.cfg.mel_bins), ode)
    finally:
        model.train(was_training)
    return MelSpectrogram(x1.astype(np.float32), mel_cfg or mel_config_for(model))


def check_config(model, snapshot):
    """Raise CheckpointError if a checkpoint's model config differs from the model's."""
    from dataclasses import fields as dc_fields
    for f in dc_fields(model.cfg):
        key = f"model.{f.name}"
        if key in snapshot and str(snapshot[key]) != str(getattr(model.cfg, f.name)):
            raise CheckpointError(f"checkpoint {key}={snapshot[key]} but model has {getattr(model.cfg, f.name)}")


def full_scale_parameter_count():
    from .config import FULL_MODEL
    model = FieldModel(FULL_MODEL, seed=0)
    return model.num_parameters(), model.parameter_breakdown()

