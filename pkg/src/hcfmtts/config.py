"""Model/training configuration and the flat ``key = value`` file format.

Top-level keys set :class:`TrainConfig` fields; ``model.<field>`` and
``mel.<field>`` set the nested configs. Lines starting with ``#`` are
comments. Unknown keys are an error.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .audio import MelConfig
from .errors import ConfigError

ALL_TIERS = ("phon", "syll", "pros")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    enc_layers: int = 2
    enc_channels: int = 64
    enc_kernel: int = 5
    dit_layers: int = 2
    dit_heads: int = 2
    dit_hidden: int = 64
    ff_mult: int = 4
    dur_layers: int = 1
    dur_hidden: int = 32
    speaker_dim: int = 8
    n_speakers: int = 4
    mel_bins: int = 16
    hca_dim: int = 32
    attn_dropout: float = 0.1
    ff_dropout: float = 0.15
    tiers: str = "phon,syll,pros"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type is int and v <= 0:
                raise ConfigError(f"model.{f.name} must be positive, got {v}")
        if self.dit_hidden % self.dit_heads:
            raise ConfigError("model.dit_hidden must be divisible by model.dit_heads")
        for p in (self.attn_dropout, self.ff_dropout):
            if not 0.0 <= p < 1.0:
                raise ConfigError("dropout rates must be in [0, 1)")
        tiers = self.active_tiers
        if "phon" not in tiers or any(t not in ALL_TIERS for t in tiers):
            raise ConfigError(f"model.tiers must include phon and only {ALL_TIERS}, got {self.tiers!r}")

    @property
    def active_tiers(self):
        return tuple(t.strip() for t in self.tiers.split(",") if t.strip())


FULL_MODEL = ModelConfig(
    vocab_size=1024, enc_layers=2, enc_channels=256, dit_layers=8, dit_heads=4,
    dit_hidden=512, dur_layers=3, dur_hidden=128, speaker_dim=64, mel_bins=80, hca_dim=256,
)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    peak_lr: float = 5e-3
    warmup_steps: int = 50
    final_lr: float = 1e-5
    clip: float = 1.2
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    hca_weight: float = 0.01
    hca_tau: float = 0.1
    lambda_phon: float = 1.0
    lambda_syll: float = 1.0
    lambda_pros: float = 1.0
    dur_weight: float = 1.0
    align_weight: float = 1.0
    align_width: float = 0.2
    ref_prob: float = 0.2
    seed: int = 42
    corpus_items: int = 64
    val_items: int = 32
    ckpt_every: int = 0
    eval_draws: int = 4
    corpus_dir: str = ""
    out_dir: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    mel: MelConfig = field(default_factory=lambda: MelConfig(n_mels=16))

    def __post_init__(self):
        if self.steps < 1 or self.warmup_steps >= self.steps:
            raise ConfigError("need steps >= 1 and warmup_steps < steps")
        if self.clip <= 0:
            raise ConfigError("clip must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.corpus_items < 1:
            raise ConfigError("corpus_items must be >= 1")
        if self.mel.n_mels != self.model.mel_bins:
            raise ConfigError("mel.n_mels must equal model.mel_bins")

    @property
    def lambdas(self):
        active = self.model.active_tiers
        raw = {"phon": self.lambda_phon, "syll": self.lambda_syll, "pros": self.lambda_pros}
        return {k: (v if k in active else 0.0) for k, v in raw.items()}

    def with_tiers(self, tiers):
        return replace(self, model=replace(self.model, tiers=tiers))


def _coerce(kind, key, text):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_pairs(text):
    pairs = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def from_pairs(pairs):
    top, model, mel = {}, {}, {}
    kinds = {
        "": {f.name: f.type for f in fields(TrainConfig) if f.name not in ("model", "mel")},
        "model.": {f.name: f.type for f in fields(ModelConfig)},
        "mel.": {f.name: f.type for f in fields(MelConfig)},
    }
    for key, value in pairs.items():
        for prefix, target in (("model.", model), ("mel.", mel), ("", top)):
            if key.startswith(prefix):
                name = key[len(prefix):]
                if name not in kinds[prefix]:
                    raise ConfigError(f"unknown config key {key!r}")
                target[name] = _coerce(kinds[prefix][name], key, value)
                break
    mcfg = ModelConfig(**model)
    mel.setdefault("n_mels", mcfg.mel_bins)
    try:
        melcfg = MelConfig(**mel)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return TrainConfig(model=mcfg, mel=melcfg, **top)


def load_config(path):
    return from_pairs(parse_pairs(Path(path).read_text(encoding="utf-8")))


def to_pairs(cfg):
    out = {}
    for f in fields(cfg):
        if f.name in ("model", "mel"):
            continue
        out[f.name] = getattr(cfg, f.name)
    for f in fields(cfg.model):
        out[f"model.{f.name}"] = getattr(cfg.model, f.name)
    for f in fields(cfg.mel):
        out[f"mel.{f.name}"] = getattr(cfg.mel, f.name)
    return out


def dump_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in to_pairs(cfg).items())
