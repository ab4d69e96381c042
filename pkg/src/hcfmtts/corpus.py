"""Deterministic synthetic corpus with tier-separable mel targets.

Texts come from a small pseudo-Manchu grammar. Each target mel is built by
rules in which every condition tier carries information no other tier has:

* phonemes: each phoneme paints a Gaussian band at a hashed mel bin for
  ``FRAMES_PER_PHONEME`` frames;
* structure: syllable-initial phonemes are x1.2 louder, suffix phonemes x0.8;
* prosody: the sentence type adds one of six global contour/tilt profiles.

A small per-speaker spectral tilt is added on top.
"""

from dataclasses import dataclass
from pathlib import Path
import zlib

import numpy as np

from .audio import MelConfig, MelSpectrogram
from .frontend import SENTENCE_TYPES, SentenceType, build_hierarchical_representation, default_tables

RULE_VERSION = 1
FRAMES_PER_PHONEME = 4
BAND_AMPLITUDE = 2.0
BAND_WIDTH = 1.0          # in mel bins
SYLLABLE_ONSET_GAIN = 1.2
SUFFIX_GAIN = 0.8
SPEAKER_TILT = 0.3
N_SPEAKERS = 4

GRAMMAR_SUFFIXES = ("ra", "re", "ha", "he", "mbi", "i", "be", "de")
SUFFIX_PROB = 0.6

# (temporal contour of u in [0, 1], spectral tilt) per sentence type
CONTOURS = {
    SentenceType.DECLARATIVE: (lambda u: 0.8 * (0.5 - u), 0.4),
    SentenceType.INTERROGATIVE: (lambda u: 1.2 * u * u - 0.3, -0.4),
    SentenceType.IMPERATIVE: (lambda u: 0.6 - 1.2 * u, 0.8),
    SentenceType.EXCLAMATIVE: (lambda u: 0.8 * np.sin(np.pi * u), -0.8),
    SentenceType.CONTINUATIVE: (lambda u: 0.4 + 0.0 * u, 0.0),
    SentenceType.EMPHATIC: (lambda u: -0.5 * np.cos(2 * np.pi * u), 0.6),
}


@dataclass
class CorpusItem:
    text: str
    ht: object
    mel: MelSpectrogram
    frames: int
    speaker: int


@dataclass
class SyntheticCorpus:
    items: list
    seed: int
    rule_version: int = RULE_VERSION

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


def band_bin(symbol, bins):
    return zlib.crc32(symbol.encode("utf-8")) % bins


def contour(sentence_type, frames, bins):
    temporal, tilt = CONTOURS[SentenceType(sentence_type)]
    u = np.arange(frames) / max(frames - 1, 1)
    z = np.arange(bins) / max(bins - 1, 1) - 0.5
    return temporal(u)[:, None] + tilt * z[None, :]


def speaker_profile(speaker, bins):
    z = np.arange(bins) / max(bins - 1, 1) - 0.5
    return SPEAKER_TILT * (speaker / (N_SPEAKERS - 1) - 0.5) * np.cos(np.pi * z)


def render_mel(ht, speaker, bins, components=False):
    """Rule-based target for one utterance, [4 * phonemes, bins] float32.

    With ``components=True`` returns the (bands, contour, speaker) parts.
    """
    n = len(ht.phon)
    frames = FRAMES_PER_PHONEME * n
    gain = np.ones(n)
    for s, _ in ht.syll.syllables:
        gain[s] *= SYLLABLE_ONSET_GAIN
    for (s, e), kind in ht.syll.morphemes:
        if kind == "suffix":
            gain[s:e] *= SUFFIX_GAIN
    grid = np.arange(bins)
    bands = np.zeros((frames, bins))
    for k, sym in enumerate(ht.phon.symbols):
        row = BAND_AMPLITUDE * gain[k] * np.exp(-((grid - band_bin(sym, bins)) ** 2) / (2 * BAND_WIDTH ** 2))
        bands[k * FRAMES_PER_PHONEME:(k + 1) * FRAMES_PER_PHONEME] = row
    prosody = contour(ht.pros.sentence_type, frames, bins)
    spk = np.broadcast_to(speaker_profile(speaker, bins), (frames, bins))
    if components:
        return bands, prosody, spk
    return (bands + prosody + spk).astype(np.float32)


def _sample_word(rng, roots, with_suffix=None):
    root = roots[rng.integers(len(roots))]
    if with_suffix is None:
        with_suffix = rng.random() < SUFFIX_PROB
    if with_suffix:
        return root + GRAMMAR_SUFFIXES[rng.integers(len(GRAMMAR_SUFFIXES))]
    return root


def sample_sentence(rng, roots):
    """One sentence and the sentence type it was generated for."""
    kind = SENTENCE_TYPES[rng.integers(len(SENTENCE_TYPES))]
    n_words = int(rng.integers(1, 4))
    words = [_sample_word(rng, roots) for _ in range(n_words - 1)]
    if kind is SentenceType.IMPERATIVE:
        words.append(_sample_word(rng, roots, with_suffix=False))
        return " ".join(words) + "!", kind
    if kind is SentenceType.EXCLAMATIVE:
        words.append(_sample_word(rng, roots, with_suffix=True))
        return " ".join(words) + "!", kind
    if kind is SentenceType.CONTINUATIVE:
        words.append(_sample_word(rng, roots, with_suffix=False) + "me")
        return " ".join(words) + ".", kind
    words.append(_sample_word(rng, roots))
    if kind is SentenceType.EMPHATIC:
        return " ".join(words) + " kai.", kind
    if kind is SentenceType.INTERROGATIVE:
        return " ".join(words) + "?", kind
    return " ".join(words) + ".", kind


def generate_synthetic_corpus(seed, n_items, mel_bins=16, mel_cfg=None):
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    mel_cfg = mel_cfg or MelConfig(n_mels=mel_bins)
    rng = np.random.default_rng(seed)
    roots = sorted(default_tables().roots)
    items = []
    while len(items) < n_items:
        text, kind = sample_sentence(rng, roots)
        speaker = int(rng.integers(N_SPEAKERS))
        ht = build_hierarchical_representation(text)
        if ht.pros.sentence_type is not kind:
            continue
        mel = render_mel(ht, speaker, mel_bins)
        items.append(CorpusItem(text, ht, MelSpectrogram(mel, mel_cfg), mel.shape[0], speaker))
    return SyntheticCorpus(items, seed)


def save_corpus(corpus, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    bins = corpus.items[0].mel.bins
    (d / "meta.txt").write_text(
        f"seed = {corpus.seed}\nrule_version = {corpus.rule_version}\n"
        f"items = {len(corpus)}\nmel_bins = {bins}\n", encoding="utf-8")
    lines = []
    for i, item in enumerate(corpus.items):
        name = f"item_{i:05d}.f32"
        np.asarray(item.mel.values, dtype="<f4").tofile(d / name)
        lines.append(f"{name}\t{item.speaker}\t{item.frames}\t{item.text}")
    (d / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(directory):
    d = Path(directory)
    meta = {}
    for line in (d / "meta.txt").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            meta[k] = v
    bins = int(meta["mel_bins"])
    cfg = MelConfig(n_mels=bins)
    items = []
    for line in (d / "manifest.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, speaker, frames, text = line.split("\t", 3)
        values = np.fromfile(d / name, dtype="<f4").reshape(int(frames), bins)
        ht = build_hierarchical_representation(text)
        items.append(CorpusItem(text, ht, MelSpectrogram(values, cfg), int(frames), int(speaker)))
    return SyntheticCorpus(items, int(meta["seed"]), int(meta["rule_version"]))
