"""Romanized Manchu text -> three-tier condition bundle.

Tier 1 (phonemes): longest-match G2P over the shipped table.
Tier 2 (structure): single-suffix root+suffix segmentation and
onset-maximizing syllabification.
Tier 3 (prosody): sentence type, per-word prominence, boundary strengths.

All linguistic content lives in the text files under ``data/``.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
import json
import unicodedata
import warnings

import numpy as np

from .errors import ContractError, PhonemizationError

PAD, SEP = 0, 1
SPECIAL_SYMBOLS = ("<pad>", "<sep>")
VOWEL_CLASSES = ("back", "front", "neutral", "consonant")
PUNCTUATION = ".?!,"
BOUNDARIES = ("none", "minor", "major")

FUNCTION_PROMINENCE = 0.2
CONTENT_PROMINENCE = 0.6
NUCLEAR_PROMINENCE = 0.9
MAX_SYLLABLE_POSITION = 3


class SentenceType(str, Enum):
    DECLARATIVE = "declarative"
    INTERROGATIVE = "interrogative"
    IMPERATIVE = "imperative"
    EXCLAMATIVE = "exclamative"
    CONTINUATIVE = "continuative"
    EMPHATIC = "emphatic"


SENTENCE_TYPES = list(SentenceType)


class VowelHarmonyWarning(UserWarning):
    pass


def _read_lines(path):
    out = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            out.append(line)
    return out


@dataclass(frozen=True)
class Tables:
    g2p: dict          # romanized -> (ipa, vowel class)
    inventory: tuple   # id -> symbol
    suffixes: tuple    # longest first
    particles: frozenset
    roots: frozenset

    @property
    def max_key(self):
        return max(len(k) for k in self.g2p)

    def symbol_id(self, ipa):
        return self.inventory.index(ipa)

    @classmethod
    def load(cls, directory=None):
        base = resources.files("hcfmtts") / "data" if directory is None else directory
        from pathlib import Path
        base = Path(str(base))
        g2p = {}
        inventory = list(SPECIAL_SYMBOLS)
        for line in _read_lines(base / "g2p.tsv"):
            parts = line.split("\t")
            rom, ipa = parts[0], parts[1]
            cls_ = parts[2] if len(parts) > 2 else "consonant"
            if cls_ not in VOWEL_CLASSES:
                raise ValueError(f"bad vowel class {cls_!r} for {rom!r}")
            g2p[unicodedata.normalize("NFC", rom)] = (ipa, cls_)
            if ipa not in inventory:
                inventory.append(ipa)
        if len(inventory) > 1024:
            raise ValueError("phoneme inventory exceeds 1024 entries")
        suffixes = sorted((s.strip() for s in _read_lines(base / "suffixes.txt")), key=lambda s: (-len(s), s))
        particles = frozenset(s.strip() for s in _read_lines(base / "particles.txt"))
        roots = frozenset(unicodedata.normalize("NFC", s.strip()) for s in _read_lines(base / "roots.txt"))
        return cls(g2p, tuple(inventory), tuple(suffixes), particles, roots)


@lru_cache(maxsize=None)
def default_tables():
    return Tables.load()


@dataclass
class PhonemeSeq:
    ids: list
    symbols: list
    graphemes: list
    vowel_classes: list

    def __len__(self):
        return len(self.ids)

    def slice(self, start, end):
        return PhonemeSeq(self.ids[start:end], self.symbols[start:end],
                          self.graphemes[start:end], self.vowel_classes[start:end])

    @classmethod
    def concat(cls, seqs):
        out = cls([], [], [], [])
        for s in seqs:
            out.ids += s.ids
            out.symbols += s.symbols
            out.graphemes += s.graphemes
            out.vowel_classes += s.vowel_classes
        return out


@dataclass
class SyllableStructure:
    syllables: list        # (start, end) phoneme spans, end exclusive
    morphemes: list        # ((start, end), "root" | "suffix")
    word_boundaries: list  # phoneme index where each word starts
    n_phonemes: int = 0

    def shifted(self, offset):
        return SyllableStructure(
            [(s + offset, e + offset) for s, e in self.syllables],
            [((s + offset, e + offset), k) for (s, e), k in self.morphemes],
            [b + offset for b in self.word_boundaries],
            self.n_phonemes,
        )

    def root(self, phonemes):
        (s, e), _ = self.morphemes[0]
        return "".join(phonemes.graphemes[s:e])

    def suffix(self, phonemes):
        for (s, e), kind in self.morphemes:
            if kind == "suffix":
                return "".join(phonemes.graphemes[s:e])
        return None


@dataclass
class ProsodyAnnotation:
    sentence_type: SentenceType
    words: list
    prominence: list       # per word, in [0, 1]
    boundaries: list       # per word: boundary strength after it
    function_words: list   # per word


@dataclass
class HierarchicalText:
    phon: PhonemeSeq
    syll: SyllableStructure
    pros: ProsodyAnnotation
    text: str
    word_suffix_particle: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.phon)

    def word_spans(self):
        starts = self.syll.word_boundaries
        ends = starts[1:] + [len(self.phon)]
        return list(zip(starts, ends))

    def syllable_features(self):
        """Per phoneme: clipped position in syllable, and 0 root / 1 suffix."""
        n = len(self.phon)
        pos = np.zeros(n, dtype=np.int64)
        for s, e in self.syll.syllables:
            pos[s:e] = np.minimum(np.arange(e - s), MAX_SYLLABLE_POSITION)
        kind = np.zeros(n, dtype=np.int64)
        for (s, e), k in self.syll.morphemes:
            if k == "suffix":
                kind[s:e] = 1
        return pos, kind

    def phoneme_prominence(self):
        prom = np.zeros(len(self.phon))
        for w, (s, e) in enumerate(self.word_spans()):
            prom[s:e] = self.pros.prominence[w]
        for w, suffix_span in enumerate(self.word_suffix_particle):
            if suffix_span is not None:
                s, e = suffix_span
                prom[s:e] = FUNCTION_PROMINENCE
        return prom

    def prosody_features(self):
        """Per phoneme: one-hot sentence type (6), prominence (1), boundary one-hot (3).

        The boundary after a word is marked on its final phoneme only.
        """
        n = len(self.phon)
        feats = np.zeros((n, len(SENTENCE_TYPES) + 1 + len(BOUNDARIES)))
        feats[:, SENTENCE_TYPES.index(self.pros.sentence_type)] = 1.0
        feats[:, len(SENTENCE_TYPES)] = self.phoneme_prominence()
        base = len(SENTENCE_TYPES) + 1
        feats[:, base] = 1.0
        for w, (s, e) in enumerate(self.word_spans()):
            strength = BOUNDARIES.index(self.pros.boundaries[w])
            feats[e - 1, base:] = 0.0
            feats[e - 1, base + strength] = 1.0
        return feats


def _normalize(text):
    return unicodedata.normalize("NFC", text).lower()


def romanize_to_phonemes(text, tables=None):
    """Longest-match transduction of romanized text into phoneme ids.

    Spaces, hyphens and sentence punctuation are skipped. Any other
    character outside the table raises PhonemizationError carrying the
    UTF-8 byte offset of the offending character (in NFC form).
    """
    tables = tables or default_tables()
    text = _normalize(text)
    seq = PhonemeSeq([], [], [], [])
    i = 0
    longest = tables.max_key
    while i < len(text):
        ch = text[i]
        if ch.isspace() or ch in PUNCTUATION or ch == "-":
            i += 1
            continue
        for size in range(min(longest, len(text) - i), 0, -1):
            key = text[i:i + size]
            if key in tables.g2p:
                ipa, cls_ = tables.g2p[key]
                seq.ids.append(tables.symbol_id(ipa))
                seq.symbols.append(ipa)
                seq.graphemes.append(key)
                seq.vowel_classes.append(cls_)
                i += size
                break
        else:
            offset = len(text[:i].encode("utf-8"))
            raise PhonemizationError(f"unknown character {ch!r} at byte offset {offset}", offset)
    return seq


def syllabify(vowel_classes):
    """Onset-maximizing syllable spans; every vowel is a nucleus and onsets
    are at most one consonant."""
    n = len(vowel_classes)
    nuclei = [i for i, c in enumerate(vowel_classes) if c != "consonant"]
    if not nuclei:
        return [(0, n)] if n else []
    starts = [0]
    for prev, nxt in zip(nuclei, nuclei[1:]):
        starts.append(nxt - 1 if nxt - prev > 1 else nxt)
    ends = starts[1:] + [n]
    return list(zip(starts, ends))


def _has_vowel(phon):
    return any(c != "consonant" for c in phon.vowel_classes)


def _split_suffix(word, phon, tables):
    """Return the suffix string or None, by longest match with known-root preference."""
    bounds = set(np.cumsum([0] + [len(g) for g in phon.graphemes]).tolist())
    candidates = []
    for suf in tables.suffixes:
        cut = len(word) - len(suf)
        if cut <= 0 or not word.endswith(suf) or cut not in bounds:
            continue
        k = sum(1 for b in bounds if 0 < b <= cut)
        root = phon.slice(0, k)
        if len(root) < 2 or not _has_vowel(root):
            continue
        candidates.append((suf, word[:cut]))
    for suf, root in candidates:
        if root in tables.roots:
            return suf
    return candidates[0][0] if candidates else None


def decompose_morphology(word, tables=None):
    """Root + at most one suffix, and syllable spans, for a single word."""
    tables = tables or default_tables()
    word = _normalize(word).strip(PUNCTUATION + " ")
    phon = romanize_to_phonemes(word, tables)
    n = len(phon)
    explicit = word.rsplit("-", 1) if "-" in word else None
    bare = word.replace("-", "")
    if explicit is not None:
        suffix = explicit[1]
    elif bare in tables.roots or bare in tables.particles:
        suffix = None
    else:
        suffix = _split_suffix(bare, phon, tables)
    morphemes = [((0, n), "root")]
    if suffix:
        k = len(romanize_to_phonemes(suffix, tables))
        morphemes = [((0, n - k), "root"), ((n - k, n), "suffix")]
    return SyllableStructure(syllabify(phon.vowel_classes), morphemes, [0], n)


def _words(sentence):
    """(word, boundary punctuation) pairs."""
    out = []
    for token in sentence.split():
        core = token.strip(PUNCTUATION)
        trail = token[len(token.rstrip(PUNCTUATION)):]
        if core:
            out.append([core, trail])
        elif out:
            out[-1][1] += trail
    return out


IMPERATIVE_SUFFIXES = frozenset({"kini", "ki"})
CONVERB_SUFFIXES = frozenset({"me", "fi"})
QUESTION_PARTICLES = frozenset({"nio", "na"})
EMPHATIC_PARTICLES = frozenset({"kai"})


def analyze_prosody(sentence, tables=None):
    """Sentence type, per-word prominence and boundary strength.

    Type precedence: '?' or a final question particle -> interrogative;
    final 'kai' -> emphatic; '!' with an imperative suffix or a bare content
    root -> imperative; other '!' -> exclamative; final converb ->
    continuative; otherwise declarative.
    """
    tables = tables or default_tables()
    sentence = _normalize(sentence).strip()
    words = _words(sentence)
    terminal = sentence[-1] if sentence and sentence[-1] in ".?!" else ""
    names = [w for w, _ in words]
    function = [w in tables.particles for w in names]
    final = names[-1] if names else ""
    final_suffix = None
    if final and not function[-1]:
        ss = decompose_morphology(final, tables)
        final_suffix = ss.suffix(romanize_to_phonemes(final, tables))

    if terminal == "?" or final in QUESTION_PARTICLES:
        kind = SentenceType.INTERROGATIVE
    elif final in EMPHATIC_PARTICLES:
        kind = SentenceType.EMPHATIC
    elif terminal == "!" and names and not function[-1] and (
            final_suffix is None or final_suffix in IMPERATIVE_SUFFIXES):
        kind = SentenceType.IMPERATIVE
    elif terminal == "!":
        kind = SentenceType.EXCLAMATIVE
    elif final_suffix in CONVERB_SUFFIXES:
        kind = SentenceType.CONTINUATIVE
    else:
        kind = SentenceType.DECLARATIVE

    content = [i for i, f in enumerate(function) if not f]
    nuclear = content[-1] if content else None
    prominence = []
    for i, f in enumerate(function):
        if f:
            prominence.append(FUNCTION_PROMINENCE)
        elif i == nuclear:
            prominence.append(NUCLEAR_PROMINENCE)
        else:
            prominence.append(CONTENT_PROMINENCE)
    boundaries = []
    for i, (_, trail) in enumerate(words):
        if i == len(words) - 1:
            boundaries.append("major")
        elif any(c in trail for c in ".?!"):
            boundaries.append("major")
        elif "," in trail:
            boundaries.append("minor")
        else:
            boundaries.append("none")
    return ProsodyAnnotation(kind, names, prominence, boundaries, function)


def check_vowel_harmony(root_classes):
    return not ("back" in root_classes and "front" in root_classes)


def build_hierarchical_representation(text, tables=None):
    """Compose the three tiers and cross-check that they index the same phonemes."""
    tables = tables or default_tables()
    if not text or not text.strip():
        raise ContractError("empty text")
    text = _normalize(text).strip()
    romanize_to_phonemes(text, tables)  # surfaces bad characters with offsets in the full text
    pros = analyze_prosody(text, tables)
    if not pros.words:
        raise ContractError(f"no words in {text!r}")
    seqs, structs, particle_spans, notes = [], [], [], []
    offset = 0
    for word in pros.words:
        phon = romanize_to_phonemes(word, tables)
        ss = decompose_morphology(word, tables)
        (rs, re_), _ = ss.morphemes[0]
        if not check_vowel_harmony(phon.vowel_classes[rs:re_]):
            msg = f"vowel harmony violation in root of {word!r}"
            warnings.warn(msg, VowelHarmonyWarning, stacklevel=2)
            notes.append(msg)
        span = None
        suffix = ss.suffix(phon)
        if suffix is not None and suffix in tables.particles:
            (s, e), _ = ss.morphemes[1]
            span = (s + offset, e + offset)
        seqs.append(phon)
        structs.append(ss.shifted(offset))
        particle_spans.append(span)
        offset += len(phon)
    syll = SyllableStructure(
        [sp for s in structs for sp in s.syllables],
        [m for s in structs for m in s.morphemes],
        [b for s in structs for b in s.word_boundaries],
        offset,
    )
    ht = HierarchicalText(PhonemeSeq.concat(seqs), syll, pros, text, particle_spans, notes)
    validate(ht)
    return ht


def _partitions(spans, n):
    pos = 0
    for s, e in spans:
        if s != pos or e <= s:
            return False
        pos = e
    return pos == n


def validate(ht):
    n = len(ht.phon)
    if not _partitions(ht.syll.syllables, n):
        raise ContractError("syllable spans do not partition the phonemes")
    if not _partitions([sp for sp, _ in ht.syll.morphemes], n):
        raise ContractError("morpheme spans do not partition the phonemes")
    bounds = set(ht.syll.word_boundaries)
    for i, ((s, e), kind) in enumerate(ht.syll.morphemes):
        if kind == "suffix" and (i == 0 or ht.syll.morphemes[i - 1][1] != "root" or s in bounds):
            raise ContractError("suffix span does not follow a root in the same word")
    if len(ht.pros.prominence) != len(ht.syll.word_boundaries):
        raise ContractError("prosody and structure disagree on word count")
    if not all(0.0 <= p <= 1.0 for p in ht.pros.prominence):
        raise ContractError("prominence out of range")
    for pid, cls_ in zip(ht.phon.ids, ht.phon.vowel_classes):
        if not 0 <= pid < 1024:
            raise ContractError(f"phoneme id {pid} out of range")
        if cls_ not in VOWEL_CLASSES:
            raise ContractError(f"bad vowel class {cls_}")


def to_dict(ht):
    """Plain-data view of the three tiers; key order is fixed."""
    g = ht.phon.graphemes
    return {
        "text": ht.text,
        "phonemes": [
            {"id": i, "grapheme": gr, "ipa": sym, "class": c}
            for i, gr, sym, c in zip(ht.phon.ids, g, ht.phon.symbols, ht.phon.vowel_classes)
        ],
        "syllables": [{"span": [s, e], "text": "".join(g[s:e])} for s, e in ht.syll.syllables],
        "morphemes": [{"span": [s, e], "kind": k, "text": "".join(g[s:e])}
                      for (s, e), k in ht.syll.morphemes],
        "word_boundaries": list(ht.syll.word_boundaries),
        "prosody": {
            "sentence_type": ht.pros.sentence_type.value,
            "words": [
                {"word": w, "prominence": p, "boundary": b, "function_word": f}
                for w, p, b, f in zip(ht.pros.words, ht.pros.prominence,
                                      ht.pros.boundaries, ht.pros.function_words)
            ],
        },
        "warnings": list(ht.warnings),
    }


def to_json(ht):
    return json.dumps(to_dict(ht), ensure_ascii=False, indent=2)
