import json
import warnings
from importlib import resources

import pytest
from hypothesis import given, settings, strategies as st

from hcfmtts.errors import ContractError, PhonemizationError
from hcfmtts.frontend import (FUNCTION_PROMINENCE, SentenceType, VowelHarmonyWarning,
                              analyze_prosody, build_hierarchical_representation,
                              decompose_morphology, default_tables, romanize_to_phonemes, to_json)


def g2p_rows():
    """The shipped table read directly, independent of the loader."""
    path = resources.files("hcfmtts") / "data" / "g2p.tsv"
    rows = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        parts = line.split("\t")
        rows[parts[0]] = (parts[1], parts[2] if len(parts) > 2 else "consonant")
    return rows


def test_ama_against_table():
    rows = g2p_rows()
    seq = romanize_to_phonemes("ama")
    assert seq.symbols == [rows["a"][0], rows["m"][0], rows["a"][0]]
    assert seq.vowel_classes == ["back", "consonant", "back"]


def test_empty_text_gives_empty_sequence():
    assert len(romanize_to_phonemes("")) == 0


def test_sunggi_has_six_symbols():
    rows = g2p_rows()
    seq = romanize_to_phonemes("šunggi")
    assert seq.graphemes == ["š", "u", "n", "g", "g", "i"]
    assert seq.symbols == [rows[g][0] for g in seq.graphemes]


def test_digraphs_win_over_single_letters():
    rows = g2p_rows()
    digraphs = [k for k in rows if len(k) > 1]
    assert digraphs
    for d in digraphs:
        seq = romanize_to_phonemes(d)
        assert seq.graphemes == [d]


def test_unknown_character_reports_byte_offset():
    with pytest.raises(PhonemizationError) as err:
        romanize_to_phonemes("šuq")
    assert err.value.offset == len("šu".encode("utf-8"))


def test_consonant_tag_iff_consonant():
    rows = g2p_rows()
    vowels = {"a", "e", "i", "o", "u", "ū"}
    for rom, (_, cls_) in rows.items():
        assert (cls_ == "consonant") == (rom not in vowels)


def test_sunggira_root_and_suffix():
    phon = romanize_to_phonemes("šunggira")
    ss = decompose_morphology("šunggira")
    assert ss.root(phon) == "šunggi"
    assert ss.suffix(phon) == "ra"


def test_ama_is_bare_root():
    ss = decompose_morphology("ama")
    assert ss.suffix(romanize_to_phonemes("ama")) is None
    assert ss.syllables == [(0, 1), (1, 3)]


def test_booi_genitive_split():
    phon = romanize_to_phonemes("booi")
    ss = decompose_morphology("booi")
    assert (ss.root(phon), ss.suffix(phon)) == ("boo", "i")


def test_minimum_suffix_lexicon_shipped():
    assert {"ra", "re", "ha", "he", "mbi", "i", "be", "de"} <= set(default_tables().suffixes)


def test_declarative_with_major_final_boundary():
    p = analyze_prosody("ama jihe.")
    assert p.sentence_type is SentenceType.DECLARATIVE
    assert p.boundaries[-1] == "major"
    assert all(x >= 0.5 for x in p.prominence)


def test_question_mark_forces_interrogative():
    assert analyze_prosody("ama jihe?").sentence_type is SentenceType.INTERROGATIVE


def test_particle_i_is_weak_function_word():
    p = analyze_prosody("ama i jihe.")
    k = p.words.index("i")
    assert p.function_words[k]
    assert p.prominence[k] <= 0.3


def test_genitive_suffix_weakened_in_phoneme_prominence():
    ht = build_hierarchical_representation("booi jihe.")
    prom = ht.phoneme_prominence()
    assert prom[3] == FUNCTION_PROMINENCE
    assert min(prom[:3]) >= 0.5


def test_sunggira_question_three_tiers():
    ht = build_hierarchical_representation("šunggira?")
    assert ht.pros.sentence_type is SentenceType.INTERROGATIVE
    assert len(ht.phon) == 8
    assert ht.syll.syllables[-1][1] == 8
    assert [k for _, k in ht.syll.morphemes] == ["root", "suffix"]
    assert ht.prosody_features().shape[0] == 8


def test_single_word_defaults():
    ht = build_hierarchical_representation("ama")
    assert ht.pros.words == ["ama"]
    assert len(ht.syll.syllables) == 2
    assert ht.pros.sentence_type is SentenceType.DECLARATIVE


@pytest.mark.parametrize("text", ["", "   "])
def test_empty_text_rejected(text):
    with pytest.raises(ContractError):
        build_hierarchical_representation(text)


def test_sentence_type_rules():
    cases = {"ama jihe.": "declarative", "ama jihe nio": "interrogative", "gene!": "imperative", "genekini!": "imperative",
             "ama jihe!": "exclamative", "ama jime.": "continuative", "ama jihe kai.": "emphatic"}
    for text, kind in cases.items():
        assert analyze_prosody(text).sentence_type.value == kind, text


def test_vowel_harmony_violation_warns_not_raises():
    with pytest.warns(VowelHarmonyWarning):
        ht = build_hierarchical_representation("makel")
    assert ht.warnings


def test_determinism_and_json_stable():
    a = build_hierarchical_representation("šunggira, ama i jihe?")
    b = build_hierarchical_representation("šunggira, ama i jihe?")
    assert to_json(a) == to_json(b)
    d = json.loads(to_json(a))
    assert d["prosody"]["words"][0]["boundary"] == "minor"


LEXICON = sorted(default_tables().roots)
SUFFIXES = [None] + sorted(default_tables().suffixes)
word = st.tuples(st.sampled_from(LEXICON), st.sampled_from(SUFFIXES)).map(
    lambda rs: rs[0] + (rs[1] or ""))


@settings(max_examples=500, deadline=None)
@given(word)
def test_round_trip_over_lexicon_words(w):
    assert "".join(romanize_to_phonemes(w).graphemes) == w


@settings(max_examples=500, deadline=None)
@given(st.lists(word, min_size=1, max_size=5))
def test_spans_partition_phonemes(words):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VowelHarmonyWarning)
        ht = build_hierarchical_representation(" ".join(words) + ".")
    n = len(ht.phon)
    for spans in (ht.syll.syllables, [sp for sp, _ in ht.syll.morphemes]):
        covered = [i for s, e in spans for i in range(s, e)]
        assert covered == list(range(n))
    # morpheme text re-joins to the words
    g = ht.phon.graphemes
    starts = ht.syll.word_boundaries + [n]
    assert ["".join(g[s:e]) for s, e in zip(starts, starts[1:])] == words

