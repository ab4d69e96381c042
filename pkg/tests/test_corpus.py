import numpy as np
import pytest

from hcfmtts.corpus import (CONTOURS, FRAMES_PER_PHONEME, RULE_VERSION, contour,
                            generate_synthetic_corpus, load_corpus, render_mel, save_corpus)
from hcfmtts.frontend import SENTENCE_TYPES, SentenceType, build_hierarchical_representation


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(7, 24)


def test_same_seed_bit_identical(corpus):
    again = generate_synthetic_corpus(7, 24)
    assert [i.text for i in again] == [i.text for i in corpus]
    for a, b in zip(again, corpus):
        assert a.mel.values.tobytes() == b.mel.values.tobytes()
        assert a.speaker == b.speaker


def test_different_seed_differs(corpus):
    assert [i.text for i in generate_synthetic_corpus(8, 24)] != [i.text for i in corpus]


def test_four_frames_per_phoneme(corpus):
    for item in corpus:
        assert item.frames == FRAMES_PER_PHONEME * len(item.ht.phon) == item.mel.frames


def test_target_dtype_and_bins(corpus):
    for item in corpus:
        assert item.mel.values.dtype == np.float32
        assert item.mel.bins == 16


def test_sentence_types_match_frontend(corpus):
    for item in corpus:
        assert build_hierarchical_representation(item.text).pros.sentence_type is item.ht.pros.sentence_type
    assert len({i.ht.pros.sentence_type for i in generate_synthetic_corpus(42, 64)}) == 6


def test_items_differing_only_in_sentence_type_differ_by_contour():
    a = build_hierarchical_representation("ama jihe.")
    b = build_hierarchical_representation("ama jihe?")
    assert a.pros.sentence_type is SentenceType.DECLARATIVE
    assert b.pros.sentence_type is SentenceType.INTERROGATIVE
    diff = render_mel(a, 1, 16).astype(np.float64) - render_mel(b, 1, 16)
    frames = FRAMES_PER_PHONEME * len(a.phon)
    u = np.arange(frames) / (frames - 1)
    z = np.arange(16) / 15 - 0.5
    # declarative 0.8 (0.5 - u) + 0.4 z; interrogative 1.2 u^2 - 0.3 - 0.4 z
    expected = (0.8 * (0.5 - u) - (1.2 * u * u - 0.3))[:, None] + 0.8 * z[None, :]
    np.testing.assert_allclose(diff, expected, atol=1e-5)
    ba, pa, sa = render_mel(a, 1, 16, components=True)
    bb, pb, sb = render_mel(b, 1, 16, components=True)
    assert np.array_equal(ba, bb) and np.array_equal(sa, sb)
    assert not np.array_equal(pa, pb)


def test_six_distinct_contours():
    shapes = [contour(t, 20, 16) for t in SENTENCE_TYPES]
    assert len(CONTOURS) == 6
    for i in range(6):
        for j in range(i + 1, 6):
            assert np.max(np.abs(shapes[i] - shapes[j])) > 0.1


def test_structure_tier_changes_target():
    # b-o | o | i: the final vowel is a syllable onset inside a suffix, 1.2 * 0.8
    bands, _, _ = render_mel(build_hierarchical_representation("booi."), 0, 16, components=True)
    peak = lambda k: bands[k * FRAMES_PER_PHONEME].max()
    assert peak(2) == pytest.approx(2.0 * 1.2)
    assert peak(3) == pytest.approx(2.0 * 1.2 * 0.8)
    assert bands[3 * FRAMES_PER_PHONEME:].max() < bands[2 * FRAMES_PER_PHONEME:3 * FRAMES_PER_PHONEME].max()


def test_save_load_round_trip(tmp_path, corpus):
    save_corpus(corpus, tmp_path / "c")
    meta = (tmp_path / "c" / "meta.txt").read_text()
    assert "seed = 7" in meta and f"rule_version = {RULE_VERSION}" in meta
    back = load_corpus(tmp_path / "c")
    assert back.seed == 7 and len(back) == len(corpus)
    for a, b in zip(back, corpus):
        assert a.text == b.text and a.speaker == b.speaker
        assert a.mel.values.tobytes() == b.mel.values.tobytes()


def test_regenerated_corpus_files_bit_identical(tmp_path):
    save_corpus(generate_synthetic_corpus(3, 5), tmp_path / "a")
    save_corpus(generate_synthetic_corpus(3, 5), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
