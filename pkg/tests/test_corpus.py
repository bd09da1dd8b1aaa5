import itertools
from collections import Counter

import numpy as np
import pytest

from styleshift.corpus import (EOS, UNK, Corpus, CorpusFormatError, Example, NoiseConfig, SynthSpec,
                               Vocabulary, balanced_batches, build_vocab, corrupt, detokenize,
                               generate_newspace_corpus, generate_synthetic_corpus, load_corpus,
                               save_corpus, tokenize)


def corpus_of(pairs, labels=()):
    return Corpus([Example(tuple(t.split()), l) for l, t in pairs], list(labels))


# ----------------------------------------------------------------- vocabulary

def test_tokenize_full_vocab():
    v = Vocabulary(["i", "love", "it"])
    np.testing.assert_array_equal(tokenize("I love it", v), [v.id("i"), v.id("love"), v.id("it")])


def test_round_trip_in_vocab():
    v = Vocabulary(["a", "b", "c"])
    assert detokenize(tokenize("c a b a", v), v) == "c a b a"


def test_oov_maps_to_unk():
    v = Vocabulary(["a"])
    assert list(tokenize("a zzz", v)) == [v.id("a"), UNK]


def test_decode_skips_control_ids():
    v = Vocabulary(["a"])
    assert v.decode([v.id("a"), EOS]) == ["a"]


def test_reserved_token_rejected():
    with pytest.raises(ValueError):
        Vocabulary(["</s>"])


def test_extend_keeps_existing_ids():
    v = Vocabulary(["a", "b"])
    w = v.extend(["b", "c", "c"])
    assert w.tokens == ["a", "b", "c"] and w.id("a") == v.id("a")


def test_build_vocab_frequency_order():
    assert build_vocab(["a a b"], max_size=10).tokens == ["a", "b"]


def test_build_vocab_max_size():
    assert build_vocab(["a a a a a b b b"], max_size=1).tokens == ["a"]


def test_build_vocab_tie_break():
    assert build_vocab(["b a b a"]).tokens == ["a", "b"]


def test_build_vocab_min_count():
    assert build_vocab(["a a b"], min_count=2).tokens == ["a"]


def test_build_vocab_empty():
    with pytest.raises(ValueError):
        build_vocab([])


# ---------------------------------------------------------------------- noise

def test_no_noise_is_identity():
    x = np.arange(10)
    np.testing.assert_array_equal(corrupt(x, NoiseConfig(0.0, 0), np.random.default_rng(0)), x)


def test_single_token_survives():
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert list(corrupt([7], NoiseConfig(0.9, 3), rng)) == [7]


def test_noise_monte_carlo():
    # 10k trials: kept fraction matches 1 - p_wd, no token moves past k
    rng = np.random.default_rng(1)
    cfg = NoiseConfig(0.1, 3)
    x = np.arange(10)
    kept, worst = [], 0
    for _ in range(10_000):
        out = corrupt(x, cfg, rng)
        kept.append(len(out) / 10)
        survivors = np.sort(out)
        rank = {tok: i for i, tok in enumerate(survivors)}
        worst = max(worst, max(abs(i - rank[t]) for i, t in enumerate(out)))
    assert abs(np.mean(kept) - 0.9) <= 0.01
    assert worst <= 3


@pytest.mark.parametrize("n,k", [(n, k) for n in range(1, 7) for k in range(3)])
def test_shuffle_displacement_exhaustive(n, k):
    allowed = {p for p in itertools.permutations(range(n)) if all(abs(i - v) <= k for i, v in enumerate(p))}
    rng = np.random.default_rng(n * 10 + k)
    seen = {tuple(int(t) for t in corrupt(np.arange(n), NoiseConfig(0.0, k), rng)) for _ in range(3000)}
    assert seen <= allowed
    if k > 0 and n > 1:
        assert len(seen) > 1


def test_never_empty():
    rng = np.random.default_rng(2)
    for n in range(1, 6):
        for _ in range(300):
            assert len(corrupt(np.arange(n), NoiseConfig(0.95, 2), rng)) >= 1


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(1.0, 3)
    with pytest.raises(ValueError):
        NoiseConfig(0.1, -1)


# ------------------------------------------------------------------- sampling

def test_two_labels_batch_of_four():
    c = corpus_of([("a", "x")] * 5 + [("b", "y")] * 5)
    batches = balanced_batches(c, 4, np.random.default_rng(0))
    for _ in range(20):
        assert sorted(Counter(c[i].label for i in next(batches)).values()) == [2, 2]


def test_imbalanced_labels_oversampled():
    c = corpus_of([("a", "x")] * 100 + [("b", "y")])
    batches = balanced_batches(c, 10, np.random.default_rng(0))
    counts = Counter(c[i].label for _ in range(50) for i in next(batches))
    assert counts["a"] == counts["b"] == 250


def test_balanced_frequencies():
    labels = list("abcdefgh")
    c = corpus_of([(l, "x") for l in labels for _ in range(3 + labels.index(l) * 7)])
    batches = balanced_batches(c, 32, np.random.default_rng(3))
    draws = [c[i].label for _ in range(313) for i in next(batches)][:10_000]
    freq = Counter(draws)
    for l in labels:
        assert abs(freq[l] / len(draws) - 0.125) <= 0.005


def test_missing_label_rejected():
    c = corpus_of([("a", "x")], labels=["a", "b"])
    with pytest.raises(ValueError, match="b"):
        next(balanced_batches(c, 4, np.random.default_rng(0)))


# -------------------------------------------------------------------- loading

def test_load_line(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("happy\ti got the job\n")
    c = load_corpus(p)
    assert c.examples == [Example(("i", "got", "the", "job"), "happy")]


def test_load_empty_file(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("")
    with pytest.raises(CorpusFormatError):
        load_corpus(p)


def test_load_keeps_text_after_first_tab(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("sad\tone\ttwo three\n")
    assert load_corpus(p)[0].tokens == ("one", "two", "three")


def test_load_reports_bad_lines(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("ok\tfine\nno tab here\nbad label!\tx\nok\t  \n")
    with pytest.raises(CorpusFormatError) as err:
        load_corpus(p)
    assert err.value.bad_lines == [2, 3, 4]


def test_save_load_round_trip(tmp_path):
    c = corpus_of([("a", "x y"), ("b", "z")])
    save_corpus(c, tmp_path / "c.tsv")
    assert load_corpus(tmp_path / "c.tsv").examples == c.examples


def test_corpus_rejects_unknown_labels():
    with pytest.raises(ValueError):
        corpus_of([("a", "x")], labels=["b"])


def test_without_drops_labels():
    c = corpus_of([("a", "x"), ("b", "y"), ("c", "z")])
    assert c.without(["b"]).labels == ["a", "c"] and len(c.without(["b"])) == 2


# ------------------------------------------------------------------ synthetic

SMALL = SynthSpec(num_labels=4, content_vocab_size=50, examples_per_label=200, valid_per_label=30,
                  test_per_label=30)


def test_purity_one_single_marker_oracle_exact():
    spec = SynthSpec(num_labels=5, markers_per_label=1, marker_purity=1.0, content_vocab_size=40,
                     examples_per_label=100, valid_per_label=10, test_per_label=10)
    sc = generate_synthetic_corpus(spec, np.random.default_rng(0))
    for split in (sc.train, sc.valid, sc.test):
        assert sc.oracle_accuracy(split) == 1.0


def test_default_spec_oracle_accuracy():
    sc = generate_synthetic_corpus(SynthSpec(), np.random.default_rng(0))
    assert len(sc.labels) == 8
    assert sc.oracle_accuracy(sc.test) >= 0.85


def test_marker_sets_disjoint():
    sc = generate_synthetic_corpus(SMALL, np.random.default_rng(0))
    flat = [m for ms in sc.markers.values() for m in ms]
    assert len(flat) == len(set(flat)) and not set(flat) & set(sc.content_tokens)


def test_generator_deterministic():
    a = generate_synthetic_corpus(SMALL, np.random.default_rng(5))
    b = generate_synthetic_corpus(SMALL, np.random.default_rng(5))
    assert a.train.examples == b.train.examples and a.test.examples == b.test.examples


def test_splits_disjoint_and_sized():
    sc = generate_synthetic_corpus(SMALL, np.random.default_rng(0))
    tr, va, te = (set(s.examples) for s in (sc.train, sc.valid, sc.test))
    assert not (tr & va or tr & te or va & te)
    assert (len(sc.train), len(sc.valid), len(sc.test)) == (800, 120, 120)


def test_lengths_within_bounds():
    sc = generate_synthetic_corpus(SMALL, np.random.default_rng(0))
    assert all(SMALL.min_len <= len(e.tokens) <= SMALL.max_len for e in sc.train)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(marker_purity=0.4)
    with pytest.raises(ValueError):
        SynthSpec(min_len=2)


def test_newspace_corpus_shape():
    base = generate_synthetic_corpus(SMALL, np.random.default_rng(0))
    new = generate_newspace_corpus(base, np.random.default_rng(1), num_labels=4, aliased=2,
                                   examples_per_label=30, valid_per_label=5, test_per_label=10,
                                   avoid=["angry"], spec=SMALL)
    assert new.labels[:2] == ["happy", "sad"]
    assert not set(new.labels[2:]) & set(base.labels)
    assert new.markers["happy"] == base.markers["happy"]
    assert new.content_tokens == base.content_tokens
    # every content bigram is a transition of the base chain
    index = {t: i for i, t in enumerate(base.content_tokens)}
    allowed = {(a, int(b)) for row in base.successors for a, b in enumerate(row)}
    marker_set = {m for ms in new.markers.values() for m in ms}
    for ex in new.train.examples:
        content = [index[t] for t in ex.tokens if t not in marker_set]
        assert all(pair in allowed for pair in zip(content, content[1:]))


def test_newspace_start_subset():
    base = generate_synthetic_corpus(SMALL, np.random.default_rng(0))
    new = generate_newspace_corpus(base, np.random.default_rng(1), num_labels=3, aliased=1, content_share=0.2,
                                   examples_per_label=30, valid_per_label=5, test_per_label=10, spec=SMALL)
    marker_set = {m for ms in new.markers.values() for m in ms}
    firsts = {next(t for t in ex.tokens if t not in marker_set) for ex in new.train.examples}
    assert len(firsts) <= round(0.2 * len(base.content_tokens))
