"""Text pipeline tests: BPE learning/application, vocabularies, batching."""

import string
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charnmt.errors import ConfigError, CorpusError, DomainError
from charnmt.textpipe import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    RESERVED,
    UNK_ID,
    Batch,
    MergeTable,
    Vocabulary,
    apply_bpe,
    build_vocab,
    detokenize_subwords,
    learn_bpe,
    load_parallel,
    make_batches,
    naive_tokenize,
    segment_line,
    split_word,
)

# ---------------------------------------------------------------------------
# Oracle: replay learned merges over the corpus as a flat list of word
# occurrences (not a frequency table) and verify every rule was the most
# frequent adjacent pair at its point, with lexicographic tie-break, and that
# learning stopped exactly when no pair occurred twice.


def _occurrence_pairs(words):
    counts = Counter()
    for w in words:
        for i in range(len(w) - 1):
            counts[(w[i], w[i + 1])] += 1
    return counts


def _merge_occurrences(words, pair):
    a, b = pair
    merged = []
    for w in words:
        out, i = [], 0
        while i < len(w):
            if i + 1 < len(w) and w[i] == a and w[i + 1] == b:
                out.append(a + b)
                i += 2
            else:
                out.append(w[i])
                i += 1
        merged.append(out)
    return merged


def check_merge_sequence(lines, table: MergeTable, num_merges: int):
    words = [list(w) for line in lines for w in line.split()]
    for rule in table.rules:
        counts = _occurrence_pairs(words)
        assert counts, "rule learned but no adjacent pairs exist"
        best_count = max(counts.values())
        assert best_count >= 2, f"rule {rule} learned from unrepeated pair"
        expected = min(p for p, c in counts.items() if c == best_count)
        assert rule == expected, f"expected {expected}, learned {rule}"
        words = _merge_occurrences(words, rule)
    if len(table.rules) < num_merges:
        counts = _occurrence_pairs(words)
        assert not counts or max(counts.values()) < 2, "stopped early with work left"


SPEC_CORPUS = (
    ["low"] * 5 + ["lower"] * 2 + ["newest"] * 6 + ["widest"] * 3
)


class TestLearnBpe:
    def test_first_merge_on_reference_corpus(self):
        table = learn_bpe([" ".join(SPEC_CORPUS)], num_merges=1)
        assert table.rules == [("e", "s")]
        check_merge_sequence([" ".join(SPEC_CORPUS)], table, 1)

    def test_full_run_against_oracle(self):
        lines = [" ".join(SPEC_CORPUS)]
        table = learn_bpe(lines, num_merges=10)
        check_merge_sequence(lines, table, 10)

    @pytest.mark.parametrize("seed", range(12))
    def test_random_corpora_against_oracle(self, seed):
        rng = np.random.default_rng(1000 + seed)
        alphabet = "abcde"
        words = [
            "".join(rng.choice(list(alphabet), size=rng.integers(1, 9)))
            for _ in range(rng.integers(5, 40))
        ]
        lines = [" ".join(words[i::3]) for i in range(3) if words[i::3]]
        num_merges = int(rng.integers(0, 15))
        table = learn_bpe(lines, num_merges)
        check_merge_sequence(lines, table, num_merges)

    def test_zero_merges(self):
        assert len(learn_bpe(["some words here"], 0)) == 0

    def test_single_character_word(self):
        assert len(learn_bpe(["a"], 50)) == 0

    def test_unrepeated_pairs_learn_nothing(self):
        assert len(learn_bpe(["ab cd ef"], 50)) == 0

    def test_empty_corpus_rejected(self):
        with pytest.raises(DomainError):
            learn_bpe([], 5)
        with pytest.raises(DomainError):
            learn_bpe(["", "   "], 5)

    def test_rules_unique(self):
        table = learn_bpe([" ".join(SPEC_CORPUS)], 30)
        assert len(set(table.rules)) == len(table.rules)


class TestApplyBpe:
    def test_character_fallback_with_marker(self):
        assert apply_bpe(["ab"], MergeTable()) == ["a@@", "b"]

    def test_single_full_merge(self):
        table = MergeTable(rules=[("a", "b")])
        assert apply_bpe(["ab"], table) == ["ab"]

    def test_rule_priority_order(self):
        # ('b','c') learned first so it wins inside "abc"
        table = MergeTable(rules=[("b", "c"), ("a", "b")])
        assert apply_bpe(["abc"], table) == ["a@@", "bc"]

    def test_unknown_characters_pass_through(self):
        table = learn_bpe([" ".join(SPEC_CORPUS)], 10)
        pieces = apply_bpe(["lowxyz"], table)
        assert "".join(p.rstrip("@") for p in pieces) == "lowxyz"

    def test_round_trip_1000_random_words(self):
        rng = np.random.default_rng(7)
        alphabet = list(string.ascii_lowercase)
        words = [
            "".join(rng.choice(alphabet, size=rng.integers(1, 12)))
            for _ in range(1000)
        ]
        table = learn_bpe([" ".join(words[:400])], 60)
        for w in words:
            assert detokenize_subwords(apply_bpe([w], table)) == w

    @given(
        st.lists(
            st.text(alphabet="abcdef", min_size=1, max_size=10),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_stream_round_trip(self, words):
        table = learn_bpe(["abab abab cdcd cdcd effe effe"], 8)
        assert detokenize_subwords(apply_bpe(words, table)) == " ".join(words)

    def test_idempotent_fixpoint(self):
        # output pieces contain no adjacent pair that any rule could merge
        table = learn_bpe([" ".join(SPEC_CORPUS)], 20)
        rules = set(table.rules)
        for word in {"low", "lower", "newest", "widest", "lowest", "news"}:
            pieces = split_word(word, table)
            for pair in zip(pieces, pieces[1:]):
                assert pair not in rules

    def test_multi_word_sentence(self):
        table = MergeTable(rules=[("l", "o"), ("lo", "w")])
        assert apply_bpe(["low", "lower"], table) == ["low", "low@@", "e@@", "r"]


class TestMergeFile:
    def test_save_load_round_trip(self, tmp_path):
        table = learn_bpe([" ".join(SPEC_CORPUS)], 10)
        path = tmp_path / "merges.txt"
        table.save(path)
        assert MergeTable.load(path).rules == table.rules

    def test_version_comment_first_line(self, tmp_path):
        path = tmp_path / "merges.txt"
        MergeTable(rules=[("a", "b")]).save(path)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first.startswith("#")

    def test_missing_version_rejected(self, tmp_path):
        path = tmp_path / "merges.txt"
        path.write_text("a b\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            MergeTable.load(path)

    def test_malformed_rule_rejected(self, tmp_path):
        path = tmp_path / "merges.txt"
        path.write_text("#version: x\na b c\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            MergeTable.load(path)


class TestVocabulary:
    def test_character_unit_includes_space(self):
        vocab = build_vocab(["a a b"], "character", 50)
        for sym in RESERVED + ("a", "b", " "):
            assert sym in vocab.index

    def test_reserved_at_fixed_indices(self):
        vocab = build_vocab(["x y"], "subword", 50)
        assert vocab.symbols[:4] == list(RESERVED)
        assert (vocab.index["<s>"], vocab.index["</s>"]) == (BOS_ID, EOS_ID)
        assert (vocab.index["<unk>"], vocab.index["<pad>"]) == (UNK_ID, PAD_ID)

    def test_encode_decode_identity(self):
        vocab = build_vocab(["the cat sat"], "subword", 50)
        tokens = ["the", "sat", "cat"]
        assert vocab.decode(vocab.encode(tokens)) == tokens

    def test_oov_encodes_to_unk(self):
        vocab = build_vocab(["the cat"], "subword", 50)
        assert vocab.encode(["dog"]) == [UNK_ID]

    def test_frequency_ranking_and_truncation(self):
        vocab = build_vocab(["c c c b b a"], "subword", 6)
        assert vocab.symbols == list(RESERVED) + ["c", "b"]

    def test_frequency_tie_breaks_lexicographic(self):
        vocab = build_vocab(["b a b a"], "subword", 10)
        assert vocab.symbols[4:] == ["a", "b"]

    def test_max_size_below_reserved_rejected(self):
        with pytest.raises(ConfigError):
            build_vocab(["a"], "subword", 4)

    def test_empty_corpus_rejected(self):
        with pytest.raises(DomainError):
            build_vocab([], "character", 10)

    def test_unknown_unit_rejected(self):
        with pytest.raises(ConfigError):
            Vocabulary("word", list(RESERVED))

    def test_duplicate_symbols_rejected(self):
        with pytest.raises(CorpusError):
            Vocabulary("subword", list(RESERVED) + ["a", "a"])

    def test_file_round_trip(self, tmp_path):
        vocab = build_vocab(["a b c a"], "character", 20)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = Vocabulary.load(path, "character")
        assert loaded.symbols == vocab.symbols
        assert loaded.index == vocab.index

    def test_file_is_one_symbol_per_line(self, tmp_path):
        vocab = build_vocab(["x y"], "subword", 10)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines == vocab.symbols

    def test_load_requires_reserved_prefix(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\nc\nd\ne\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            Vocabulary.load(path, "subword")


class TestSegmentLine:
    def test_character_mode_keeps_spaces(self):
        assert segment_line("ab c", "character") == ["a", "b", " ", "c"]

    def test_subword_mode_needs_merges(self):
        with pytest.raises(ConfigError):
            segment_line("ab", "subword")

    def test_subword_mode(self):
        table = MergeTable(rules=[("a", "b")])
        assert segment_line("ab cd", "subword", table) == ["ab", "c@@", "d"]


def test_naive_tokenize():
    assert naive_tokenize("Hello, world!") == ["Hello", ",", "world", "!"]


class TestLoadParallel:
    def test_aligned(self, tmp_path):
        (tmp_path / "a.txt").write_text("x\ny\n", encoding="utf-8")
        (tmp_path / "b.txt").write_text("u\nv\n", encoding="utf-8")
        pairs = load_parallel(tmp_path / "a.txt", tmp_path / "b.txt")
        assert pairs == [("x", "u"), ("y", "v")]

    def test_mismatch_names_files(self, tmp_path):
        (tmp_path / "a.txt").write_text("x\ny\n", encoding="utf-8")
        (tmp_path / "b.txt").write_text("u\n", encoding="utf-8")
        with pytest.raises(CorpusError) as exc:
            load_parallel(tmp_path / "a.txt", tmp_path / "b.txt")
        assert "a.txt" in str(exc.value) and "b.txt" in str(exc.value)


def _vocabs():
    syms = list(string.ascii_lowercase)
    src = Vocabulary("subword", list(RESERVED) + syms)
    tgt = Vocabulary("character", list(RESERVED) + syms)
    return src, tgt


def _random_pairs(rng, n, src_max=8, tgt_max=12):
    pairs = []
    for _ in range(n):
        s = [rng.choice(list("abcde")) for _ in range(rng.integers(1, src_max + 1))]
        t = [rng.choice(list("uvwxy")) for _ in range(rng.integers(1, tgt_max + 1))]
        pairs.append((s, t))
    return pairs


class TestMakeBatches:
    def test_overlong_source_dropped(self):
        src, tgt = _vocabs()
        pairs = [(["a"] * 51, ["b"]), (["a"] * 50, ["b"])]
        batches = make_batches(pairs, src, tgt, 50, 100, 8, seed=0)
        assert sum(b.size for b in batches) == 1
        assert batches[0].source_lengths[0] == 51  # 50 subwords + EOS

    def test_overlong_target_dropped(self):
        src, tgt = _vocabs()
        pairs = [(["a"], ["b"] * 101), (["a"], ["b"] * 100)]
        batches = make_batches(pairs, src, tgt, 50, 100, 8, seed=0)
        assert sum(b.size for b in batches) == 1

    def test_eos_and_bos_placement(self):
        src, tgt = _vocabs()
        batches = make_batches([(["a", "b"], ["c"])], src, tgt, 50, 100, 4, seed=0)
        b = batches[0]
        assert b.source[0].tolist() == [src.index["a"], src.index["b"], EOS_ID]
        assert b.target[0].tolist() == [BOS_ID, tgt.index["c"], EOS_ID]

    def test_batch_size_one_is_pad_free(self):
        src, tgt = _vocabs()
        rng = np.random.default_rng(3)
        pairs = _random_pairs(rng, 9)
        batches = make_batches(pairs, src, tgt, 50, 100, 1, seed=5)
        assert len(batches) == 9
        for b in batches:
            assert b.size == 1
            assert not np.any(b.source == PAD_ID)
            # BOS shares no index with PAD; target holds exactly one BOS
            assert np.count_nonzero(b.target == PAD_ID) == 0

    def test_pad_only_after_true_length(self):
        src, tgt = _vocabs()
        rng = np.random.default_rng(11)
        batches = make_batches(_random_pairs(rng, 40), src, tgt, 50, 100, 8, seed=2)
        for b in batches:
            for i in range(b.size):
                row = b.source[i]
                n = b.source_lengths[i]
                assert np.all(row[:n] != PAD_ID)
                assert np.all(row[n:] == PAD_ID)
                trow, tn = b.target[i], b.target_lengths[i]
                assert np.all(trow[:tn] != PAD_ID)
                assert np.all(trow[tn:] == PAD_ID)

    def test_indices_within_vocab(self):
        src, tgt = _vocabs()
        rng = np.random.default_rng(4)
        batches = make_batches(_random_pairs(rng, 30), src, tgt, 50, 100, 7, seed=1)
        for b in batches:
            assert b.source.max() < len(src)
            assert b.target.max() < len(tgt)

    def test_same_seed_same_order(self):
        src, tgt = _vocabs()
        rng = np.random.default_rng(9)
        pairs = _random_pairs(rng, 50)
        a = make_batches(pairs, src, tgt, 50, 100, 8, seed=13)
        b = make_batches(pairs, src, tgt, 50, 100, 8, seed=13)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert np.array_equal(x.source, y.source)
            assert np.array_equal(x.target, y.target)

    def test_different_seed_different_order(self):
        src, tgt = _vocabs()
        rng = np.random.default_rng(10)
        pairs = _random_pairs(rng, 60)
        a = make_batches(pairs, src, tgt, 50, 100, 60, seed=1)
        b = make_batches(pairs, src, tgt, 50, 100, 60, seed=2)
        assert not np.array_equal(a[0].source, b[0].source)

    def test_filter_monotone_in_limits(self):
        src, tgt = _vocabs()
        rng = np.random.default_rng(21)
        pairs = _random_pairs(rng, 80, src_max=12, tgt_max=16)
        kept_small = {
            tuple(map(tuple, p))
            for p in pairs
            if len(p[0]) <= 6 and len(p[1]) <= 8
        }
        low = make_batches(pairs, src, tgt, 6, 8, 4, seed=0)
        high = make_batches(pairs, src, tgt, 12, 16, 4, seed=0)
        assert sum(b.size for b in low) == len(kept_small)
        assert sum(b.size for b in high) == len(pairs)

    def test_everything_filtered_yields_no_batches(self):
        src, tgt = _vocabs()
        assert make_batches([(["a"] * 9, ["b"])], src, tgt, 5, 100, 4, seed=0) == []

    def test_bad_batch_size(self):
        src, tgt = _vocabs()
        with pytest.raises(ConfigError):
            make_batches([], src, tgt, 50, 100, 0, seed=0)

    def test_masks(self):
        src, tgt = _vocabs()
        b = make_batches(
            [(["a", "b"], ["c"]), (["a"], ["c", "d", "e"])],
            src, tgt, 50, 100, 2, seed=0,
        )[0]
        sm = b.source_mask()
        assert sm.shape == b.source.shape
        assert sm.sum() == b.source_lengths.sum()
        lm = b.label_mask()
        assert lm.shape == (b.size, b.target.shape[1] - 1)
        # one label per real target token plus EOS (BOS is input only)
        assert lm.sum() == (b.target_lengths - 1).sum()
