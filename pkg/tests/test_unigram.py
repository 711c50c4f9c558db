import math
import random

import pytest

from minit5.unigram import (BOUNDARY, EOS_ID, MASK_ID, PAD_ID, RESERVED_PIECES,
                            UNK_ID, UnigramVocab, build_seed_vocab, decode,
                            em_step, encode, prune_vocab, train_vocab)

from oracles import best_segmentation, enumerate_expected_counts

PT_WORDS = ["casa", "gato", "cão", "água", "pão", "maçã", "coração", "você",
            "então", "também", "história", "rápido", "número", "São", "Paulo",
            "obrigado", "língua", "açúcar", "férias", "avó"]


def make_vocab(scored: dict[str, float]) -> UnigramVocab:
    return UnigramVocab([(p, 0.0) for p in RESERVED_PIECES] + list(scored.items()))


def pt_corpus(n_sentences: int, seed: int = 0, max_words: int = 6) -> list[str]:
    rng = random.Random(seed)
    return [" ".join(rng.choice(PT_WORDS) for _ in range(rng.randrange(1, max_words)))
            for _ in range(n_sentences)]


class TestSeedVocab:
    def test_tiny_corpus_keeps_all_substrings(self):
        vocab = build_seed_vocab(["aa"], 3)
        pieces = {p for p, _ in vocab.pieces}
        assert {"a", "aa"} <= pieces

    def test_substring_frequency(self):
        vocab = build_seed_vocab(["ab", "ab"], 4)
        # initial probs come from raw frequencies: freq(ab) == freq(a) == 2
        scored = vocab.scored_body()
        assert math.isclose(scored["ab"], scored["a"])
        assert math.isclose(scored["ab"], scored["b"])

    def test_seed_size_below_character_count(self):
        with pytest.raises(ValueError, match="seed_size"):
            build_seed_vocab(["abcdef"], 3)

    def test_character_coverage_on_sample(self):
        corpus = pt_corpus(2000, seed=1)
        vocab = build_seed_vocab(corpus, 8000)
        pieces = {p for p, _ in vocab.pieces}
        chars = {ch for line in corpus for ch in line.replace(" ", BOUNDARY)}
        assert chars <= pieces

    def test_reserved_spellings_never_become_pieces(self):
        vocab = build_seed_vocab(["x <unk> y", "<M> <M>"], 200)
        body = vocab.scored_body()
        for reserved in RESERVED_PIECES:
            assert reserved not in body


class TestEmStep:
    def test_single_piece_identity(self):
        vocab = make_vocab({"a": math.log(1.0)})
        new, ll = em_step(["aaa"], vocab)
        assert ll == pytest.approx(0.0, abs=1e-12)
        assert new.scored_body()["a"] == pytest.approx(0.0, abs=1e-12)

    def test_two_path_hand_case(self):
        vocab = make_vocab({"a": math.log(0.5), "aa": math.log(0.5)})
        new, ll = em_step(["aa"], vocab)
        # paths: "aa" (.5) and "a a" (.25); posterior 2/3 vs 1/3
        assert ll == pytest.approx(math.log(0.75), abs=1e-12)
        # expected counts: aa -> 2/3, a -> 2 * 1/3; renormalized to 1/2, 1/2
        scored = new.scored_body()
        assert math.exp(scored["aa"]) == pytest.approx(0.5, abs=1e-12)
        assert math.exp(scored["a"]) == pytest.approx(0.5, abs=1e-12)

    def test_expected_counts_match_enumeration(self):
        rng = random.Random(23)
        corpus = ["".join(rng.choice("ab") for _ in range(rng.randrange(1, 11)))
                  for _ in range(50)]
        vocab = build_seed_vocab(corpus, 40)
        scored = vocab.scored_body()
        # oracle: enumerate all segmentations of each sentence
        want: dict[str, float] = {}
        total_ll = 0.0
        weights: dict[str, int] = {}
        for s in corpus:
            weights[s] = weights.get(s, 0) + 1
        for s, w in weights.items():
            counts, z = enumerate_expected_counts(s, scored)
            total_ll += w * math.log(z)
            for p, c in counts.items():
                want[p] = want.get(p, 0.0) + w * c
        got, ll = em_step(corpus, vocab)
        assert ll == pytest.approx(total_ll, abs=1e-10)
        total = sum(want.values())
        got_scored = got.scored_body()
        for p, c in want.items():
            assert math.exp(got_scored[p]) == pytest.approx(c / total, abs=1e-10)

    def test_unknown_character_not_fatal(self):
        vocab = make_vocab({"a": math.log(1.0)})
        new, ll = em_step(["aXa"], vocab)
        assert math.isfinite(ll)

    def test_monotone_log_likelihood(self):
        corpus = pt_corpus(200, seed=3)
        vocab = build_seed_vocab(corpus, 400)
        prev = None
        for _ in range(20):
            vocab, ll = em_step(corpus, vocab)
            if prev is not None:
                assert ll >= prev - 1e-9 * abs(prev)
            prev = ll


class TestPrune:
    def test_noop_at_target(self):
        corpus = ["abab", "ab"]
        vocab = build_seed_vocab(corpus, 6)
        out = prune_vocab(corpus, vocab, target_size=len(vocab))
        assert out.pieces == vocab.pieces

    def test_zero_use_piece_removed_first(self):
        # "xy" never appears in the corpus text, so it sits on no Viterbi path
        scored = {"a": math.log(0.4), "b": math.log(0.3),
                  "ab": math.log(0.2), "xy": math.log(0.05),
                  "x": math.log(0.025), "y": math.log(0.025)}
        vocab = make_vocab(scored)
        out = prune_vocab(["abab", "ab", "x", "y"], vocab, target_size=len(vocab) - 1)
        body = out.scored_body()
        assert "xy" not in body
        assert "ab" in body

    def test_exact_final_size(self):
        corpus = pt_corpus(300, seed=5)
        vocab = build_seed_vocab(corpus, 8000)
        assert len(vocab) > 300
        out = prune_vocab(corpus, vocab, target_size=300)
        assert len(out) == 300

    def test_target_below_minimum(self):
        corpus = ["abcdefgh"]
        vocab = build_seed_vocab(corpus, 30)
        with pytest.raises(ValueError, match="below minimum"):
            prune_vocab(corpus, vocab, target_size=5)


class TestTrainVocab:
    def test_frequent_pair_beats_reverse(self):
        corpus = ["abab"] * 10
        vocab = train_vocab(corpus, vocab_size=11, seed_size=7)
        scored = vocab.scored_body()
        assert "ab" in scored and "ba" in scored
        assert scored["ab"] > scored["ba"]
        # oracle: corpus likelihood drops if ab/ba probabilities are swapped
        swapped = dict(scored)
        swapped["ab"], swapped["ba"] = swapped["ba"], swapped["ab"]
        def corpus_ll(s):
            _, z = enumerate_expected_counts("abab", s)
            return 10 * math.log(z)
        assert corpus_ll(scored) > corpus_ll(swapped)

    def test_single_character_corpus(self):
        vocab = train_vocab(["a"], vocab_size=5)
        assert [p for p, _ in vocab.pieces] == list(RESERVED_PIECES) + ["a"]

    def test_deterministic_retraining_byte_identical(self, tmp_path):
        corpus = pt_corpus(60, seed=9)
        p1, p2 = tmp_path / "v1.tsv", tmp_path / "v2.tsv"
        train_vocab(corpus, vocab_size=80).save(p1)
        train_vocab(corpus, vocab_size=80).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_trained_invariants(self):
        corpus = pt_corpus(80, seed=11)
        vocab = train_vocab(corpus, vocab_size=120)
        body = vocab.scored_body()
        assert all(math.isfinite(lp) and lp < 0 for lp in body.values())
        assert sum(math.exp(lp) for lp in body.values()) == pytest.approx(1.0, abs=1e-6)
        chars = {ch for line in corpus for ch in line.replace(" ", BOUNDARY)}
        assert chars <= set(body)

    def test_vocab_size_too_small(self):
        with pytest.raises(ValueError, match="cannot cover"):
            train_vocab(["abcdef"], vocab_size=6)


class TestEncode:
    def test_single_piece_beats_two(self):
        vocab = make_vocab({"a": math.log(0.5), "b": math.log(0.25),
                            "ab": math.log(0.25)})
        ids = encode(vocab, "ab")
        assert [vocab.piece(i) for i in ids] == ["ab"]

    def test_empty_string(self):
        vocab = make_vocab({"a": math.log(1.0)})
        assert encode(vocab, "") == []

    def test_unknown_character_maps_to_unk(self):
        vocab = make_vocab({"a": math.log(1.0)})
        assert encode(vocab, "aXa") == [vocab.id_of("a"), UNK_ID, vocab.id_of("a")]

    def test_reserved_ids_never_emitted_for_covered_text(self):
        corpus = pt_corpus(50, seed=13)
        vocab = train_vocab(corpus, vocab_size=90)
        for line in corpus[:20]:
            assert all(i > MASK_ID for i in encode(vocab, line))

    def test_tie_break_fewer_pieces_then_lexicographic(self):
        # p(ab) == p(a)*p(b): equal mass, the single-piece path wins
        vocab = make_vocab({"a": math.log(0.5), "b": math.log(0.5),
                            "ab": math.log(0.25)})
        ids = encode(vocab, "ab")
        assert [vocab.piece(i) for i in ids] == ["ab"]
        # equal mass and equal piece count: lexicographically smaller sequence
        vocab2 = make_vocab({"a": math.log(0.25), "b": math.log(0.25),
                             "x": math.log(0.25), "ax": math.log(0.25),
                             "xb": math.log(0.25)})
        ids2 = encode(vocab2, "axb")
        # [a, xb] vs [ax, b]: both 0.0625 with two pieces; "a" < "ax"
        assert [vocab2.piece(i) for i in ids2] == ["a", "xb"]

    def test_viterbi_matches_exhaustive_oracle(self):
        rng = random.Random(101)
        alphabet = "abc"
        for trial in range(500):
            # vocab of <= 20 pieces always covering the single characters
            pieces = {ch: None for ch in alphabet}
            while len(pieces) < rng.randrange(4, 21):
                ln = rng.randrange(2, 5)
                pieces["".join(rng.choice(alphabet) for _ in range(ln))] = None
            raw = {p: rng.random() + 0.05 for p in pieces}
            total = sum(raw.values())
            scored = {p: math.log(v / total) for p, v in raw.items()}
            vocab = make_vocab(scored)
            s = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 13)))
            got = tuple(vocab.piece(i) for i in encode(vocab, s))
            want = best_segmentation(s, scored)
            assert got == want, f"trial {trial}: {s} -> {got} vs {want}"


class TestDecode:
    def test_round_trip(self):
        corpus = pt_corpus(60, seed=17)
        vocab = train_vocab(corpus, vocab_size=100)
        s = "olá mundo"
        covered = {ch for line in corpus for ch in line}
        if all(ch in covered for ch in s):
            assert decode(vocab, encode(vocab, s)) == s

    def test_empty(self):
        vocab = make_vocab({"a": math.log(1.0)})
        assert decode(vocab, []) == ""

    def test_pad_suffix_stripped(self):
        vocab = make_vocab({"a": math.log(1.0)})
        ids = encode(vocab, "aa") + [PAD_ID, PAD_ID]
        assert decode(vocab, ids) == "aa"

    def test_out_of_range_id(self):
        vocab = make_vocab({"a": math.log(1.0)})
        with pytest.raises(ValueError, match="out of range"):
            decode(vocab, [len(vocab)])

    def test_interior_pad_rejected(self):
        vocab = make_vocab({"a": math.log(1.0)})
        with pytest.raises(ValueError, match="padding"):
            decode(vocab, [vocab.id_of("a"), PAD_ID, vocab.id_of("a")])

    def test_eos_skipped(self):
        vocab = make_vocab({"a": math.log(1.0)})
        assert decode(vocab, [vocab.id_of("a"), EOS_ID]) == "a"

    def test_round_trip_fuzz_10k(self):
        corpus = pt_corpus(80, seed=19)
        vocab = train_vocab(corpus, vocab_size=150)
        chars = sorted({ch for line in corpus for ch in line})
        rng = random.Random(999)
        failures = 0
        for _ in range(10_000):
            n = rng.randrange(0, 24)
            s = "".join(rng.choice(chars) for _ in range(n)).strip()
            if decode(vocab, encode(vocab, s)) != s:
                failures += 1
        assert failures == 0


class TestVocabFile:
    def test_format_and_round_trip(self, tmp_path):
        corpus = pt_corpus(40, seed=21)
        vocab = train_vocab(corpus, vocab_size=60)
        path = tmp_path / "vocab.tsv"
        vocab.save(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "<pad>\t0"
        assert lines[1] == "</s>\t0"
        assert lines[2] == "<unk>\t0"
        assert lines[3] == "<M>\t0"
        for line in lines[4:]:
            piece, lp = line.split("\t")
            assert float(lp) < 0
        loaded = UnigramVocab.load(path)
        assert loaded.pieces == vocab.pieces
        path2 = tmp_path / "again.tsv"
        loaded.save(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_reserved_header_enforced(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\t0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="reserved"):
            UnigramVocab.load(path)
