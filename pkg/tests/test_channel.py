import itertools
import math

import numpy as np
import pytest

from ptforge import channel, fst, ngram
from ptforge.errors import ContractError, DataError, EmptyLatticeError, SymbolTableMismatch

from conftest import enumerate_paths, log_add, pair_totals


def bundle(*transcripts):
    return channel.TranscriptBundle("utt0000", tuple(transcripts))


def letters_for(*transcripts):
    return ngram.vocab_table(ch for t in transcripts for ch in t)


def slot_symbols(cn, slot):
    return {
        ("<skip>" if opt == channel.SKIP else cn.letters.symbol(opt)): p
        for opt, p in cn.slots[slot].items()
    }


class TestMergeTranscripts:
    def test_unanimous(self):
        letters = letters_for("abc")
        cn = channel.merge_transcripts(bundle("abc", "abc", "abc"), letters)
        assert len(cn.slots) == 3
        for i, ch in enumerate("abc"):
            assert slot_symbols(cn, i) == {ch: pytest.approx(1.0)}

    def test_substitution_splits_slot(self):
        letters = letters_for("ab", "ac")
        cn = channel.merge_transcripts(bundle("ab", "ac"), letters, prune_mass=1.0)
        assert slot_symbols(cn, 0) == {"a": pytest.approx(1.0)}
        assert slot_symbols(cn, 1) == {"b": pytest.approx(0.5), "c": pytest.approx(0.5)}

    def test_deletion_becomes_skip(self):
        letters = letters_for("ab")
        cn = channel.merge_transcripts(bundle("ab", "b"), letters)
        assert slot_symbols(cn, 0) == {"a": pytest.approx(0.5), "<skip>": pytest.approx(0.5)}
        assert slot_symbols(cn, 1) == {"b": pytest.approx(1.0)}

    def test_insertion_gives_prior_annotators_skip_votes(self):
        letters = letters_for("ab")
        cn = channel.merge_transcripts(bundle("b", "ab"), letters)
        assert slot_symbols(cn, 0) == {"a": pytest.approx(0.5), "<skip>": pytest.approx(0.5)}
        assert slot_symbols(cn, 1) == {"b": pytest.approx(1.0)}

    def test_pruning_lowest_first_then_renormalize(self):
        letters = letters_for("ab", "ac", "ad")
        cn = channel.merge_transcripts(bundle("ab", "ac", "ad"), letters, prune_mass=0.6)
        assert slot_symbols(cn, 1) == {"b": pytest.approx(0.5), "c": pytest.approx(0.5)}

    def test_slots_always_normalized(self):
        rng = np.random.default_rng(9)
        alphabet = "abcd"
        letters = ngram.vocab_table(alphabet)
        for _ in range(40):
            n = int(rng.integers(1, 6))
            transcripts = tuple(
                "".join(alphabet[int(rng.integers(4))] for _ in range(int(rng.integers(1, 7))))
                for _ in range(n)
            )
            mass = float(rng.uniform(0.3, 1.0))
            cn = channel.merge_transcripts(bundle(*transcripts), letters, prune_mass=mass)
            cn.validate()

    def test_identical_transcripts_permutation_invariant(self):
        letters = letters_for("ab", "cd")
        a = channel.merge_transcripts(bundle("ab", "ab", "cd"), letters)
        b = channel.merge_transcripts(bundle("ab", "cd", "ab"), letters)
        assert a.slots == b.slots

    def test_empty_bundle_rejected(self):
        with pytest.raises(ContractError):
            channel.TranscriptBundle("u", ())

    def test_prune_mass_range_checked(self):
        with pytest.raises(ContractError):
            channel.merge_transcripts(bundle("a"), letters_for("a"), prune_mass=0.0)


class TestBundleFormat:
    def test_blank_line_separated_blocks(self):
        text = "ab\nac\n\nb\nbb\n"
        bundles = channel.parse_transcript_bundles(text)
        assert [b.transcripts for b in bundles] == [("ab", "ac"), ("b", "bb")]
        assert bundles[0].utterance_id == "utt0000"
        assert channel.parse_transcript_bundles(channel.write_transcript_bundles(bundles)) == bundles


class TestConfnetFst:
    def test_single_slot_single_arc(self):
        letters = letters_for("a")
        cn = channel.ConfusionNetwork([{letters.id("a"): 1.0}], letters)
        m = channel.confnet_to_fst(cn)
        assert m.num_states == 2 and m.num_arcs == 1
        (arc,) = list(m.arcs())
        assert arc.weight == fst.ONE

    def test_split_slot_parallel_arcs(self):
        letters = letters_for("bc")
        cn = channel.ConfusionNetwork([{letters.id("b"): 0.5, letters.id("c"): 0.5}], letters)
        m = channel.confnet_to_fst(cn)
        assert [a.weight for a in m.arcs()] == pytest.approx([-math.log(0.5)] * 2)

    def test_total_path_mass_is_one(self):
        letters = letters_for("ab")
        cn = channel.merge_transcripts(bundle("ab", "a", "bb"), letters)
        m = channel.confnet_to_fst(cn)
        total = fst.ZERO
        for _, _, w in enumerate_paths(m):
            total = log_add(total, w)
        assert total == pytest.approx(fst.ONE, abs=1e-9)

    def test_roundtrip_through_fst(self):
        letters = letters_for("ab")
        cn = channel.merge_transcripts(bundle("ab", "b"), letters)
        again = channel.confnet_from_fst(channel.confnet_to_fst(cn), letters)
        for got, want in zip(again.slots, cn.slots):
            assert set(got) == set(want)
            for opt in got:
                assert got[opt] == pytest.approx(want[opt], abs=1e-12)


def sample_channel_pairs(rng, emissions, n_pairs, max_len=4):
    """Draw (phone seq, letter string) samples from a known chunk channel."""
    phones = sorted(emissions)
    pairs = []
    for _ in range(n_pairs):
        seq = [phones[int(rng.integers(len(phones)))] for _ in range(int(rng.integers(1, max_len + 1)))]
        text = "".join(
            _draw(rng, emissions[p]) for p in seq
        )
        if text:
            pairs.append((seq, text))
    return pairs


def _draw(rng, pmf):
    opts = sorted(pmf)
    probs = np.array([pmf[o] for o in opts])
    return opts[int(rng.choice(len(opts), p=probs / probs.sum()))]


class TestChannelEm:
    def test_identity_cipher_recovered(self):
        rng = np.random.default_rng(17)
        cipher = {"p1": "x", "p2": "y", "p3": "z"}
        pairs = []
        for _ in range(200):
            seq = [f"p{int(rng.integers(1, 4))}" for _ in range(int(rng.integers(1, 7)))]
            pairs.append((seq, "".join(cipher[p] for p in seq)))
        model = channel.train_channel_em(pairs, iterations=15, seed=0)
        for phone, letter in cipher.items():
            pmf = model.emissions[model.phones.id(phone)]
            assert pmf.get(letter, 0.0) >= 0.99

    def test_synthetic_two_letter_channel_recovered(self):
        rng = np.random.default_rng(23)
        draws = rng.random(10_000)
        pairs = [(["p1"], "x" if d < 0.7 else "y") for d in draws]
        model = channel.train_channel_em(pairs, iterations=10, seed=1)
        pmf = model.emissions[model.phones.id("p1")]
        assert pmf["x"] == pytest.approx(0.7, abs=0.02)
        assert pmf["y"] == pytest.approx(0.3, abs=0.02)

    def test_single_pair_forced_alignment(self):
        model = channel.train_channel_em([(["p1"], "ab")], iterations=5, seed=0)
        pmf = model.emissions[model.phones.id("p1")]
        assert pmf["ab"] == pytest.approx(1.0)

    def test_loglik_nondecreasing_on_random_data(self):
        rng = np.random.default_rng(31)
        for trial in range(6):
            emissions = {
                "p1": {"x": 0.5, "xy": 0.3, "": 0.2},
                "p2": {"y": 0.6, "z": 0.4},
            }
            pairs = sample_channel_pairs(rng, emissions, 30)
            model = channel.train_channel_em(pairs, iterations=12, seed=trial)
            hist = model.loglik_history
            assert len(hist) == 13
            for prev, cur in zip(hist, hist[1:]):
                assert cur >= prev - 1e-10

    def test_infeasible_pair_rejected_with_indices(self):
        pairs = [(["p1"], "x"), (["p1"], "abcdef")]
        with pytest.raises(DataError) as exc:
            channel.train_channel_em(pairs, iterations=1)
        assert exc.value.data["indices"] == [1]


class TestChannelFst:
    def hand_model(self):
        phones = ngram.vocab_table(["p1", "p2"])
        letters = ngram.vocab_table(["x", "y"])
        emissions = {
            phones.id("p1"): {"x": 0.7, "y": 0.3},
            phones.id("p2"): {"xy": 0.5, "": 0.5},
        }
        return channel.ChannelModel(phones, letters, emissions)

    def test_pair_weight_matches_model(self):
        m = self.hand_model()
        f = channel.channel_to_fst(m)
        p1 = m.phones.id("p1")
        x = m.letters.id("x")
        assert fst.total_weight(f, (p1,), (x,), max_arcs=4) == pytest.approx(-math.log(0.7))

    def test_multi_letter_chunk_is_a_path(self):
        m = self.hand_model()
        f = channel.channel_to_fst(m)
        p2 = m.phones.id("p2")
        xy = m.letters.ids("xy")
        assert fst.total_weight(f, (p2,), xy, max_arcs=4) == pytest.approx(-math.log(0.5))

    def test_deletion_chunk_emits_nothing(self):
        m = self.hand_model()
        f = channel.channel_to_fst(m)
        p2 = m.phones.id("p2")
        assert fst.total_weight(f, (p2,), (), max_arcs=4) == pytest.approx(-math.log(0.5))

    def test_monotone_relation_only(self):
        m = self.hand_model()
        f = channel.channel_to_fst(m)
        p1 = m.phones.id("p1")
        assert fst.total_weight(f, (p1,), m.letters.ids("xy"), max_arcs=4) == fst.ZERO


def one_letter_channel(phones, letters, table_p, table_l):
    """Channel whose chunks are single letters; alignment is unambiguous."""
    emissions = {}
    for phone, pmf in phones.items():
        emissions[table_p.id(phone)] = dict(pmf)
    return channel.ChannelModel(table_p, table_l, emissions)


class TestDecodePt:
    def toy(self):
        table_p = ngram.vocab_table(["p", "q"])
        table_l = ngram.vocab_table(["x", "y"])
        chan = one_letter_channel(
            {"p": {"x": 0.8, "y": 0.2}, "q": {"x": 0.3, "y": 0.7}},
            None,
            table_p,
            table_l,
        )
        return table_p, table_l, chan

    def test_identity_channel_inverts_transcript(self):
        table_p = ngram.vocab_table(["p", "q"])
        table_l = ngram.vocab_table(["x", "y"])
        chan = one_letter_channel({"p": {"x": 1.0}, "q": {"y": 1.0}}, None, table_p, table_l)
        cn = channel.ConfusionNetwork(
            [{table_l.id("x"): 1.0}, {table_l.id("y"): 1.0}], table_l
        )
        pt = channel.decode_pt(cn, chan, None, ngram.uniform_bigram(table_p))
        best = channel.best_path_pt(pt)
        assert table_p.strings(best.labels) == ("p", "q")

    def test_matches_exhaustive_objective(self):
        table_p, table_l, chan = self.toy()
        rng = np.random.default_rng(3)
        phone_lm = ngram.train_bigram(
            [["p", "q"], ["q", "q", "p"], ["p"]], smoothing="witten-bell", vocab=table_p
        )
        letter_lm = ngram.train_bigram(
            [["x", "y"], ["y", "x"]], smoothing="witten-bell", vocab=table_l
        )
        slots = []
        for _ in range(2):
            p = float(rng.uniform(0.2, 0.8))
            slots.append({table_l.id("x"): p, table_l.id("y"): 1 - p})
        cn = channel.ConfusionNetwork(slots, table_l)
        pt = channel.decode_pt(cn, chan, letter_lm, phone_lm, max_phones=3)
        best = channel.best_path_pt(pt)

        def objective(phone_seq):
            best_lam = -math.inf
            for lam in itertools.product(["x", "y"], repeat=len(slots)):
                p_lam_t = 1.0
                for slot, ch in zip(slots, lam):
                    p_lam_t *= slot.get(table_l.id(ch), 0.0)
                if len(lam) != len(phone_seq):
                    continue
                p_lam_pi = 1.0
                for ph, ch in zip(phone_seq, lam):
                    p_lam_pi *= chan.emissions[table_p.id(ph)].get(ch, 0.0)
                score = (
                    math.log(p_lam_pi)
                    + math.log(p_lam_t)
                    - ngram.score_sequence(letter_lm, lam)
                    + ngram.score_sequence(phone_lm, phone_seq)
                    if p_lam_pi > 0 and p_lam_t > 0
                    else -math.inf
                )
                best_lam = max(best_lam, score)
            return best_lam

        candidates = [
            seq
            for n in range(1, 4)
            for seq in itertools.product(["p", "q"], repeat=n)
        ]
        expected = max(sorted(candidates), key=objective)
        assert table_p.strings(best.labels) == expected
        assert -best.weight == pytest.approx(objective(expected), abs=1e-9)

    def test_unsupported_letters_raise_empty_lattice(self):
        table_p = ngram.vocab_table(["p"])
        table_l = ngram.vocab_table(["x", "y"])
        chan = one_letter_channel({"p": {"x": 1.0}}, None, table_p, table_l)
        cn = channel.ConfusionNetwork([{table_l.id("y"): 1.0}], table_l)
        with pytest.raises(EmptyLatticeError) as exc:
            channel.decode_pt(cn, chan, None, ngram.uniform_bigram(table_p))
        assert exc.value.data["letters_without_channel_support"] == ["y"]

    def test_table_mismatch_rejected(self):
        table_p, table_l, chan = self.toy()
        other = ngram.vocab_table(["x", "y", "z"])
        cn = channel.ConfusionNetwork([{other.id("x"): 1.0}], other)
        with pytest.raises(SymbolTableMismatch):
            channel.decode_pt(cn, chan, None, ngram.uniform_bigram(table_p))

    def test_depends_only_on_confusion_network(self):
        table_p, table_l, chan = self.toy()
        lm = ngram.uniform_bigram(table_p)
        letters = table_l
        cn_a = channel.merge_transcripts(bundle("xy", "xy"), letters)
        cn_b = channel.merge_transcripts(bundle("xy", "xy", "xy"), letters)
        assert cn_a.slots == cn_b.slots
        lat_a = channel.decode_pt(cn_a, chan, None, lm)
        lat_b = channel.decode_pt(cn_b, chan, None, lm)
        assert fst.write_fst_text(lat_a.fst) == fst.write_fst_text(lat_b.fst)


class TestChannelTsv:
    def test_roundtrip(self):
        phones = ngram.vocab_table(["p1", "p2"])
        letters = ngram.vocab_table(["x", "y"])
        m = channel.ChannelModel(
            phones,
            letters,
            {
                phones.id("p1"): {"x": 0.25, "y": 0.75},
                phones.id("p2"): {"": 0.5, "xy": 0.5},
            },
        )
        text = m.to_tsv(header="tool 0.1.0 | train-channel | seed=0")
        again = channel.ChannelModel.from_tsv(text, phones, letters)
        assert again.to_tsv(header="tool 0.1.0 | train-channel | seed=0") == text
        assert again.emissions == m.emissions
