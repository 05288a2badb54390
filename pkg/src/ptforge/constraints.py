"""Minimally-resourced target-language constraints compiled to transducers.

A rule table maps grapheme strings to unweighted pronunciations; a word
list or a word bigram supplies the lexical level.  Constraints are applied
to a phone lattice by composing an inverse pronouncer, the word acceptor
and the pronouncer around it, then projecting back to phones, so only
phone strings that spell valid word sequences survive.  Word boundaries in
the grapheme tape use the reserved '#' symbol, consumed silently by the
pronouncers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

from . import fst, ngram
from .channel import PtLattice
from .errors import ContractError, DataError, EmptyLatticeError, ParseError

BOUNDARY = "#"


@dataclass(frozen=True)
class G2PRuleSet:
    """Unweighted grapheme -> pronunciations map; keys may span several
    characters (digraphs) and pronunciations may be empty (silent)."""

    rules: dict[str, tuple[tuple[str, ...], ...]]

    def __post_init__(self):
        if not self.rules:
            raise ContractError("rule set is empty")
        for g in self.rules:
            if not g or BOUNDARY in g:
                raise DataError(f"bad grapheme key {g!r}")

    def grapheme_chars(self) -> list[str]:
        return sorted({ch for g in self.rules for ch in g})

    def phone_symbols(self) -> list[str]:
        return sorted({p for prons in self.rules.values() for pron in prons for p in pron})


@dataclass(frozen=True)
class WordList:
    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words:
            raise ContractError("word list is empty")
        if len(set(self.words)) != len(self.words):
            raise DataError("word list contains duplicates")
        if any(BOUNDARY in w for w in self.words):
            raise DataError("words may not contain the boundary symbol")


@dataclass(frozen=True)
class PronDict:
    """word -> ordered pronunciation variants (first one is primary)."""

    pronunciations: dict[str, tuple[tuple[str, ...], ...]]

    def __post_init__(self):
        for w, prons in self.pronunciations.items():
            if not prons:
                raise DataError(f"dictionary word {w!r} has no pronunciations")


@dataclass(frozen=True)
class PhoneInventory:
    phones: frozenset[str]

    def __post_init__(self):
        if not self.phones:
            raise ContractError("phone inventory is empty")


# -- parsing ---------------------------------------------------------------


def parse_g2p_rules(text: str, phones: Optional[fst.SymbolTable] = None) -> G2PRuleSet:
    """TSV rule file: ``grapheme<TAB>space-separated phones``; '#' opens a
    comment line; an empty phone column is a silent grapheme."""
    rules: dict[str, set[tuple[str, ...]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected 'grapheme<TAB>phones'", line=lineno)
        grapheme, phones_str = parts
        if not grapheme or any(ch.isspace() for ch in grapheme):
            raise ParseError(f"bad grapheme {grapheme!r}", line=lineno)
        pron = tuple(phones_str.split())
        if phones is not None:
            unknown = [p for p in pron if p not in phones]
            if unknown:
                raise ParseError(f"unknown phone symbol(s) {unknown}", line=lineno)
        rules.setdefault(grapheme, set()).add(pron)
    if not rules:
        raise ParseError("rule file contains no rules")
    return G2PRuleSet({g: tuple(sorted(prons)) for g, prons in sorted(rules.items())})


def parse_word_list(text: str) -> WordList:
    words = []
    seen = set()
    for _lineno, line in fst.data_lines(text):
        w = line.strip()
        if w and w not in seen:
            seen.add(w)
            words.append(w)
    return WordList(tuple(words))


def parse_pron_dict(text: str, phones: Optional[fst.SymbolTable] = None) -> PronDict:
    """TSV ``word<TAB>space-separated phones``, repeated lines for variants."""
    prons: dict[str, list[tuple[str, ...]]] = {}
    for lineno, line in fst.data_lines(text):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected 'word<TAB>phones'", line=lineno)
        word, phones_str = parts
        pron = tuple(phones_str.split())
        if not pron:
            raise ParseError(f"word {word!r} has an empty pronunciation", line=lineno)
        if phones is not None:
            unknown = [p for p in pron if p not in phones]
            if unknown:
                raise ParseError(f"unknown phone symbol(s) {unknown}", line=lineno)
        variants = prons.setdefault(word, [])
        if pron not in variants:
            variants.append(pron)
    if not prons:
        raise ParseError("dictionary file contains no entries")
    return PronDict({w: tuple(v) for w, v in prons.items()})


def parse_phone_inventory(text: str) -> PhoneInventory:
    return PhoneInventory(frozenset(sym for _l, line in fst.data_lines(text) for sym in line.split()))


# -- table helpers ---------------------------------------------------------


def grapheme_table(rules: G2PRuleSet, extra_words: Iterable[str] = ()) -> fst.SymbolTable:
    chars = set(rules.grapheme_chars())
    for w in extra_words:
        chars.update(w)
    return fst.SymbolTable(sorted(chars) + [BOUNDARY])


# -- compilation to transducers ---------------------------------------------


def g2p_to_fst(
    rules: G2PRuleSet,
    graphemes: fst.SymbolTable,
    phones: fst.SymbolTable,
    boundary: bool = True,
) -> fst.Wfst:
    """Closure over single-rule paths: maps any concatenation of rule
    graphemes to any corresponding concatenation of pronunciations, all
    unweighted.  All segmentations coexist; nothing is matched greedily.
    With boundary=True the word separator is consumed silently."""
    out = fst.Wfst(graphemes, phones)
    hub = out.add_state()
    out.set_start(hub)
    out.set_final(hub, fst.ONE)
    for grapheme, prons in sorted(rules.rules.items()):
        g_ids = graphemes.ids(grapheme)
        for pron in prons:
            p_ids = phones.ids(pron)
            n = max(len(g_ids), len(p_ids))
            prev = hub
            for i in range(n):
                il = g_ids[i] if i < len(g_ids) else fst.EPSILON_ID
                ol = p_ids[i] if i < len(p_ids) else fst.EPSILON_ID
                dst = hub if i == n - 1 else out.add_state()
                out.add_arc(prev, il, ol, fst.ONE, dst)
                prev = dst
    if boundary and BOUNDARY in graphemes:
        out.add_arc(hub, graphemes.id(BOUNDARY), fst.EPSILON_ID, fst.ONE, hub)
    return out


def rule_pronunciations(rules: G2PRuleSet, word: str) -> list[tuple[str, ...]]:
    """Every pronunciation of a word attested by the rules, across all
    segmentations, sorted lexicographically; empty when uncoverable."""

    @lru_cache(maxsize=None)
    def expand(suffix: str) -> frozenset[tuple[str, ...]]:
        if not suffix:
            return frozenset({()})
        results = set()
        for grapheme, prons in rules.rules.items():
            if suffix.startswith(grapheme):
                for tail in expand(suffix[len(grapheme):]):
                    for pron in prons:
                        results.add(tuple(pron) + tail)
        return frozenset(results)

    return sorted(expand(word))


def build_word_lm(words: WordList, graphemes: fst.SymbolTable) -> fst.Wfst:
    """Unweighted acceptor of '#'-separated sequences of listed words:
    every word equally likely, any number of words."""
    out = fst.Wfst(graphemes, graphemes)
    hub = out.add_state()
    end = out.add_state()
    out.set_start(hub)
    out.set_final(end, fst.ONE)
    for word in sorted(words.words):
        ids = graphemes.ids(word)
        prev = hub
        for i, label in enumerate(ids):
            dst = end if i == len(ids) - 1 else out.add_state()
            out.add_arc(prev, label, label, fst.ONE, dst)
            prev = dst
    out.add_arc(end, graphemes.id(BOUNDARY), graphemes.id(BOUNDARY), fst.ONE, hub)
    return out


def spell_word_acceptor(model: ngram.BigramModel, graphemes: fst.SymbolTable) -> fst.Wfst:
    """Grapheme-level rendering of a word bigram model: every word arc is
    spelled out and words are separated by '#'; weights stay on the first
    letter of each word."""
    fsa = ngram.bigram_to_fsa(model)
    out = fst.Wfst(graphemes, graphemes)
    out.add_states(fsa.num_states)
    out.set_start(fsa.start)
    boundary = graphemes.id(BOUNDARY)
    for state, w in fsa.finals.items():
        out.set_final(state, w)
    for arc in fsa.arcs():
        word = model.vocab.symbol(arc.ilabel)
        ids = graphemes.ids(word)
        prev = arc.src
        if arc.src != fsa.start:
            mid = out.add_state()
            out.add_arc(prev, boundary, boundary, arc.weight, mid)
            prev = mid
            carry = fst.ONE
        else:
            carry = arc.weight
        for i, label in enumerate(ids):
            dst = arc.dst if i == len(ids) - 1 else out.add_state()
            out.add_arc(prev, label, label, carry if i == 0 else fst.ONE, dst)
            prev = dst
    return out


def _non_dict_word_acceptor(words: Sequence[str], graphemes: fst.SymbolTable) -> fst.Wfst:
    """Complete DFA accepting every nonempty word-internal grapheme string
    that is not a dictionary word (trie of the dictionary, completed with a
    sink, finality flipped)."""
    chars = [i for i in range(1, len(graphemes.symbols)) if graphemes.symbol(i) != BOUNDARY]
    out = fst.Wfst(graphemes, graphemes)
    root = out.add_state()
    out.set_start(root)
    trie: dict[str, int] = {"": root}
    for w in sorted(words):
        for i in range(1, len(w) + 1):
            if w[:i] not in trie:
                trie[w[:i]] = out.add_state()
    sink = out.add_state()
    for prefix, state in trie.items():
        for c in chars:
            child = trie.get(prefix + graphemes.symbol(c))
            out.add_arc(state, c, c, fst.ONE, child if child is not None else sink)
    for c in chars:
        out.add_arc(sink, c, c, fst.ONE, sink)
    word_states = {trie[w] for w in words}
    for prefix, state in trie.items():
        if state != root and state not in word_states:
            out.set_final(state, fst.ONE)
    out.set_final(sink, fst.ONE)
    return out


def build_dict_fst(
    pron_dict: PronDict,
    fallback: Optional[G2PRuleSet],
    graphemes: fst.SymbolTable,
    phones: fst.SymbolTable,
) -> fst.Wfst:
    """Word-segmented pronouncer: dictionary words map only to their listed
    pronunciations; anything else between boundaries goes through the
    fallback rules.  Words covered by neither simply have no path."""
    out = fst.Wfst(graphemes, phones)
    hub = out.add_state()
    end = out.add_state()
    out.set_start(hub)
    out.set_final(end, fst.ONE)
    for word in sorted(pron_dict.pronunciations):
        g_ids = graphemes.ids(word)
        for pron in pron_dict.pronunciations[word]:
            p_ids = phones.ids(pron)
            n = max(len(g_ids), len(p_ids))
            prev = hub
            for i in range(n):
                il = g_ids[i] if i < len(g_ids) else fst.EPSILON_ID
                ol = p_ids[i] if i < len(p_ids) else fst.EPSILON_ID
                dst = end if i == n - 1 else out.add_state()
                out.add_arc(prev, il, ol, fst.ONE, dst)
                prev = dst
    if fallback is not None:
        oov_gate = _non_dict_word_acceptor(sorted(pron_dict.pronunciations), graphemes)
        oov = fst.compose(
            oov_gate, g2p_to_fst(fallback, graphemes, phones, boundary=False)
        )
        offset = out.num_states
        out.add_states(oov.num_states)
        for arc in oov.arcs():
            out.add_arc(offset + arc.src, arc.ilabel, arc.olabel, arc.weight, offset + arc.dst)
        if oov.start is not None:
            out.add_arc(hub, fst.EPSILON_ID, fst.EPSILON_ID, fst.ONE, offset + oov.start)
            for state, w in oov.finals.items():
                out.add_arc(offset + state, fst.EPSILON_ID, fst.EPSILON_ID, w, end)
    out.add_arc(end, graphemes.id(BOUNDARY), fst.EPSILON_ID, fst.ONE, hub)
    return out


def uncovered_words(
    words: Iterable[str], pron_dict: Optional[PronDict], rules: Optional[G2PRuleSet]
) -> list[str]:
    """Words a dict+rules pronouncer cannot map at all (for reporting)."""
    out = []
    for w in words:
        if pron_dict is not None and w in pron_dict.pronunciations:
            continue
        if rules is not None and rule_pronunciations(rules, w):
            continue
        out.append(w)
    return sorted(out)


# -- constraint application --------------------------------------------------


def constrain_phoneme_inventory(pt: PtLattice, inventory: PhoneInventory) -> PtLattice:
    """Keep exactly the lattice paths whose phones all lie in the
    inventory, with their weights untouched."""
    table = pt.fst.isyms
    unknown = sorted(p for p in inventory.phones if p not in table)
    if unknown:
        raise DataError(f"inventory phones missing from the phone table: {unknown}")
    keep_ids = sorted(table.id(p) for p in inventory.phones)
    filt = fst.loop_acceptor(table, keep_ids)
    out = fst.compose(pt.fst, filt, semiring=pt.semiring)
    if out.start is None:
        offending = sorted(
            table.symbol(l) for l in pt.phone_labels() if table.symbol(l) not in inventory.phones
        )
        raise EmptyLatticeError(
            "no lattice path survives the phoneme inventory",
            offending_phones=offending,
        )
    return PtLattice(out, semiring=pt.semiring)


def constrain_lexicon(
    pt: PtLattice,
    g2p: fst.Wfst,
    lm: fst.Wfst,
    discount_lm: bool = True,
) -> PtLattice:
    """Restrict a lattice to pronunciations of word sequences the word
    acceptor admits.

    The pronouncer's weights are always discounted (its structure is the
    constraint); the word acceptor's weights are discounted too unless
    discount_lm is off, in which case they rescore the surviving paths.
    """
    if lm.osyms != g2p.isyms:
        raise ContractError("word acceptor and pronouncer must share the grapheme table")
    pronouncer = fst.discount_weights(g2p)
    word_machine = fst.discount_weights(lm) if discount_lm else lm
    step = fst.compose(pronouncer, pt.fst, semiring=pt.semiring)
    step = fst.compose(word_machine, step, semiring=pt.semiring)
    step = fst.compose(fst.invert(pronouncer), step, semiring=pt.semiring)
    out = fst.project(step, "output")
    if out.start is None:
        raise EmptyLatticeError("no lattice path spells an admissible word sequence")
    return PtLattice(out, semiring=pt.semiring)
