"""Smoothed bigram language models over arbitrary symbol vocabularies.

A model is trained from sequences of symbols and answers conditional
probabilities p(y|x) where x ranges over symbols plus the sentence-start
marker and y over symbols plus the sentence-end marker.  Every conditional
distribution normalizes over that continuation space, including the end
transition, which is what makes the compiled acceptor's outgoing mass sum
to one at every state.

Witten-Bell smoothing interpolates observed bigram counts with a unigram
distribution over continuation events (itself interpolated with the uniform
distribution so that every vocabulary symbol keeps positive mass):

    p(y|x) = (c(x,y) + T(x) * p1(y)) / (c(x) + T(x))
    p1(y)  = (c1(y) + T1 / V) / (N1 + T1)

with T(x) the number of distinct continuations of x, c1/N1/T1 the
continuation counts, event total and type count, and V the continuation
vocabulary size.  add-k uses (c(x,y) + k) / (c(x) + k * V); k = 0 is the
unsmoothed maximum-likelihood estimate and may legitimately return zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import fst
from .errors import ContractError, DataError, ParseError

WITTEN_BELL = "witten-bell"
ADD_K = "add-k"


def vocab_table(symbols: Iterable[str]) -> fst.SymbolTable:
    """Canonical model vocabulary: sorted symbols, then the two markers."""
    return fst.SymbolTable(sorted(set(symbols)) + [fst.BOS, fst.EOS])


@dataclass
class BigramModel:
    """Bigram probabilities plus the count statistics they came from."""

    vocab: fst.SymbolTable
    smoothing: str
    k: Optional[float]
    bigram_counts: dict[tuple[int, int], int]
    cond: dict[tuple[int, int], float] = field(repr=False, default_factory=dict)
    unigram: dict[int, float] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        self.bos = self.vocab.id(fst.BOS)
        self.eos = self.vocab.id(fst.EOS)
        self._context_total: dict[int, int] = {}
        self._context_types: dict[int, int] = {}
        for (x, _y), c in self.bigram_counts.items():
            self._context_total[x] = self._context_total.get(x, 0) + c
            self._context_types[x] = self._context_types.get(x, 0) + 1
        if not self.unigram:
            self.unigram = self._continuation_unigram()
        if not self.cond:
            self.cond = {key: self._smoothed(*key) for key in self.bigram_counts}

    # continuation space: every real symbol plus the end marker
    def continuation_ids(self) -> list[int]:
        return [i for i in range(1, len(self.vocab.symbols)) if i != self.bos]

    def context_ids(self) -> list[int]:
        return [i for i in range(1, len(self.vocab.symbols)) if i != self.eos]

    def _continuation_unigram(self) -> dict[int, float]:
        cont_counts: dict[int, int] = {}
        for (_x, y), c in self.bigram_counts.items():
            cont_counts[y] = cont_counts.get(y, 0) + c
        n1 = sum(cont_counts.values())
        t1 = len(cont_counts)
        v = len(self.continuation_ids())
        out = {}
        for y in self.continuation_ids():
            if n1 == 0:
                out[y] = 1.0 / v
            else:
                out[y] = (cont_counts.get(y, 0) + t1 / v) / (n1 + t1)
        return out

    def _smoothed(self, x: int, y: int) -> float:
        c_xy = self.bigram_counts.get((x, y), 0)
        c_x = self._context_total.get(x, 0)
        if self.smoothing == WITTEN_BELL:
            t_x = self._context_types.get(x, 0)
            if c_x == 0:
                return self.unigram[y]
            return (c_xy + t_x * self.unigram[y]) / (c_x + t_x)
        v = len(self.continuation_ids())
        denom = c_x + self.k * v
        if denom == 0:
            return 0.0
        return (c_xy + self.k) / denom

    def cond_prob(self, x: int, y: int) -> float:
        """p(y|x); x may be the start marker, y may be the end marker."""
        if x == self.eos or x == fst.EPSILON_ID:
            raise ContractError("end marker or epsilon cannot be a context")
        if y == self.bos or y == fst.EPSILON_ID:
            raise ContractError("start marker or epsilon cannot be a continuation")
        if (x, y) in self.cond:
            return self.cond[(x, y)]
        return self._smoothed(x, y)


def train_bigram(
    corpus: Sequence[Sequence[str]],
    smoothing: str = WITTEN_BELL,
    k: Optional[float] = None,
    vocab: Optional[fst.SymbolTable] = None,
) -> BigramModel:
    """Estimate a bigram model from symbol sequences.

    Counts include a start and an end transition per sequence.  When a
    vocabulary is supplied it must contain the markers, and any out-of-
    vocabulary corpus symbol is an error listing the offenders.
    """
    if not corpus or any(not seq for seq in corpus):
        raise ContractError("corpus and every sequence in it must be nonempty")
    if smoothing == WITTEN_BELL:
        if k is not None:
            raise ContractError("k only applies to add-k smoothing")
    elif smoothing == ADD_K:
        k = 0.0 if k is None else float(k)
        if k < 0:
            raise ContractError("k must be >= 0")
    else:
        raise ContractError(f"unknown smoothing {smoothing!r}")

    if vocab is None:
        vocab = vocab_table(s for seq in corpus for s in seq)
    else:
        if fst.BOS not in vocab or fst.EOS not in vocab:
            raise DataError("supplied vocabulary lacks the sentence markers")
        offenders = sorted({s for seq in corpus for s in seq if s not in vocab})
        if offenders:
            raise DataError(f"corpus symbols outside vocabulary: {offenders}", offenders=offenders)

    bos, eos = vocab.id(fst.BOS), vocab.id(fst.EOS)
    counts: dict[tuple[int, int], int] = {}
    for seq in corpus:
        prev = bos
        for sym in seq:
            cur = vocab.id(sym)
            if cur in (bos, eos):
                raise DataError(f"marker {sym!r} may not appear inside a sequence")
            counts[(prev, cur)] = counts.get((prev, cur), 0) + 1
            prev = cur
        counts[(prev, eos)] = counts.get((prev, eos), 0) + 1
    return BigramModel(vocab=vocab, smoothing=smoothing, k=k, bigram_counts=counts)


def uniform_bigram(vocab: fst.SymbolTable) -> BigramModel:
    """Model with no observations: add-one smoothing makes every
    continuation equally likely in every context."""
    return BigramModel(vocab=vocab, smoothing=ADD_K, k=1.0, bigram_counts={})


def score_sequence(m: BigramModel, seq: Sequence[str]) -> float:
    """Natural-log probability of the sequence, start/end included."""
    ids = []
    for sym in seq:
        if sym not in m.vocab:
            raise DataError(f"symbol {sym!r} not in model vocabulary", symbol=sym)
        ids.append(m.vocab.id(sym))
    total = 0.0
    prev = m.bos
    for cur in ids + [m.eos]:
        p = m.cond_prob(prev, cur)
        if p == 0.0:
            return -math.inf
        total += math.log(p)
        prev = cur
    return total


def bigram_to_fsa(m: BigramModel) -> fst.Wfst:
    """Acceptor with one state per context: arc x->y labeled y with weight
    -log p(y|x), final weight -log p(end|x).  Zero-probability transitions
    are simply absent."""
    out = fst.Wfst(m.vocab, m.vocab)
    state_of = {m.bos: out.add_state()}
    out.set_start(state_of[m.bos])
    for y in m.continuation_ids():
        if y != m.eos:
            state_of[y] = out.add_state()
    for x in m.context_ids():
        src = state_of[x]
        for y in m.continuation_ids():
            p = m.cond_prob(x, y)
            if p == 0.0:
                continue
            if y == m.eos:
                out.set_final(src, -math.log(p))
            else:
                out.add_arc(src, y, y, -math.log(p), state_of[y])
    return out


def words_to_phones(corpus, pron_dict, fallback):
    """Replace every word by its first dictionary pronunciation, falling
    back to the lexicographically first rule-derived one; used to turn word
    text into phone-model training data."""
    from .constraints import rule_pronunciations

    out = []
    for seq in corpus:
        phones: list[str] = []
        for word in seq:
            prons = pron_dict.pronunciations.get(word) if pron_dict is not None else None
            if prons:
                phones.extend(prons[0])
                continue
            derived = rule_pronunciations(fallback, word) if fallback is not None else []
            if not derived:
                raise DataError(f"word {word!r} covered by neither dictionary nor rules", word=word)
            phones.extend(derived[0])
        out.append(phones)
    return out


# -- corpus and model text formats ----------------------------------------


def parse_corpus(text: str) -> list[list[str]]:
    """One sequence per line, space-separated symbols."""
    return [line.split() for _, line in fst.data_lines(text)]


def format_prob(p: float) -> str:
    return "%.9g" % p


def write_bigram(m: BigramModel, header: Optional[str] = None) -> str:
    lines = []
    if header:
        for h in header.splitlines():
            lines.append(f"# {h}")
    lines.append("\\data\\")
    lines.append(f"smoothing: {m.smoothing}" + (f" k={format_prob(m.k)}" if m.smoothing == ADD_K else ""))
    lines.append("\\vocabulary\\")
    for sym in m.vocab.symbols[1:]:
        lines.append(sym)
    lines.append("\\unigrams\\")
    for y in m.continuation_ids():
        lines.append(f"{format_prob(m.unigram[y])}\t{m.vocab.symbol(y)}")
    lines.append("\\bigrams\\")
    for (x, y), p in sorted(m.cond.items()):
        lines.append(f"{format_prob(p)}\t{m.vocab.symbol(x)}\t{m.vocab.symbol(y)}")
    lines.append("\\counts\\")
    for (x, y), c in sorted(m.bigram_counts.items()):
        lines.append(f"{c}\t{m.vocab.symbol(x)}\t{m.vocab.symbol(y)}")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


def read_bigram(text: str) -> BigramModel:
    section = None
    smoothing = None
    k = None
    vocab_syms: list[str] = []
    unigram_rows: list[tuple[float, str]] = []
    bigram_rows: list[tuple[float, str, str]] = []
    count_rows: list[tuple[int, str, str]] = []
    for lineno, line in fst.data_lines(text):
        if line.startswith("\\") and line.endswith("\\"):
            section = line.strip("\\")
            continue
        if section == "data":
            if line.startswith("smoothing:"):
                rest = line.split(":", 1)[1].split()
                smoothing = rest[0]
                for tok in rest[1:]:
                    if tok.startswith("k="):
                        k = float(tok[2:])
            continue
        if section == "vocabulary":
            vocab_syms.append(line.strip())
        elif section == "unigrams":
            p, sym = line.split("\t")
            unigram_rows.append((float(p), sym))
        elif section == "bigrams":
            p, x, y = line.split("\t")
            bigram_rows.append((float(p), x, y))
        elif section == "counts":
            c, x, y = line.split("\t")
            count_rows.append((int(c), x, y))
        elif section == "end":
            pass
        else:
            raise ParseError("line outside any model section", line=lineno)
    if smoothing is None or not vocab_syms:
        raise ParseError("model file lacks a data or vocabulary section")
    if vocab_syms[-2:] != [fst.BOS, fst.EOS]:
        raise ParseError("vocabulary must end with the sentence markers")
    vocab = fst.SymbolTable(vocab_syms)
    counts = {(vocab.id(x), vocab.id(y)): c for c, x, y in count_rows}
    cond = {(vocab.id(x), vocab.id(y)): p for p, x, y in bigram_rows}
    unigram = {vocab.id(sym): p for p, sym in unigram_rows}
    return BigramModel(
        vocab=vocab, smoothing=smoothing, k=k, bigram_counts=counts, cond=cond, unigram=unigram
    )
