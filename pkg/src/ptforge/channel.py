"""Noisy channel between target-language phones and annotation-language
letters.

Multi-annotator nonsense transcripts are merged into a confusion network
(one pmf per slot, aligned ROVER-style), a monotone phone-to-chunk
misperception model is trained with EM, and the two are composed with
bigram priors to decode a phone lattice for each utterance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fst, ngram
from .errors import (
    ContractError,
    DataError,
    EmptyLatticeError,
    NoPathError,
    ParseError,
    SymbolTableMismatch,
)

MAX_CHUNK = 4

# A skip option in a confusion network slot is the annotator voting for
# "nothing here"; it is carried as the epsilon label.
SKIP = fst.EPSILON_ID


@dataclass(frozen=True)
class TranscriptBundle:
    utterance_id: str
    transcripts: tuple[str, ...]

    def __post_init__(self):
        if not self.transcripts:
            raise ContractError("bundle has no transcripts", utterance=self.utterance_id)
        if any(not t for t in self.transcripts):
            raise DataError("empty transcript in bundle", utterance=self.utterance_id)


def parse_transcript_bundles(text: str) -> list[TranscriptBundle]:
    """Blank-line separated utterance blocks, one annotator per line."""
    bundles = []
    block: list[str] = []
    lines = [ln for ln in text.splitlines()]
    lines.append("")
    for raw in lines:
        line = raw.strip()
        if line.startswith("#") and (len(line) == 1 or line[1] in " %"):
            continue
        if line:
            block.append(line)
        elif block:
            bundles.append(TranscriptBundle(f"utt{len(bundles):04d}", tuple(block)))
            block = []
    return bundles


def write_transcript_bundles(bundles: Sequence[TranscriptBundle]) -> str:
    return "\n\n".join("\n".join(b.transcripts) for b in bundles) + "\n"


@dataclass
class ConfusionNetwork:
    """Sausage of slots; each slot maps a letter id (or SKIP) to a probability."""

    slots: list[dict[int, float]]
    letters: fst.SymbolTable

    def validate(self) -> None:
        if not self.slots:
            raise ContractError("confusion network has no slots")
        for i, slot in enumerate(self.slots):
            total = sum(slot.values())
            if abs(total - 1.0) > 1e-9:
                raise ContractError(f"slot {i} sums to {total}, not 1", slot=i)


def merge_transcripts(
    bundle: TranscriptBundle, letters: fst.SymbolTable, prune_mass: float = 1.0
) -> ConfusionNetwork:
    """ROVER-style merge: the first transcript is the backbone; each later
    one is aligned to the growing slot sequence by minimum edit distance
    (ties preferring substitution, then deletion), votes are counted per
    slot, and each slot keeps its most probable options until prune_mass is
    covered."""
    if not 0.0 < prune_mass <= 1.0:
        raise ContractError(f"prune_mass must be in (0, 1], got {prune_mass}")
    seqs = [letters.ids(t) for t in bundle.transcripts]
    # votes per slot; every annotator votes in every slot (SKIP for absence)
    slots: list[dict[int, int]] = [{c: 1} for c in seqs[0]]
    for done, seq in enumerate(seqs[1:], start=1):
        ops = _align_to_slots(slots, seq)
        new_slots: list[dict[int, int]] = []
        si = ci = 0
        for op in ops:
            if op == "sub":  # match or substitution vote
                slot = slots[si]
                slot[seq[ci]] = slot.get(seq[ci], 0) + 1
                new_slots.append(slot)
                si += 1
                ci += 1
            elif op == "del":  # annotator skips an existing slot
                slot = slots[si]
                slot[SKIP] = slot.get(SKIP, 0) + 1
                new_slots.append(slot)
                si += 1
            else:  # "ins": new slot; earlier annotators implicitly skipped it
                new_slots.append({seq[ci]: 1, SKIP: done})
                ci += 1
        slots = new_slots
    n = len(seqs)
    pmf_slots = []
    for votes in slots:
        pmf = {opt: c / n for opt, c in votes.items()}
        pmf_slots.append(_prune_slot(pmf, prune_mass))
    cn = ConfusionNetwork(pmf_slots, letters)
    cn.validate()
    return cn


def _align_to_slots(slots: list[dict[int, int]], seq: tuple[int, ...]) -> list[str]:
    """Edit-distance alignment of a letter sequence against the slot
    sequence.  Matching an existing slot option costs nothing."""
    ns, nc = len(slots), len(seq)
    dist = [[0] * (nc + 1) for _ in range(ns + 1)]
    for i in range(1, ns + 1):
        dist[i][0] = i
    for j in range(1, nc + 1):
        dist[0][j] = j
    for i in range(1, ns + 1):
        for j in range(1, nc + 1):
            hit = 0 if seq[j - 1] in slots[i - 1] and seq[j - 1] != SKIP else 1
            dist[i][j] = min(dist[i - 1][j - 1] + hit, dist[i - 1][j] + 1, dist[i][j - 1] + 1)
    ops: list[str] = []
    i, j = ns, nc
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            hit = 0 if seq[j - 1] in slots[i - 1] and seq[j - 1] != SKIP else 1
            if dist[i][j] == dist[i - 1][j - 1] + hit:
                ops.append("sub")
                i -= 1
                j -= 1
                continue
        if i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            ops.append("del")
            i -= 1
            continue
        ops.append("ins")
        j -= 1
    ops.reverse()
    return ops


def _prune_slot(pmf: dict[int, float], prune_mass: float) -> dict[int, float]:
    ranked = sorted(pmf.items(), key=lambda kv: (-kv[1], kv[0]))
    kept: list[tuple[int, float]] = []
    acc = 0.0
    for opt, p in ranked:
        kept.append((opt, p))
        acc += p
        if acc >= prune_mass - 1e-12:
            break
    total = sum(p for _, p in kept)
    return {opt: p / total for opt, p in sorted(kept)}


def confnet_to_fst(cn: ConfusionNetwork) -> fst.Wfst:
    """Sausage acceptor: one state per slot boundary, one arc per option
    with weight -log p; skip options become epsilon arcs."""
    cn.validate()
    out = fst.Wfst(cn.letters, cn.letters)
    out.add_states(len(cn.slots) + 1)
    out.set_start(0)
    for i, slot in enumerate(cn.slots):
        for opt, p in sorted(slot.items()):
            out.add_arc(i, opt, opt, fst.from_prob(p), i + 1)
    out.set_final(len(cn.slots), fst.ONE)
    return out


def confnet_from_fst(m: fst.Wfst, letters: fst.SymbolTable) -> ConfusionNetwork:
    """Inverse of confnet_to_fst for sausage-shaped machines."""
    if m.start != 0:
        raise DataError("not a sausage lattice: start state is not 0")
    slots = []
    for i in range(m.num_states - 1):
        slot = {}
        for arc in m.arcs_from(i):
            if arc.dst != i + 1 or arc.ilabel != arc.olabel:
                raise DataError("not a sausage lattice", state=i)
            slot[arc.ilabel] = slot.get(arc.ilabel, 0.0) + fst.to_prob(arc.weight)
        if not slot:
            raise DataError("not a sausage lattice: slot without options", state=i)
        slots.append(slot)
    cn = ConfusionNetwork(slots, letters)
    cn.validate()
    return cn


@dataclass
class ChannelModel:
    """Memoryless phone -> letter-chunk emission model.

    emissions[phone id] is a pmf over chunks, each chunk a string of 0 to
    MAX_CHUNK letters; the empty chunk is a deletion.
    """

    phones: fst.SymbolTable
    letters: fst.SymbolTable
    emissions: dict[int, dict[str, float]]
    loglik_history: tuple[float, ...] = field(default=(), repr=False)

    def validate(self) -> None:
        for phone, pmf in self.emissions.items():
            total = sum(pmf.values())
            if abs(total - 1.0) > 1e-9:
                raise ContractError(
                    f"emission pmf for {self.phones.symbol(phone)} sums to {total}"
                )
            for chunk in pmf:
                if len(chunk) > MAX_CHUNK:
                    raise ContractError(f"chunk {chunk!r} longer than {MAX_CHUNK}")

    def to_tsv(self, header: Optional[str] = None) -> str:
        lines = []
        if header:
            for h in header.splitlines():
                lines.append(f"# {h}")
        for phone in sorted(self.emissions):
            for chunk, p in sorted(self.emissions[phone].items()):
                if p > 0.0:
                    lines.append(f"{self.phones.symbol(phone)}\t{chunk}\t{ngram.format_prob(p)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(
        cls,
        text: str,
        phones: Optional[fst.SymbolTable] = None,
        letters: Optional[fst.SymbolTable] = None,
    ) -> "ChannelModel":
        rows = []
        for lineno, line in fst.data_lines(text):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected 'phone<TAB>chunk<TAB>prob'", line=lineno)
            phone, chunk, p_str = parts
            try:
                p = float(p_str)
            except ValueError:
                raise ParseError(f"bad probability {p_str!r}", line=lineno) from None
            rows.append((phone, chunk, p))
        if phones is None:
            phones = ngram.vocab_table(r[0] for r in rows)
        if letters is None:
            letters = ngram.vocab_table(ch for r in rows for ch in r[1])
        emissions: dict[int, dict[str, float]] = {}
        for phone, chunk, p in rows:
            emissions.setdefault(phones.id(phone), {})[chunk] = p
        model = cls(phones, letters, emissions)
        model.validate()
        return model


def train_channel_em(
    pairs: Sequence[tuple[Sequence[str], str]],
    iterations: int = 10,
    seed: int = 0,
    phones: Optional[fst.SymbolTable] = None,
    letters: Optional[fst.SymbolTable] = None,
) -> ChannelModel:
    """EM for the monotone phone-to-chunk channel.

    Each phone emits one chunk of 0..MAX_CHUNK letters; the expectation step
    runs forward-backward over the segmentation trellis, the maximization
    step renormalizes expected chunk counts per phone.  Initialization is
    uniform over feasible chunk lengths with seed-driven noise of magnitude
    1e-3.  The per-iteration training log-likelihood is recorded on the
    returned model and is non-decreasing.
    """
    if not pairs:
        raise ContractError("no training pairs")
    bad = [
        idx
        for idx, (phone_seq, letter_seq) in enumerate(pairs)
        if not phone_seq or not letter_seq or len(letter_seq) > MAX_CHUNK * len(phone_seq)
    ]
    if bad:
        raise DataError(
            f"{len(bad)} pair(s) infeasible under the {MAX_CHUNK}-letter chunk bound "
            f"(or empty): indices {bad[:20]}",
            indices=bad,
        )
    if phones is None:
        phones = ngram.vocab_table(p for seq, _ in pairs for p in seq)
    if letters is None:
        letters = ngram.vocab_table(ch for _, s in pairs for ch in s)

    id_pairs = [(phones.ids(seq), s) for seq, s in pairs]
    for seq, s in pairs:
        for ch in s:
            letters.id(ch)

    chunks: set[str] = {""}
    for _, s in id_pairs:
        for i in range(len(s)):
            for l in range(1, MAX_CHUNK + 1):
                if i + l <= len(s):
                    chunks.add(s[i : i + l])
    by_len: dict[int, list[str]] = {}
    for c in sorted(chunks):
        by_len.setdefault(len(c), []).append(c)
    lengths = sorted(by_len)

    rng = np.random.default_rng(seed)
    phone_ids = sorted({p for seq, _ in id_pairs for p in seq})
    emissions: dict[int, dict[str, float]] = {}
    for phone in phone_ids:
        pmf = {}
        for l in lengths:
            base = (1.0 / len(lengths)) / len(by_len[l])
            for c in by_len[l]:
                pmf[c] = base * (1.0 + 1e-3 * float(rng.uniform(-1.0, 1.0)))
        total = sum(pmf.values())
        emissions[phone] = {c: p / total for c, p in pmf.items()}

    history = []
    for _ in range(iterations):
        ll, counts = _em_pass(id_pairs, emissions)
        history.append(ll)
        for phone in phone_ids:
            total = sum(counts[phone].values())
            if total > 0.0:
                emissions[phone] = {c: v / total for c, v in counts[phone].items() if v > 0.0}
    ll, _ = _em_pass(id_pairs, emissions)
    history.append(ll)

    model = ChannelModel(phones, letters, emissions, loglik_history=tuple(history))
    model.validate()
    return model


def _em_pass(id_pairs, emissions):
    """One expectation pass: total log-likelihood and expected chunk counts."""
    loglik = 0.0
    counts: dict[int, dict[str, float]] = {p: {} for p in emissions}
    for phone_seq, s in id_pairs:
        m, n = len(phone_seq), len(s)
        alpha = [[0.0] * (n + 1) for _ in range(m + 1)]
        alpha[0][0] = 1.0
        for i in range(1, m + 1):
            pmf = emissions[phone_seq[i - 1]]
            for j in range(n + 1):
                acc = 0.0
                for l in range(0, min(MAX_CHUNK, j) + 1):
                    prev = alpha[i - 1][j - l]
                    if prev == 0.0:
                        continue
                    p = pmf.get(s[j - l : j], 0.0)
                    if p:
                        acc += prev * p
                alpha[i][j] = acc
        total = alpha[m][n]
        if total <= 0.0:
            raise DataError(
                "pair has no remaining alignment mass; emission support collapsed",
                phones=m,
                letters=n,
            )
        loglik += math.log(total)
        beta = [[0.0] * (n + 1) for _ in range(m + 1)]
        beta[m][n] = 1.0
        for i in range(m - 1, -1, -1):
            pmf = emissions[phone_seq[i]]
            for j in range(n, -1, -1):
                acc = 0.0
                for l in range(0, min(MAX_CHUNK, n - j) + 1):
                    nxt = beta[i + 1][j + l]
                    if nxt == 0.0:
                        continue
                    p = pmf.get(s[j : j + l], 0.0)
                    if p:
                        acc += p * nxt
                beta[i][j] = acc
        for i in range(1, m + 1):
            phone = phone_seq[i - 1]
            pmf = emissions[phone]
            bucket = counts[phone]
            for j in range(n + 1):
                if beta[i][j] == 0.0:
                    continue
                for l in range(0, min(MAX_CHUNK, j) + 1):
                    prev = alpha[i - 1][j - l]
                    if prev == 0.0:
                        continue
                    chunk = s[j - l : j]
                    p = pmf.get(chunk, 0.0)
                    if p:
                        gamma = prev * p * beta[i][j] / total
                        bucket[chunk] = bucket.get(chunk, 0.0) + gamma
    return loglik, counts


def channel_to_fst(model: ChannelModel) -> fst.Wfst:
    """Single-hub transducer realizing the monotone emission relation: each
    phone -> chunk emission is a path reading the phone then epsilons while
    writing the chunk letters."""
    model.validate()
    out = fst.Wfst(model.phones, model.letters)
    hub = out.add_state()
    out.set_start(hub)
    out.set_final(hub, fst.ONE)
    for phone in sorted(model.emissions):
        for chunk, p in sorted(model.emissions[phone].items()):
            if p <= 0.0:
                continue
            w = fst.from_prob(p)
            if len(chunk) <= 1:
                ol = model.letters.id(chunk) if chunk else fst.EPSILON_ID
                out.add_arc(hub, phone, ol, w, hub)
                continue
            prev = hub
            for idx, ch in enumerate(chunk):
                last = idx == len(chunk) - 1
                dst = hub if last else out.add_state()
                il = phone if idx == 0 else fst.EPSILON_ID
                out.add_arc(prev, il, model.letters.id(ch), w if idx == 0 else fst.ONE, dst)
                prev = dst
    return out


@dataclass
class PtLattice:
    """Acceptor over target-language phones; path weights model the
    posterior over phone sequences for one utterance."""

    fst: fst.Wfst
    semiring: str = fst.LOG

    def validate(self) -> None:
        if not self.fst.is_acceptor():
            raise ContractError("a phone lattice must be an acceptor")

    def phone_labels(self) -> set[int]:
        return {a.ilabel for a in self.fst.arcs() if a.ilabel != fst.EPSILON_ID}


def _negate_weights(m: fst.Wfst) -> fst.Wfst:
    out = fst.Wfst(m.isyms, m.osyms)
    out.add_states(m.num_states)
    if m.start is not None:
        out.set_start(m.start)
    for arc in m.arcs():
        w = arc.weight if arc.weight == fst.ZERO else -arc.weight
        out.add_arc(arc.src, arc.ilabel, arc.olabel, w, arc.dst)
    for state, w in m.finals.items():
        out.set_final(state, w if w == fst.ZERO else -w)
    return out


def decode_pt(
    cn: ConfusionNetwork,
    channel: ChannelModel,
    letter_lm: Optional[ngram.BigramModel],
    phone_lm: ngram.BigramModel,
    max_phones: Optional[int] = None,
    semiring: str = fst.LOG,
) -> PtLattice:
    """Decode a confusion network into a phone lattice.

    The lattice is the channel composed with the confusion network, divided
    by the letter prior when one is supplied (negated-weight letter bigram
    on the letter tape), projected to phones, multiplied by the phone
    bigram prior, and pruned to paths of at most max_phones phones
    (default: twice the slot count).
    """
    if channel.letters != cn.letters:
        raise SymbolTableMismatch("channel and confusion network use different letter tables")
    if phone_lm.vocab != channel.phones:
        raise SymbolTableMismatch("phone model and channel use different phone tables")
    if letter_lm is not None and letter_lm.vocab != channel.letters:
        raise SymbolTableMismatch("letter model and channel use different letter tables")
    if max_phones is None:
        max_phones = 2 * len(cn.slots)

    lat = fst.compose(channel_to_fst(channel), confnet_to_fst(cn), semiring=semiring)
    if letter_lm is not None:
        lat = fst.compose(lat, _negate_weights(ngram.bigram_to_fsa(letter_lm)), semiring=semiring)
    lat = fst.project(lat, "input")
    lat = fst.compose(ngram.bigram_to_fsa(phone_lm), lat, semiring=semiring)
    lat = fst.compose(lat, fst.length_filter(channel.phones, max_phones), semiring=semiring)
    if lat.start is None:
        missing = sorted(
            cn.letters.symbol(opt)
            for slot in cn.slots
            for opt in slot
            if opt != SKIP
            and not any(
                cn.letters.symbol(opt) in chunk
                for pmf in channel.emissions.values()
                for chunk, p in pmf.items()
                if p > 0.0
            )
        )
        raise EmptyLatticeError(
            "decode produced an empty lattice (inventory/channel mismatch)",
            letters_without_channel_support=missing,
        )
    return PtLattice(lat, semiring=semiring)


def best_path_pt(pt: PtLattice) -> fst.ScoredSequence:
    """Single best phone sequence of the lattice (tropical one-best)."""
    results = fst.shortest_path(pt.fst, 1)
    if not results:
        raise NoPathError("lattice has no accepting path")
    return results[0]
