"""Semiring-generic weighted finite-state machinery.

Weights live in negative-log-probability space: ``0.0`` is certainty
(``ONE``), ``+inf`` is impossibility (``ZERO``).  Two semirings are
supported: the log semiring sums probability mass over paths, the tropical
semiring keeps the best path.  Machines are plain mutable objects during
construction and treated as immutable afterwards; every operation here
returns a new machine and never touches its arguments.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence

from .errors import ContractError, DataError, NoPathError, ParseError, SymbolTableMismatch

EPSILON = "<eps>"
EPSILON_ID = 0

# Sentence-boundary markers shared by the n-gram and seq2seq layers.
BOS = "<s>"
EOS = "</s>"

ZERO = math.inf
ONE = 0.0

LOG = "log"
TROPICAL = "tropical"
SEMIRINGS = (LOG, TROPICAL)


def times(a: float, b: float) -> float:
    """Path extension: product of probabilities. ZERO annihilates."""
    if a == ZERO or b == ZERO:
        return ZERO
    return a + b


def plus_log(a: float, b: float) -> float:
    """Combine parallel paths by probability sum, stably."""
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    lo, hi = (a, b) if a <= b else (b, a)
    return lo - math.log1p(math.exp(lo - hi))


def plus_tropical(a: float, b: float) -> float:
    """Combine parallel paths by keeping the better one."""
    return a if a <= b else b


def plus(semiring: str):
    if semiring == LOG:
        return plus_log
    if semiring == TROPICAL:
        return plus_tropical
    raise ContractError(f"unknown semiring {semiring!r}", semiring=semiring)


def from_prob(p: float) -> float:
    if p < 0.0 or p != p:
        raise ContractError(f"probability out of range: {p!r}")
    return ZERO if p == 0.0 else -math.log(p)


def to_prob(w: float) -> float:
    return 0.0 if w == ZERO else math.exp(-w)


def data_lines(text: str) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, line) skipping blanks and header comments.

    A comment line starts with ``#`` followed by a space or ``%``; a bare
    ``#`` followed by a tab is data (the word-boundary symbol in a symbol
    table file).
    """
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#") and (len(line) == 1 or line[1] in " %"):
            continue
        yield lineno, line


class SymbolTable:
    """Bijective id <-> UTF-8 symbol map; id 0 is reserved for epsilon."""

    __slots__ = ("symbols", "_ids")

    def __init__(self, symbols: Iterable[str] = ()):
        syms = [EPSILON]
        seen = {EPSILON}
        for s in symbols:
            if not s or any(ch.isspace() for ch in s):
                raise DataError(f"symbol {s!r} is empty or contains whitespace")
            if s in seen:
                raise DataError(f"duplicate symbol {s!r}")
            seen.add(s)
            syms.append(s)
        self.symbols = tuple(syms)
        self._ids = {s: i for i, s in enumerate(syms)}

    def id(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise DataError(f"unknown symbol {symbol!r}", symbol=symbol) from None

    def symbol(self, label: int) -> str:
        if not 0 <= label < len(self.symbols):
            raise DataError(f"label id {label} out of range", label=label)
        return self.symbols[label]

    def ids(self, symbols: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id(s) for s in symbols)

    def strings(self, labels: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.symbol(i) for i in labels)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolTable) and self.symbols == other.symbols

    def __hash__(self) -> int:
        return hash(self.symbols)

    def __repr__(self) -> str:
        return f"SymbolTable({len(self.symbols)} symbols)"

    def to_text(self) -> str:
        return "".join(f"{s}\t{i}\n" for i, s in enumerate(self.symbols))

    @classmethod
    def from_text(cls, text: str) -> "SymbolTable":
        entries = []
        for lineno, line in data_lines(text):
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'symbol<TAB>id'", line=lineno)
            sym, id_str = parts
            try:
                sym_id = int(id_str)
            except ValueError:
                raise ParseError(f"bad symbol id {id_str!r}", line=lineno) from None
            entries.append((sym_id, sym, lineno))
        entries.sort()
        for expect, (sym_id, sym, lineno) in enumerate(entries):
            if sym_id != expect:
                raise ParseError(f"symbol ids not contiguous at {sym_id}", line=lineno)
        if not entries or entries[0][1] != EPSILON:
            raise ParseError(f"id 0 must be {EPSILON}")
        return cls(sym for _, sym, _ in entries[1:])


class Arc(NamedTuple):
    src: int
    ilabel: int
    olabel: int
    weight: float
    dst: int


class Wfst:
    """Weighted transducer over indexed symbol tables.

    States are dense ints.  An acceptor carries identical labels on both
    tapes.  Arc order within a state is construction order and is preserved
    by every operation, which keeps outputs reproducible.
    """

    def __init__(self, isyms: SymbolTable, osyms: SymbolTable):
        self.isyms = isyms
        self.osyms = osyms
        self._arcs_from: list[list[Arc]] = []
        self._finals: dict[int, float] = {}
        self._start: Optional[int] = None

    # -- construction ----------------------------------------------------

    def add_state(self) -> int:
        self._arcs_from.append([])
        return len(self._arcs_from) - 1

    def add_states(self, n: int) -> None:
        for _ in range(n):
            self.add_state()

    def set_start(self, state: int) -> None:
        self._check_state(state)
        self._start = state

    def set_final(self, state: int, weight: float = ONE) -> None:
        self._check_state(state)
        self._check_weight(weight)
        if weight == ZERO:
            self._finals.pop(state, None)
        else:
            self._finals[state] = weight

    def add_arc(self, src: int, ilabel: int, olabel: int, weight: float, dst: int) -> None:
        self._check_state(src)
        self._check_state(dst)
        self._check_weight(weight)
        if not 0 <= ilabel < len(self.isyms.symbols):
            raise ContractError(f"input label {ilabel} not in symbol table", label=ilabel)
        if not 0 <= olabel < len(self.osyms.symbols):
            raise ContractError(f"output label {olabel} not in symbol table", label=olabel)
        self._arcs_from[src].append(Arc(src, ilabel, olabel, weight, dst))

    def _check_state(self, state: int) -> None:
        if not 0 <= state < len(self._arcs_from):
            raise ContractError(f"state {state} does not exist", state=state)

    @staticmethod
    def _check_weight(weight: float) -> None:
        if weight != weight:
            raise ContractError("weight is NaN")

    # -- inspection ------------------------------------------------------

    @property
    def start(self) -> Optional[int]:
        return self._start

    @property
    def num_states(self) -> int:
        return len(self._arcs_from)

    @property
    def num_arcs(self) -> int:
        return sum(len(a) for a in self._arcs_from)

    @property
    def finals(self) -> dict[int, float]:
        return dict(self._finals)

    def final_weight(self, state: int) -> float:
        return self._finals.get(state, ZERO)

    def arcs_from(self, state: int) -> tuple[Arc, ...]:
        return tuple(self._arcs_from[state])

    def arcs(self) -> Iterator[Arc]:
        for state_arcs in self._arcs_from:
            yield from state_arcs

    def is_acceptor(self) -> bool:
        return all(a.ilabel == a.olabel for a in self.arcs())

    def is_empty(self) -> bool:
        """True when the machine accepts nothing at all."""
        return self._start is None or not self._finals or connect(self).start is None

    def has_cycle(self) -> bool:
        color = [0] * self.num_states  # 0 new, 1 open, 2 done
        for root in range(self.num_states):
            if color[root]:
                continue
            stack = [(root, 0)]
            color[root] = 1
            while stack:
                state, idx = stack[-1]
                arcs = self._arcs_from[state]
                if idx < len(arcs):
                    stack[-1] = (state, idx + 1)
                    nxt = arcs[idx].dst
                    if color[nxt] == 1:
                        return True
                    if color[nxt] == 0:
                        color[nxt] = 1
                        stack.append((nxt, 0))
                else:
                    color[state] = 2
                    stack.pop()
        return False

    def copy(self) -> "Wfst":
        out = Wfst(self.isyms, self.osyms)
        out._arcs_from = [list(arcs) for arcs in self._arcs_from]
        out._finals = dict(self._finals)
        out._start = self._start
        return out


@dataclass(frozen=True)
class ScoredSequence:
    """An epsilon-free label sequence with its path weight."""

    labels: tuple[int, ...]
    weight: float


# -- core operations -----------------------------------------------------


def connect(m: Wfst) -> Wfst:
    """Drop states that are unreachable from the start or cannot reach a
    final state.  Surviving states are renumbered in discovery order."""
    out = Wfst(m.isyms, m.osyms)
    if m.start is None:
        return out
    reach = set()
    order = []
    queue = [m.start]
    reach.add(m.start)
    while queue:
        state = queue.pop(0)
        order.append(state)
        for arc in m.arcs_from(state):
            if arc.dst not in reach:
                reach.add(arc.dst)
                queue.append(arc.dst)
    back: dict[int, list[int]] = {}
    for state in order:
        for arc in m.arcs_from(state):
            back.setdefault(arc.dst, []).append(state)
    coacc = {s for s in m.finals if s in reach}
    queue = list(coacc)
    while queue:
        state = queue.pop(0)
        for prev in back.get(state, ()):
            if prev not in coacc:
                coacc.add(prev)
                queue.append(prev)
    keep = [s for s in order if s in coacc]
    if m.start not in coacc:
        return out
    remap = {}
    for state in keep:
        remap[state] = out.add_state()
    out.set_start(remap[m.start])
    for state in keep:
        for arc in m.arcs_from(state):
            if arc.dst in remap:
                out.add_arc(remap[state], arc.ilabel, arc.olabel, arc.weight, remap[arc.dst])
    for state, w in m.finals.items():
        if state in remap:
            out.set_final(remap[state], w)
    return out


def compose(a: Wfst, b: Wfst, semiring: str = LOG) -> Wfst:
    """Relational composition with a three-state epsilon-matching filter.

    The filter admits exactly one interleaving of epsilon moves per path
    pair, so no string pair is double counted: paired epsilon moves are
    taken while both sides have them (filter state 0), then the leftover
    single-sided runs (states 1 / 2).
    """
    plus(semiring)  # validate name; construction itself is semiring-generic
    if a.osyms != b.isyms:
        raise SymbolTableMismatch(
            "output alphabet of the left machine differs from input alphabet of the right machine"
        )
    out = Wfst(a.isyms, b.osyms)
    if a.start is None or b.start is None:
        return out

    b_by_ilabel: list[dict[int, list[Arc]]] = []
    for state in range(b.num_states):
        index: dict[int, list[Arc]] = {}
        for arc in b.arcs_from(state):
            index.setdefault(arc.ilabel, []).append(arc)
        b_by_ilabel.append(index)

    state_map: dict[tuple[int, int, int], int] = {}

    def get_state(key: tuple[int, int, int]) -> int:
        if key not in state_map:
            state_map[key] = out.add_state()
            queue.append(key)
        return state_map[key]

    queue: list[tuple[int, int, int]] = []
    start_key = (a.start, b.start, 0)
    out.set_start(get_state(start_key))
    head = 0
    while head < len(queue):
        q1, q2, filt = queue[head]
        head += 1
        src = state_map[(q1, q2, filt)]
        fw = times(a.final_weight(q1), b.final_weight(q2))
        if fw != ZERO:
            out.set_final(src, fw)
        for arc1 in a.arcs_from(q1):
            if arc1.olabel != EPSILON_ID:
                for arc2 in b_by_ilabel[q2].get(arc1.olabel, ()):
                    dst = get_state((arc1.dst, arc2.dst, 0))
                    out.add_arc(src, arc1.ilabel, arc2.olabel, times(arc1.weight, arc2.weight), dst)
            else:
                if filt == 0:
                    for arc2 in b_by_ilabel[q2].get(EPSILON_ID, ()):
                        dst = get_state((arc1.dst, arc2.dst, 0))
                        out.add_arc(src, arc1.ilabel, arc2.olabel, times(arc1.weight, arc2.weight), dst)
                if filt in (0, 1):
                    dst = get_state((arc1.dst, q2, 1))
                    out.add_arc(src, arc1.ilabel, EPSILON_ID, arc1.weight, dst)
        if filt in (0, 2):
            for arc2 in b_by_ilabel[q2].get(EPSILON_ID, ()):
                dst = get_state((q1, arc2.dst, 2))
                out.add_arc(src, EPSILON_ID, arc2.olabel, arc2.weight, dst)
    return connect(out)


def invert(m: Wfst) -> Wfst:
    out = Wfst(m.osyms, m.isyms)
    out.add_states(m.num_states)
    if m.start is not None:
        out.set_start(m.start)
    for arc in m.arcs():
        out.add_arc(arc.src, arc.olabel, arc.ilabel, arc.weight, arc.dst)
    for state, w in m.finals.items():
        out.set_final(state, w)
    return out


def project(m: Wfst, side: str = "input") -> Wfst:
    if side not in ("input", "output"):
        raise ContractError(f"side must be 'input' or 'output', got {side!r}")
    syms = m.isyms if side == "input" else m.osyms
    out = Wfst(syms, syms)
    out.add_states(m.num_states)
    if m.start is not None:
        out.set_start(m.start)
    for arc in m.arcs():
        label = arc.ilabel if side == "input" else arc.olabel
        out.add_arc(arc.src, label, label, arc.weight, arc.dst)
    for state, w in m.finals.items():
        out.set_final(state, w)
    return out


def discount_weights(m: Wfst) -> Wfst:
    """Zero-exponentiation on every weight: anything possible becomes
    certain, the impossible stays impossible.  Topology is untouched."""
    out = Wfst(m.isyms, m.osyms)
    out.add_states(m.num_states)
    if m.start is not None:
        out.set_start(m.start)
    for arc in m.arcs():
        w = ONE if arc.weight != ZERO else ZERO
        out.add_arc(arc.src, arc.ilabel, arc.olabel, w, arc.dst)
    for state, w in m.finals.items():
        out.set_final(state, ONE if w != ZERO else ZERO)
    return out


def _backward_best(m: Wfst) -> list[float]:
    """Tropical distance from every state to acceptance, final weight
    included.  Bellman-Ford so that negative arc weights are handled;
    a still-relaxing pass after |states| rounds means a negative cycle."""
    dist = [ZERO] * m.num_states
    for state, w in m.finals.items():
        dist[state] = w
    arcs = [a for a in m.arcs() if a.weight != ZERO]
    for round_no in range(m.num_states + 1):
        changed = False
        for arc in arcs:
            cand = times(arc.weight, dist[arc.dst])
            if cand < dist[arc.src] - 1e-15:
                dist[arc.src] = cand
                changed = True
        if not changed:
            return dist
    raise ContractError("machine has a non-positive-weight cycle")


_SEARCH_BUDGET = 2_000_000


def shortest_path(m: Wfst, n: int = 1) -> list[ScoredSequence]:
    """The n best epsilon-free output label sequences under the tropical
    semiring, ascending by weight, ties broken lexicographically.

    Distinct paths with the same output sequence count once, scored by
    their best path.  Exact-future-cost A* keeps pops in final order, so
    the first completion of a sequence is its tropical total.
    """
    if n < 1:
        raise ContractError(f"n must be positive, got {n}")
    if m.start is None:
        raise NoPathError("machine is empty")
    future = _backward_best(m)
    if future[m.start] == ZERO:
        raise NoPathError("machine has no accepting path")
    # heap item: (priority, sequence, done, g, state); done-first ordering
    # makes completions pop before equal-priority extensions.
    heap: list[tuple[float, tuple[int, ...], int, float, int]] = []
    heapq.heappush(heap, (future[m.start], (), 0, ONE, m.start))
    results: list[ScoredSequence] = []
    seen: set[tuple[int, ...]] = set()
    pops = 0
    while heap and len(results) < n:
        priority, seq, done, g, state = heapq.heappop(heap)
        pops += 1
        if pops > _SEARCH_BUDGET:
            raise ContractError("shortest_path exceeded its search budget")
        if done:
            if seq not in seen:
                seen.add(seq)
                results.append(ScoredSequence(seq, priority))
            continue
        fw = m.final_weight(state)
        if fw != ZERO:
            heapq.heappush(heap, (times(g, fw), seq, 1, times(g, fw), state))
        for arc in m.arcs_from(state):
            if arc.weight == ZERO or future[arc.dst] == ZERO:
                continue
            g2 = times(g, arc.weight)
            seq2 = seq if arc.olabel == EPSILON_ID else seq + (arc.olabel,)
            heapq.heappush(heap, (times(g2, future[arc.dst]), seq2, 0, g2, arc.dst))
    return results


def total_weight(
    m: Wfst,
    iseq: Sequence[int],
    oseq: Sequence[int],
    semiring: str = LOG,
    max_arcs: Optional[int] = None,
) -> float:
    """Semiring total over all accepting paths whose epsilon-stripped label
    pair equals (iseq, oseq); ZERO when there is none."""
    combine = plus(semiring)
    if max_arcs is None:
        if m.has_cycle():
            raise ContractError("cyclic machine needs an explicit path length bound")
        max_arcs = max(m.num_states - 1, 0)
    if m.start is None:
        return ZERO
    iseq = tuple(iseq)
    oseq = tuple(oseq)
    if EPSILON_ID in iseq or EPSILON_ID in oseq:
        raise ContractError("label sequences must be epsilon-free")
    total = ZERO
    stack = [(m.start, 0, 0, ONE, 0)]
    while stack:
        state, ipos, opos, g, depth = stack.pop()
        if ipos == len(iseq) and opos == len(oseq):
            fw = m.final_weight(state)
            if fw != ZERO:
                total = combine(total, times(g, fw))
        if depth == max_arcs:
            continue
        for arc in m.arcs_from(state):
            if arc.weight == ZERO:
                continue
            ipos2 = ipos
            opos2 = opos
            if arc.ilabel != EPSILON_ID:
                if ipos == len(iseq) or iseq[ipos] != arc.ilabel:
                    continue
                ipos2 = ipos + 1
            if arc.olabel != EPSILON_ID:
                if opos == len(oseq) or oseq[opos] != arc.olabel:
                    continue
                opos2 = opos + 1
            stack.append((arc.dst, ipos2, opos2, times(g, arc.weight), depth + 1))
    return total


def linear_fst(
    isyms: SymbolTable,
    osyms: SymbolTable,
    iseq: Sequence[int],
    oseq: Sequence[int],
    weight: float = ONE,
) -> Wfst:
    """Single-path machine accepting exactly (iseq, oseq) with the given
    weight; the shorter tape is padded with trailing epsilons."""
    iseq = tuple(iseq)
    oseq = tuple(oseq)
    if not iseq and not oseq:
        raise ContractError("both label sequences are empty")
    if EPSILON_ID in iseq or EPSILON_ID in oseq:
        raise ContractError("label sequences must be epsilon-free")
    n = max(len(iseq), len(oseq))
    out = Wfst(isyms, osyms)
    out.add_states(n + 1)
    out.set_start(0)
    for i in range(n):
        il = iseq[i] if i < len(iseq) else EPSILON_ID
        ol = oseq[i] if i < len(oseq) else EPSILON_ID
        out.add_arc(i, il, ol, ONE, i + 1)
    out.set_final(n, weight)
    return out


def loop_acceptor(syms: SymbolTable, labels: Optional[Iterable[int]] = None) -> Wfst:
    """One-state unweighted acceptor of every string over the given labels
    (all non-epsilon symbols by default)."""
    out = Wfst(syms, syms)
    out.add_state()
    out.set_start(0)
    out.set_final(0, ONE)
    chosen = range(1, len(syms.symbols)) if labels is None else labels
    for label in chosen:
        if label == EPSILON_ID:
            raise ContractError("epsilon cannot label a loop acceptor arc")
        out.add_arc(0, label, label, ONE, 0)
    return out


def length_filter(syms: SymbolTable, max_len: int) -> Wfst:
    """Acceptor of all strings of length <= max_len over the alphabet."""
    if max_len < 0:
        raise ContractError("max_len must be >= 0")
    out = Wfst(syms, syms)
    out.add_states(max_len + 1)
    out.set_start(0)
    for i in range(max_len + 1):
        out.set_final(i, ONE)
        if i < max_len:
            for label in range(1, len(syms.symbols)):
                out.add_arc(i, label, label, ONE, i + 1)
    return out


# -- text format ----------------------------------------------------------


def format_weight(w: float) -> str:
    if w == ZERO:
        return "inf"
    return "%.9g" % w


def _parse_weight(token: str, lineno: int) -> float:
    try:
        w = float(token)
    except ValueError:
        raise ParseError(f"bad weight {token!r}", line=lineno) from None
    if w != w:
        raise ParseError("weight is NaN", line=lineno)
    return w


def write_fst_text(m: Wfst, header: Optional[str] = None) -> str:
    """One arc per line ``src dst ilabel olabel weight`` (weight omitted when
    One), then final lines ``state weight``.  The start state appears on the
    first data line."""
    lines = []
    if header:
        for h in header.splitlines():
            lines.append(f"# {h}")

    def arc_line(arc: Arc) -> str:
        fields = [
            str(arc.src),
            str(arc.dst),
            m.isyms.symbol(arc.ilabel),
            m.osyms.symbol(arc.olabel),
        ]
        if arc.weight != ONE:
            fields.append(format_weight(arc.weight))
        return " ".join(fields)

    def final_line(state: int) -> str:
        w = m.final_weight(state)
        return str(state) if w == ONE else f"{state} {format_weight(w)}"

    if m.start is not None:
        start_printed_final = False
        if not m.arcs_from(m.start):
            # the parser takes the first mentioned state as the start
            lines.append(final_line(m.start) if m.final_weight(m.start) != ZERO else f"{m.start} inf")
            start_printed_final = True
        order = [m.start] + [s for s in range(m.num_states) if s != m.start]
        for state in order:
            for arc in m.arcs_from(state):
                lines.append(arc_line(arc))
        for state in sorted(m.finals):
            if start_printed_final and state == m.start:
                continue
            lines.append(final_line(state))
    return "\n".join(lines) + "\n"


def read_fst_text(text: str, isyms: SymbolTable, osyms: SymbolTable) -> Wfst:
    out = Wfst(isyms, osyms)

    def ensure(state: int) -> int:
        while out.num_states <= state:
            out.add_state()
        return state

    start_seen = False
    for lineno, line in data_lines(text):
        fields = line.split()
        try:
            if len(fields) in (4, 5):
                src, dst = int(fields[0]), int(fields[1])
                il = isyms.id(fields[2])
                ol = osyms.id(fields[3])
                w = _parse_weight(fields[4], lineno) if len(fields) == 5 else ONE
                ensure(max(src, dst))
                out.add_arc(src, il, ol, w, dst)
                if not start_seen:
                    out.set_start(src)
                    start_seen = True
            elif len(fields) in (1, 2):
                state = int(fields[0])
                w = _parse_weight(fields[1], lineno) if len(fields) == 2 else ONE
                ensure(state)
                if w != ZERO:
                    out.set_final(state, w)
                if not start_seen:
                    out.set_start(state)
                    start_seen = True
            else:
                raise ParseError(f"unrecognized line with {len(fields)} fields", line=lineno)
        except ValueError:
            raise ParseError(f"bad state id on line {lineno}", line=lineno) from None
        except DataError as err:
            if isinstance(err, ParseError):
                raise
            raise ParseError(str(err), line=lineno) from None
    return out
