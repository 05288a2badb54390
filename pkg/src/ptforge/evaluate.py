"""Phone error rate scoring and the relative-reduction arithmetic used in
error-rate reports.

Alignment is plain unit-cost Levenshtein with a deterministic backtrace;
corpus PER pools edit counts over pooled reference length rather than
averaging per-utterance rates.  Percentages are rounded half away from
zero to the precision reports use (two decimals for PER, one for relative
reduction).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ContractError, DataError

MATCH = "match"
SUB = "substitution"
INS = "insertion"
DEL = "deletion"


@dataclass(frozen=True)
class EditAlignment:
    """Ordered edit script between a hypothesis and a reference."""

    ops: tuple[tuple[str, int, int], ...]  # (op, hyp position, ref position)
    substitutions: int
    insertions: int
    deletions: int
    matches: int
    ref_length: int

    @property
    def cost(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def round_half_away(value: float, digits: int) -> float:
    scale = 10**digits
    scaled = value * scale
    if scaled >= 0:
        return int(scaled + 0.5) / scale
    return -int(-scaled + 0.5) / scale


def align(hyp: Sequence[str], ref: Sequence[str]) -> EditAlignment:
    """Minimal unit-cost alignment; ties resolved preferring match over
    substitution over deletion over insertion."""
    nh, nr = len(hyp), len(ref)
    dist = [[0] * (nr + 1) for _ in range(nh + 1)]
    for i in range(1, nh + 1):
        dist[i][0] = i
    for j in range(1, nr + 1):
        dist[0][j] = j
    for i in range(1, nh + 1):
        for j in range(1, nr + 1):
            sub = dist[i - 1][j - 1] + (0 if hyp[i - 1] == ref[j - 1] else 1)
            dele = dist[i][j - 1] + 1  # ref symbol missing from hyp
            ins = dist[i - 1][j] + 1  # hyp symbol not in ref
            dist[i][j] = min(sub, dele, ins)
    ops: list[tuple[str, int, int]] = []
    i, j = nh, nr
    s_count = i_count = d_count = m_count = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            hit = hyp[i - 1] == ref[j - 1]
            if dist[i][j] == dist[i - 1][j - 1] + (0 if hit else 1):
                if hit:
                    ops.append((MATCH, i - 1, j - 1))
                    m_count += 1
                else:
                    ops.append((SUB, i - 1, j - 1))
                    s_count += 1
                i -= 1
                j -= 1
                continue
        if j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            ops.append((DEL, i, j - 1))
            d_count += 1
            j -= 1
            continue
        ops.append((INS, i - 1, j))
        i_count += 1
        i -= 1
    ops.reverse()
    return EditAlignment(
        ops=tuple(ops),
        substitutions=s_count,
        insertions=i_count,
        deletions=d_count,
        matches=m_count,
        ref_length=nr,
    )


def phone_error_rate(corpus: Sequence[tuple[Sequence[str], Sequence[str]]]) -> float:
    """Pooled PER over (hypothesis, reference) pairs, as a percentage with
    two decimals."""
    total_edits = 0
    total_ref = 0
    for hyp, ref in corpus:
        a = align(hyp, ref)
        total_edits += a.cost
        total_ref += a.ref_length
    if total_ref == 0:
        raise DataError("PER undefined: every reference is empty")
    return round_half_away(100.0 * total_edits / total_ref, 2)


def symbol_accuracy(corpus: Sequence[tuple[Sequence[str], Sequence[str]]]) -> float:
    """Pooled fraction of reference symbols reproduced exactly in place."""
    matches = 0
    total_ref = 0
    for hyp, ref in corpus:
        a = align(hyp, ref)
        matches += a.matches
        total_ref += a.ref_length
    if total_ref == 0:
        raise DataError("accuracy undefined: every reference is empty")
    return matches / total_ref


def relative_reduction(baseline: float, improved: float) -> float:
    """Percentage reduction of `improved` relative to `baseline`, one
    decimal."""
    if baseline <= 0:
        raise ContractError(f"baseline must be positive, got {baseline}")
    return round_half_away(100.0 * (baseline - improved) / baseline, 1)


def parse_utterance_lines(text: str) -> list[list[str]]:
    """One utterance per line, space-separated phones; aligned by line."""
    from . import fst

    return [line.split() for _lineno, line in fst.data_lines(text)]
