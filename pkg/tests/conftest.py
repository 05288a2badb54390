"""Shared fixtures and brute-force oracles.

The enumeration helpers here are deliberately independent of the library's
own path arithmetic: they walk machines explicitly and combine weights with
plain floats, so they can serve as ground truth for composition, shortest
path, and decode tests.
"""

import numpy as np
import pytest

from ptforge import fst


def enumerate_paths(m, max_arcs=None):
    """All accepting paths as (ilabels, olabels, weight), epsilon-stripped.

    Explicit stack walk; callers must pass max_arcs for cyclic machines.
    """
    if max_arcs is None:
        max_arcs = max(m.num_states - 1, 0)
    results = []
    if m.start is None:
        return results
    stack = [(m.start, (), (), 0.0, 0)]
    while stack:
        state, iseq, oseq, w, depth = stack.pop()
        fw = m.final_weight(state)
        if fw != fst.ZERO:
            results.append((iseq, oseq, w + fw))
        if depth == max_arcs:
            continue
        for arc in m.arcs_from(state):
            if arc.weight == fst.ZERO:
                continue
            stack.append(
                (
                    arc.dst,
                    iseq + ((arc.ilabel,) if arc.ilabel else ()),
                    oseq + ((arc.olabel,) if arc.olabel else ()),
                    w + arc.weight,
                    depth + 1,
                )
            )
    return results


def log_add(a, b):
    if a == fst.ZERO:
        return b
    if b == fst.ZERO:
        return a
    return -np.logaddexp(-a, -b)


def pair_totals(paths, semiring="log"):
    """Total weight per (input string, output string) over enumerated paths."""
    totals = {}
    for iseq, oseq, w in paths:
        key = (iseq, oseq)
        if key not in totals:
            totals[key] = w
        elif semiring == "log":
            totals[key] = log_add(totals[key], w)
        else:
            totals[key] = min(totals[key], w)
    return totals


def composed_pair_totals(a, b, semiring="log"):
    """Brute-force relation of compose(a, b) from the component paths."""
    totals = {}
    for ia, oa, wa in enumerate_paths(a):
        for ib, ob, wb in enumerate_paths(b):
            if oa != ib:
                continue
            key = (ia, ob)
            w = wa + wb
            if key not in totals:
                totals[key] = w
            elif semiring == "log":
                totals[key] = log_add(totals[key], w)
            else:
                totals[key] = min(totals[key], w)
    return totals


def random_dag(rng, isyms, osyms, max_states=5, max_arcs=8, eps_prob=0.2, acceptor=False):
    """Random acyclic transducer: arcs only go from lower to higher state
    ids, so every path has at most max_states - 1 arcs."""
    n = int(rng.integers(2, max_states + 1))
    m = fst.Wfst(isyms, osyms)
    m.add_states(n)
    m.set_start(0)
    n_arcs = int(rng.integers(1, max_arcs + 1))
    for _ in range(n_arcs):
        src = int(rng.integers(0, n - 1))
        dst = int(rng.integers(src + 1, n))
        if rng.random() < eps_prob:
            il = fst.EPSILON_ID
        else:
            il = int(rng.integers(1, len(isyms.symbols)))
        if acceptor:
            ol = il
        elif rng.random() < eps_prob:
            ol = fst.EPSILON_ID
        else:
            ol = int(rng.integers(1, len(osyms.symbols)))
        w = float(-np.log(rng.uniform(0.05, 1.0)))
        m.add_arc(src, il, ol, w, dst)
    m.set_final(n - 1, float(-np.log(rng.uniform(0.05, 1.0))))
    if n >= 3 and rng.random() < 0.4:
        m.set_final(int(rng.integers(1, n - 1)), float(-np.log(rng.uniform(0.05, 1.0))))
    return m


@pytest.fixture
def abc_table():
    return fst.SymbolTable(["a", "b", "c"])


@pytest.fixture
def xyz_table():
    return fst.SymbolTable(["x", "y", "z"])


@pytest.fixture
def pq_table():
    return fst.SymbolTable(["p", "q"])
