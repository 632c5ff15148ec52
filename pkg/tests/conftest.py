"""Shared fixtures and independent oracles for the test suite.

The oracles deliberately avoid the library's own sweep/recursion code:
values are recomputed with exact rationals either by brute-force policy
enumeration (small models) or by structural recursion over the tree.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest

from pctlplan.environment import ExtProp
from pctlplan.mdp import NU, MdpState, TreeMdp
from pctlplan.pctl import Block, Clause, Formula
from pctlplan.vehicle import Pose

BASES = ("a", "b", "c", "u")


def random_labels(rng: np.random.Generator) -> frozenset[ExtProp]:
    """Random consistent label set: per base, positive, negative or neither."""
    out = []
    for base in BASES:
        roll = rng.integers(3)
        if roll == 0:
            out.append(ExtProp(base, True))
        elif roll == 1:
            out.append(ExtProp(base, False))
    return frozenset(out)


def random_tree_mdp(rng: np.random.Generator, depth: int = 3,
                    n_controls: int = 2, n_cells: int = 2,
                    max_chain: int = 2, max_states: int = 200) -> TreeMdp:
    """Random labeled tree MDP obeying all the validate() conditions."""
    states: list[MdpState] = []
    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
    controls = tuple(range(n_controls))
    prob = 1.0 / n_cells

    def new_state(stage, parent, enabled, leaf) -> int:
        sid = len(states)
        states.append(MdpState(
            id=sid, stage=stage, arc=None, t_lo=0.0, t_hi=1.0,
            r=0.01 * stage, cell=None if parent is None else 0,
            labels=random_labels(rng), parent=parent, enabled=enabled,
            is_leaf=leaf,
        ))
        return sid

    root_leaf = depth == 0
    new_state(0, None, (NU,) if root_leaf else controls, root_leaf)
    if root_leaf:
        transitions[(0, NU)] = ((0, 1.0),)

    def expand(sid: int, stage: int) -> None:
        for a in controls:
            firsts = []
            for _ in range(n_cells):
                chain = int(rng.integers(1, max_chain + 1))
                prev, prev_a = sid, a
                budget_leaf = len(states) + chain >= max_states
                for k in range(chain):
                    last = k == chain - 1
                    terminal = (stage + 1 >= depth and last) or (budget_leaf and last)
                    cid = new_state(stage + 1, (prev, prev_a), (NU,), terminal)
                    if prev == sid and prev_a == a:
                        firsts.append(cid)
                    else:
                        transitions[(prev, NU)] = ((cid, 1.0),)
                    prev, prev_a = cid, NU
                if states[prev].is_leaf:
                    transitions[(prev, NU)] = ((prev, 1.0),)
                else:
                    states[prev].enabled = controls
                    expand(prev, stage + 1)
            transitions[(sid, a)] = tuple((fid, prob) for fid in firsts)

    if not root_leaf:
        expand(0, 0)
    return TreeMdp(states, transitions, n_cells,
                   tuple(float(a) for a in controls), Pose(0.0, 0.0, 0.0))


def random_clause(rng: np.random.Generator, kind: str) -> Clause:
    k = int(rng.integers(1, 3))
    picks = rng.choice(len(BASES), size=k, replace=False)
    lits = frozenset(ExtProp(BASES[i], bool(rng.integers(2))) for i in picks)
    return Clause(kind, lits)


def random_formula(rng: np.random.Generator, max_blocks: int = 3) -> Formula:
    blocks = []
    for _ in range(int(rng.integers(1, max_blocks + 1))):
        phi = tuple(random_clause(rng, "or")
                    for _ in range(int(rng.integers(0, 3))))
        psi = tuple(random_clause(rng, "and")
                    for _ in range(int(rng.integers(1, 3))))
        p = float(rng.choice([0.0, 0.1, 0.25, 0.5, 0.9]))
        blocks.append(Block(phi=phi, psi=psi, p=p, strict=bool(rng.integers(2))))
    return Formula(tuple(blocks))


# -- exact-rational oracles ---------------------------------------------------

def decision_states(m: TreeMdp) -> list[int]:
    return [s.id for s in m.states if not s.is_leaf and s.enabled != (NU,)]


def oracle_policy_value(m: TreeMdp, yes, no, policy: dict[int, int],
                        sid: int) -> Fraction:
    """Reach-yes-avoiding-no probability under one fixed policy."""
    if yes[sid]:
        return Fraction(1)
    s = m.states[sid]
    if no[sid] or s.is_leaf:
        return Fraction(0)
    a = policy[sid] if sid in policy else NU
    dist = m.transitions[(sid, a)]
    p = Fraction(1, len(dist))
    return sum((p * oracle_policy_value(m, yes, no, policy, cid)
                for cid, _ in dist), Fraction(0))


def oracle_enumerate(m: TreeMdp, yes, no, sid: int = 0) -> Fraction:
    """Max over every deterministic policy, exact arithmetic."""
    dec = decision_states(m)
    n_controls = len(m.control_inputs)
    best = Fraction(0)
    for choice in itertools.product(range(n_controls), repeat=len(dec)):
        policy = dict(zip(dec, choice))
        val = oracle_policy_value(m, yes, no, policy, sid)
        if val > best:
            best = val
    return best


def oracle_recursive(m: TreeMdp, yes, no, sid: int = 0) -> Fraction:
    """Max expected value by structural recursion (for larger trees)."""
    if yes[sid]:
        return Fraction(1)
    s = m.states[sid]
    if no[sid] or s.is_leaf:
        return Fraction(0)
    best = Fraction(0)
    for a in s.enabled:
        dist = m.transitions[(sid, a)]
        p = Fraction(1, len(dist))
        total = sum((p * oracle_recursive(m, yes, no, cid)
                     for cid, _ in dist), Fraction(0))
        if total > best:
            best = total
    return best


def oracle_partition(m: TreeMdp, block: Block, next_init):
    """Independent yes/no recomputation straight from the literal sets."""
    size = len(m.states)
    yes = np.zeros(size, dtype=bool)
    no = np.zeros(size, dtype=bool)
    for s in m.states:
        theta = s.labels
        psi_ok = any(c.literals <= theta for c in block.psi)
        phi_ok = all(not c.literals.isdisjoint(theta) for c in block.phi)
        yes[s.id] = psi_ok and next_init[s.id]
        no[s.id] = not (phi_ok or yes[s.id])
    return yes, no


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)
