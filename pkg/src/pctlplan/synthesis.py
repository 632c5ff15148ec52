"""Maximal-probability policy synthesis on the tree MDP.

Blocks of the nested-until chain are solved last-to-first.  Each block
partitions the states into yes/no/maybe, computes maximizing
probabilities in one reverse-topological sweep (no linear program: the
MDP is a tree), thresholds them, and threads its positive-value state
set into the predecessor block's yes-set.  The per-block memoryless
policies compose into a history-dependent policy that switches blocks on
yes-set entry.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .mdp import NU, MdpState, TreeMdp
from .pctl import Block, Formula, UpdateRule, apply_update


@dataclass
class BlockSolution:
    """Values, policy and partition for one until block."""

    j: int  # 1-based position in the (possibly prefix-stripped) formula
    vprime: np.ndarray  # maximizing probabilities before thresholding
    v: np.ndarray       # thresholded values
    mu: np.ndarray      # argmax action per state
    yes: np.ndarray     # bool masks
    no: np.ndarray
    maybe: np.ndarray
    init_set: np.ndarray  # states with v > 0

    def to_dict(self) -> dict:
        return {
            "j": self.j,
            "vprime": self.vprime.tolist(),
            "v": self.v.tolist(),
            "mu": self.mu.tolist(),
            "yes": np.flatnonzero(self.yes).tolist(),
            "no": np.flatnonzero(self.no).tolist(),
            "init_set": np.flatnonzero(self.init_set).tolist(),
        }


@dataclass
class HistoryPolicy:
    """Per-block policies composed by switching at yes-set entry."""

    mus: list[np.ndarray]
    yes_sets: list[np.ndarray]

    @property
    def block_count(self) -> int:
        return len(self.mus)

    def advance(self, sid: int, active: int) -> int:
        """New active block after observing state sid (1-based, may pass f+1)."""
        while active <= self.block_count and self.yes_sets[active - 1][sid]:
            active += 1
        return active

    def action(self, sid: int, active: int) -> int:
        return int(self.mus[active - 1][sid])


@dataclass
class Solution:
    """Solved chain: per-block solutions, composed policy, probability bounds."""

    formula: Formula
    blocks: list[BlockSolution]
    policy: HistoryPolicy
    lower: float
    upper: float
    entry_sets: list[list[int]]  # yes states reachable first, per block

    def to_dict(self) -> dict:
        return {
            "formula": self.formula.text(),
            "lower": self.lower,
            "upper": self.upper,
            "blocks": [b.to_dict() for b in self.blocks],
            "entry_sets": self.entry_sets,
        }


def partition(m: TreeMdp, block: Block, next_init: np.ndarray):
    """yes/no/maybe masks for one block given the successor block's init set."""
    sat_psi = np.fromiter((block.psi_holds(s.labels) for s in m.states),
                          dtype=bool, count=len(m.states))
    sat_phi = np.fromiter((block.phi_holds(s.labels) for s in m.states),
                          dtype=bool, count=len(m.states))
    yes = sat_psi & next_init
    no = ~(sat_phi | yes)
    maybe = ~(yes | no)
    return yes, no, maybe


def backward_values(m: TreeMdp, yes: np.ndarray, no: np.ndarray):
    """Single reverse-topological sweep of the maximizing recursion.

    Construction order guarantees children have larger ids than their
    parent, so one descending pass suffices.  Maybe-leaves never reach a
    yes state and take the least-fixpoint value 0.  Ties in the argmax
    break toward the lowest action index.
    """
    size = len(m.states)
    v = np.zeros(size)
    mu = np.full(size, NU, dtype=np.int64)
    for sid in range(size - 1, -1, -1):
        s = m.states[sid]
        if yes[sid]:
            v[sid] = 1.0
            mu[sid] = s.enabled[0]
        elif no[sid] or s.is_leaf:
            mu[sid] = s.enabled[0]
        else:
            best_val, best_a = -1.0, s.enabled[0]
            for a in s.enabled:
                total = 0.0
                for cid, p in m.transitions[(sid, a)]:
                    total += p * v[cid]
                if total > best_val:
                    best_val, best_a = total, a
            v[sid] = best_val
            mu[sid] = best_a
    return v, mu


def threshold(vprime: np.ndarray, p: float, strict: bool):
    """Zero out states missing the block's probability bound."""
    meets = vprime > p if strict else vprime >= p
    v = np.where(meets, vprime, 0.0)
    return v, v > 0.0


def _solve_block(m: TreeMdp, block: Block, j: int, next_init: np.ndarray) -> BlockSolution:
    yes, no, maybe = partition(m, block, next_init)
    vprime, mu = backward_values(m, yes, no)
    v, init_set = threshold(vprime, block.p, block.strict)
    return BlockSolution(j=j, vprime=vprime, v=v, mu=mu,
                         yes=yes, no=no, maybe=maybe, init_set=init_set)


def _reachable_entries(m: TreeMdp, blocks: list[BlockSolution],
                       policy: HistoryPolicy) -> list[set[int]]:
    """Per block, the yes states that can be reached first under the policy."""
    f = len(blocks)
    entries: list[set[int]] = [set() for _ in range(f)]
    stack = [(m.s0, 1)]
    while stack:
        sid, active = stack.pop()
        while active <= f and blocks[active - 1].yes[sid]:
            entries[active - 1].add(sid)
            active += 1
        if active > f:
            continue  # whole chain satisfied along this branch
        if blocks[active - 1].vprime[sid] <= 0.0 or m.states[sid].is_leaf:
            continue  # this branch can no longer satisfy the active block
        a = policy.action(sid, active)
        for cid, _ in m.transitions[(sid, a)]:
            stack.append((cid, active))
    return entries


def _compose(m: TreeMdp, formula: Formula, blocks: list[BlockSolution]) -> Solution:
    policy = HistoryPolicy(mus=[b.mu for b in blocks],
                           yes_sets=[b.yes for b in blocks])
    v1_root = float(blocks[0].v[m.s0])
    if v1_root <= 0.0:
        return Solution(formula=formula, blocks=blocks, policy=policy,
                        lower=0.0, upper=0.0,
                        entry_sets=[[] for _ in blocks])
    entries = _reachable_entries(m, blocks, policy)
    lower = upper = v1_root
    for j in range(2, len(blocks) + 1):
        vals = [float(blocks[j - 1].v[sid]) for sid in entries[j - 2]]
        lower *= min(vals)
        upper *= max(vals)
    return Solution(formula=formula, blocks=blocks, policy=policy,
                    lower=lower, upper=upper,
                    entry_sets=[sorted(e) for e in entries])


def solve(m: TreeMdp, formula: Formula) -> Solution:
    """Solve the whole chain last-to-first and compose the policy."""
    f = len(formula.blocks)
    out: list[BlockSolution] = [None] * f  # type: ignore[list-item]
    next_init = np.ones(len(m.states), dtype=bool)
    for j in range(f, 0, -1):
        sol = _solve_block(m, formula.blocks[j - 1], j, next_init)
        out[j - 1] = sol
        next_init = sol.init_set
    return _compose(m, formula, out)


def bounds(sol: Solution) -> tuple[float, float]:
    return sol.lower, sol.upper


def prune_from(m: TreeMdp, s_c: int) -> tuple[TreeMdp, dict[int, int]]:
    """Subtree rooted at s_c, re-rooted with densely remapped ids.

    Returns the new MDP and the old-id -> new-id mapping; ids are
    reassigned in the same depth-first child order as construction.
    """
    if not 0 <= s_c < len(m.states):
        raise KeyError(f"unknown state id {s_c}")
    if s_c == m.s0:  # whole tree survives; skip the copy
        return m, {sid: sid for sid in range(len(m.states))}
    mapping: dict[int, int] = {}
    order: list[int] = []
    stack = [s_c]
    while stack:
        sid = stack.pop()
        mapping[sid] = len(order)
        order.append(sid)
        kids = []
        for a in m.states[sid].enabled:
            for cid, _ in m.transitions[(sid, a)]:
                if cid != sid:
                    kids.append(cid)
        stack.extend(reversed(kids))
    states = []
    for sid in order:
        s = m.states[sid]
        new_id = mapping[sid]
        if sid == s_c:
            parent = None
        else:
            parent = (mapping[s.parent[0]], s.parent[1])
        states.append(dc_replace(s, id=new_id, parent=parent))
    transitions = {}
    for sid in order:
        for a in m.states[sid].enabled:
            dist = m.transitions[(sid, a)]
            transitions[(mapping[sid], a)] = tuple((mapping[c], p) for c, p in dist)
    pruned = TreeMdp(states, transitions, m.n, m.control_inputs, m.q_init)
    return pruned, mapping


@dataclass
class IncrementalResult:
    solution: Solution
    mdp: TreeMdp
    mapping: dict[int, int]  # old state id -> id on the pruned MDP


def _restrict(arr: np.ndarray, order_old_ids: np.ndarray) -> np.ndarray:
    return arr[order_old_ids]


def solve_incremental(prev: Solution, m: TreeMdp, s_c: int,
                      rule: UpdateRule) -> IncrementalResult:
    """Re-solve after a specification update, reusing the previous solution.

    Blocks deeper than the edited one keep their values on the surviving
    states (backward induction is local to the subtree); only blocks from
    the edit site down to the stripped prefix are recomputed.
    """
    if len(prev.blocks) != len(prev.formula.blocks):
        raise ValueError("stale solution: block count mismatch")
    mplus, mapping = prune_from(m, s_c)
    fplus = apply_update(prev.formula, rule)
    i, j = rule.satisfied_up_to, rule.j
    f = len(prev.formula.blocks)

    # old-id lookup vector: new id -> old id
    old_ids = np.empty(len(mplus.states), dtype=np.int64)
    for old, new in mapping.items():
        old_ids[new] = old

    out: list[BlockSolution] = [None] * (f - i)  # type: ignore[list-item]
    next_init = np.ones(len(mplus.states), dtype=bool)
    for k in range(f, j, -1):  # copy blocks deeper than the edit
        old_block = prev.blocks[k - 1]
        sol = BlockSolution(
            j=k - i,
            vprime=_restrict(old_block.vprime, old_ids),
            v=_restrict(old_block.v, old_ids),
            mu=_restrict(old_block.mu, old_ids),
            yes=_restrict(old_block.yes, old_ids),
            no=_restrict(old_block.no, old_ids),
            maybe=_restrict(old_block.maybe, old_ids),
            init_set=_restrict(old_block.init_set, old_ids),
        )
        out[k - i - 1] = sol
        next_init = sol.init_set
    for k in range(j, i, -1):  # re-solve the edited block and everything above
        sol = _solve_block(mplus, fplus.blocks[k - i - 1], k - i, next_init)
        out[k - i - 1] = sol
        next_init = sol.init_set
    solution = _compose(mplus, fplus, out)
    return IncrementalResult(solution=solution, mdp=mplus, mapping=mapping)


def satisfied_up_to(sol: Solution, visited: list[int], m: TreeMdp) -> int:
    """Largest block index whose yes-set the path has entered in order."""
    if not visited or visited[0] != m.s0:
        raise ValueError("path must start at the initial state")
    for a, b in zip(visited, visited[1:]):
        edges = {cid for act in m.states[a].enabled
                 for cid, _ in m.transitions[(a, act)]}
        if b not in edges:
            raise ValueError(f"invalid path step {a} -> {b}")
    i = 0
    active = 1
    f = len(sol.blocks)
    for sid in visited:
        while active <= f and sol.blocks[active - 1].yes[sid]:
            i = active
            active += 1
    return i
