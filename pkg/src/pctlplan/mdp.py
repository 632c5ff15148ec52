"""Tree-structured MDP abstraction of the noisy vehicle.

Every arc of the reachability tree expands, via disc labeling, into a
chain of states linked by the dummy action; the last state of a chain at
a stage boundary offers the nominal controls, each fanning out over the
n noise cells with probability 1/n.  Chain ends at the final stage (or
states carrying an absorbing label) are leaves with a probability-1
self-loop.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from .environment import Environment, ExtProp, label_disc, trace_labels
from .vehicle import ArcSegment, Pose, ReachNode, ReachTree, propagate_uncertainty

# Dummy action: the only enabled action mid-chain and at leaves.
NU = -1

SNAPSHOT_VERSION = 1


class MdpOverflow(RuntimeError):
    def __init__(self, max_states: int):
        super().__init__(f"MDP exceeded the {max_states}-state ceiling; "
                         f"reduce K or enable absorbing truncation")
        self.max_states = max_states


@dataclass
class MdpState:
    """One abstraction state: a constant-label slice of a trajectory arc."""

    id: int
    stage: int
    arc: Optional[ArcSegment]  # None only at the root
    t_lo: float  # sub-interval within the arc, arc-local time
    t_hi: float
    r: float  # uncertainty disc radius over the slice
    cell: Optional[int]  # noise cell index, None at the root
    labels: frozenset[ExtProp]
    parent: Optional[tuple[int, int]]  # (state id, action), None at the root
    enabled: tuple[int, ...]  # control indices, or (NU,)
    is_leaf: bool = False

    @property
    def pose(self) -> Pose:
        """Pose at the end of the slice (the root's initial pose)."""
        if self.arc is None:
            raise AttributeError("root state has no arc")
        return self.arc.pose_at(self.t_hi)


class TreeMdp:
    """Finite tree abstraction with (state, action) -> distribution table."""

    def __init__(self, states: list[MdpState],
                 transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]],
                 n: int, control_inputs: tuple[float, ...],
                 q_init: Pose):
        self.states = states
        self.transitions = transitions
        self.n = n
        self.control_inputs = control_inputs
        self.q_init = q_init
        self.s0 = 0

    def __len__(self) -> int:
        return len(self.states)

    def successors(self, sid: int, action: int) -> tuple[tuple[int, float], ...]:
        return self.transitions[(sid, action)]

    def children(self, sid: int) -> list[int]:
        out = []
        for a in self.states[sid].enabled:
            for cid, _ in self.transitions[(sid, a)]:
                if cid != sid:
                    out.append(cid)
        return out

    def leaf_ids(self) -> list[int]:
        return [s.id for s in self.states if s.is_leaf]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        states = []
        for s in self.states:
            rec = {
                "id": s.id, "stage": s.stage, "t_lo": s.t_lo, "t_hi": s.t_hi,
                "r": s.r, "cell": s.cell,
                "labels": sorted(str(l) for l in s.labels),
                "parent": list(s.parent) if s.parent else None,
                "enabled": list(s.enabled), "leaf": s.is_leaf,
            }
            if s.arc is not None:
                a = s.arc
                rec["arc"] = {"start": [a.start.x, a.start.y, a.start.theta],
                              "w": a.w, "dt": a.dt}
            states.append(rec)
        return {
            "version": SNAPSHOT_VERSION,
            "n": self.n,
            "control_inputs": list(self.control_inputs),
            "q_init": [self.q_init.x, self.q_init.y, self.q_init.theta],
            "states": states,
            "transitions": [
                {"state": sid, "action": a, "dist": [list(t) for t in dist]}
                for (sid, a), dist in self.transitions.items()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeMdp":
        if d.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported MDP snapshot version {d.get('version')!r}")
        states = []
        for rec in d["states"]:
            arc = None
            if "arc" in rec:
                a = rec["arc"]
                arc = ArcSegment(Pose(*a["start"]), a["w"], a["dt"])
            labels = frozenset(
                ExtProp(s.lstrip("!"), not s.startswith("!")) for s in rec["labels"]
            )
            states.append(MdpState(
                id=rec["id"], stage=rec["stage"], arc=arc,
                t_lo=rec["t_lo"], t_hi=rec["t_hi"], r=rec["r"], cell=rec["cell"],
                labels=labels,
                parent=tuple(rec["parent"]) if rec["parent"] else None,
                enabled=tuple(rec["enabled"]), is_leaf=rec["leaf"],
            ))
        transitions = {
            (t["state"], t["action"]): tuple((c, p) for c, p in t["dist"])
            for t in d["transitions"]
        }
        return cls(states, transitions, d["n"], tuple(d["control_inputs"]),
                   Pose(*d["q_init"]))

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def build_mdp(
    tree: ReachTree,
    env: Environment,
    absorbing: frozenset[ExtProp] = frozenset(),
    max_states: int = 500_000,
    required: frozenset[ExtProp] = frozenset(),
) -> TreeMdp:
    """Expand a reachability tree into the labeled tree MDP.

    States whose label set meets ``absorbing``, or misses any label in
    ``required``, become leaves immediately (the rest of their stage and
    all descendants are never generated); this is how deep builds stay
    tractable.  Requiring a label is only sound for specifications whose
    every block conjoins it, in which case a state without it fails the
    whole chain outright.
    """
    n = tree.noise.n
    controls = tree.controls
    prob = 1.0 / n
    states: list[MdpState] = []
    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}

    def add(state: MdpState) -> int:
        if len(states) >= max_states:
            raise MdpOverflow(max_states)
        states.append(state)
        return state.id

    def decided_labels(theta) -> bool:
        return bool(theta & absorbing) or not required <= theta

    root_labels = label_disc(tree.root.pose.position, 0.0, env)
    root_decided = decided_labels(root_labels)
    root_boundary = tree.depth > 0 and not root_decided
    root = MdpState(
        id=0, stage=0, arc=None, t_lo=0.0, t_hi=0.0, r=0.0, cell=None,
        labels=root_labels, parent=None,
        enabled=tuple(range(len(controls))) if root_boundary else (NU,),
        is_leaf=not root_boundary,
    )
    add(root)
    if root.is_leaf:
        transitions[(0, NU)] = ((0, 1.0),)

    def expand(sid: int, node: ReachNode, r_prev: float,
               beta_prev: float) -> None:
        # sid is a stage-boundary state offering every nominal control
        kids = tree.children(node)
        for ui, u in enumerate(controls.inputs):
            firsts = []
            for ci, cell in enumerate(tree.noise.cells):
                child = kids[(ui, ci)]
                seg = child.segment
                r_k, beta_k = propagate_uncertainty(
                    r_prev, node.pose, u, cell, tree.dt, beta_prev)
                labels = trace_labels(seg, r_k, env)
                prev_sid, prev_action = sid, ui
                last_sid = None
                decided = False
                for theta, t_lo, t_hi in labels:
                    s = MdpState(
                        id=len(states), stage=child.stage, arc=seg,
                        t_lo=t_lo, t_hi=t_hi, r=r_k, cell=ci, labels=theta,
                        parent=(prev_sid, prev_action), enabled=(NU,),
                    )
                    add(s)
                    if prev_action == ui and prev_sid == sid:
                        firsts.append(s.id)
                    else:
                        transitions[(prev_sid, NU)] = ((s.id, 1.0),)
                    prev_sid, prev_action = s.id, NU
                    last_sid = s.id
                    if decided_labels(theta):
                        decided = True
                        break
                last = states[last_sid]
                if decided or child.stage >= tree.depth:
                    last.is_leaf = True
                    transitions[(last_sid, NU)] = ((last_sid, 1.0),)
                else:
                    last.enabled = tuple(range(len(controls)))
                    expand(last_sid, child, r_k, beta_k)
            transitions[(sid, ui)] = tuple((fid, prob) for fid in firsts)

    if root_boundary:
        expand(0, tree.root, 0.0, 0.0)
    return TreeMdp(states, transitions, n, controls.inputs, tree.root.pose)


def validate(m: TreeMdp) -> list[str]:
    """Mechanical check of the tree-MDP conditions; empty list means valid."""
    problems = []
    incoming: dict[int, int] = {}
    for s in m.states:
        enabled = set(s.enabled)
        if s.is_leaf or NU in enabled:
            if enabled != {NU}:
                problems.append(f"state {s.id}: chain/leaf state must enable only "
                                f"the dummy action, got {sorted(enabled)}")
        for a in s.enabled:
            key = (s.id, a)
            if key not in m.transitions:
                problems.append(f"state {s.id}: enabled action {a} has no distribution")
                continue
            dist = m.transitions[key]
            total = sum(p for _, p in dist)
            if abs(total - 1.0) > 1e-12:
                problems.append(f"state {s.id}, action {a}: probabilities sum to {total}")
            if a != NU and len(dist) != m.n:
                problems.append(f"state {s.id}, action {a}: expected {m.n} children, "
                                f"got {len(dist)}")
            for cid, p in dist:
                if p <= 0.0:
                    problems.append(f"state {s.id}, action {a}: non-positive "
                                    f"probability {p}")
                if cid == s.id:
                    if not s.is_leaf:
                        problems.append(f"state {s.id}: self-loop on a non-leaf")
                    continue
                if cid <= s.id:
                    problems.append(f"state {s.id} -> {cid}: edge violates "
                                    f"construction order (cycle risk)")
                incoming[cid] = incoming.get(cid, 0) + 1
    for (sid, a) in m.transitions:
        if a not in m.states[sid].enabled:
            problems.append(f"state {sid}: distribution for disabled action {a}")
    for s in m.states:
        expect = 0 if s.id == m.s0 else 1
        got = incoming.get(s.id, 0)
        if got != expect:
            problems.append(f"state {s.id}: {got} incoming edges, expected {expect}")
        if s.parent is None and s.id != m.s0:
            problems.append(f"state {s.id}: missing parent")
    return problems
