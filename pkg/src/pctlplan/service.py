"""Negotiation sessions: scenario loading, relaxation candidates,
deployment stepping, environment events, and JSON persistence.

A session walks the supervisor protocol: solve the scenario offline
(Negotiating), browse guaranteed relaxations and accept or keep the
specification, deploy and step the vehicle stage by stage (Deployed),
halt on an environment event and renegotiate on the pruned model
(Renegotiating), and close after the final stage (Closed).
"""

from __future__ import annotations

import importlib.resources
import json
import math
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import pctl
from .environment import Environment, ExtProp, word_of_trace
from .mdp import TreeMdp, build_mdp
from .pctl import Formula, UpdateRule, conj
from .strategy import Strategy, check_word, trial_rng
from .synthesis import Solution, prune_from, solve, solve_incremental
from .vehicle import (ControlSet, NoiseModel, Pose, ReachTree, integrate_arc,
                      make_noise_model)

SCHEMA_VERSION = 1

PHASE_NEGOTIATING = "Negotiating"
PHASE_DEPLOYED = "Deployed"
PHASE_RENEGOTIATING = "Renegotiating"
PHASE_CLOSED = "Closed"

# dense per-stage sampling for the recorded word, matching the simulator
_WORD_STEPS = 1024


class DomainError(ValueError):
    """Anything the caller did wrong at the protocol level (exit code 1)."""


class ScenarioError(DomainError):
    pass


class PhaseError(DomainError):
    pass


class StaleCandidateError(DomainError):
    pass


class SessionNotFound(DomainError):
    pass


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _parse_labels(names) -> frozenset[ExtProp]:
    return frozenset(ExtProp(s.lstrip("!"), not s.startswith("!")) for s in names)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to build and solve one mission."""

    name: str
    env: Environment
    q_init: Pose
    rho: float
    dt: float
    stages: int
    eps_max: float
    n_cells: int
    formula_text: str
    absorbing: frozenset[ExtProp] = frozenset()
    required: frozenset[ExtProp] = frozenset()
    max_states: int = 500_000

    @property
    def controls(self) -> ControlSet:
        return ControlSet(rho=self.rho)

    @property
    def noise(self) -> NoiseModel:
        return make_noise_model(self.eps_max, self.n_cells)

    def formula(self) -> Formula:
        f = pctl.parse(self.formula_text)
        problems = pctl.validate(f, self.env.propositions)
        if problems:
            raise ScenarioError("; ".join(problems))
        return f

    def build(self) -> TreeMdp:
        tree = ReachTree(self.q_init, self.controls, self.noise, self.dt,
                         self.stages, max_nodes=20 * self.max_states)
        return build_mdp(tree, self.env, absorbing=self.absorbing,
                         max_states=self.max_states, required=self.required)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "environment": self.env.to_dict(),
            "q_init": [self.q_init.x, self.q_init.y, self.q_init.theta],
            "rho": self.rho,
            "dt": self.dt,
            "stages": self.stages,
            "eps_max": self.eps_max,
            "n_cells": self.n_cells,
            "formula": self.formula_text,
            "absorbing": sorted(str(l) for l in self.absorbing),
            "required": sorted(str(l) for l in self.required),
            "max_states": self.max_states,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "Scenario":
        try:
            env_spec = d["environment"]
            if isinstance(env_spec, str):
                env = _load_environment_ref(env_spec, base_dir)
            else:
                env = Environment.from_dict(env_spec)
            return cls(
                name=d.get("name", "scenario"),
                env=env,
                q_init=Pose(*d["q_init"]),
                rho=float(d["rho"]),
                dt=float(d["dt"]),
                stages=int(d["stages"]),
                eps_max=float(d["eps_max"]),
                n_cells=int(d["n_cells"]),
                formula_text=d["formula"],
                absorbing=_parse_labels(d.get("absorbing", [])),
                required=_parse_labels(d.get("required", [])),
                max_states=int(d.get("max_states", 500_000)),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "Scenario":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)


def _load_environment_ref(ref: str, base_dir: Optional[Path]) -> Environment:
    candidates = []
    if base_dir is not None:
        candidates.append(base_dir / ref)
    candidates.append(Path(ref))
    for p in candidates:
        if p.is_file():
            with open(p) as fh:
                return Environment.from_dict(json.load(fh))
    data = importlib.resources.files("pctlplan.data").joinpath(ref)
    if data.is_file():
        return Environment.from_dict(json.loads(data.read_text()))
    raise ScenarioError(f"environment file {ref!r} not found")


def bundled_scenario(name: str = "courier") -> Scenario:
    """The packaged paper-like corridor mission."""
    data = importlib.resources.files("pctlplan.data").joinpath(f"{name}.json")
    if not data.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return Scenario.from_dict(json.loads(data.read_text()))


@dataclass(frozen=True)
class Candidate:
    """One pre-solved relaxation offered to the supervisor."""

    id: str
    rule: UpdateRule
    description: str
    lower: float
    upper: float
    delta: float  # lower-bound gain over the current solution
    basis: int    # session revision the enumeration was computed against

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "rule": self.rule.to_dict(),
            "description": self.description,
            "lower": self.lower,
            "upper": self.upper,
            "delta": self.delta,
            "basis": self.basis,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        return cls(id=d["id"], rule=UpdateRule.from_dict(d["rule"]),
                   description=d["description"], lower=d["lower"],
                   upper=d["upper"], delta=d["delta"], basis=d["basis"])


@dataclass
class Deployment:
    """Online execution state: the true continuous pose plus the history
    needed to rebuild the strategy cursor deterministically."""

    seed: int
    stage: int = 0
    root_stage: int = 0  # stage at which the current MDP root sits
    pose: Optional[Pose] = None
    eps_history: list[float] = field(default_factory=list)
    cells: list[int] = field(default_factory=list)
    u_indices: list[Optional[int]] = field(default_factory=list)
    nominal: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "stage": self.stage,
            "root_stage": self.root_stage,
            "pose": [self.pose.x, self.pose.y, self.pose.theta],
            "eps_history": self.eps_history,
            "cells": self.cells,
            "u_indices": self.u_indices,
            "nominal": self.nominal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Deployment":
        return cls(seed=d["seed"], stage=d["stage"],
                   root_stage=d.get("root_stage", 0), pose=Pose(*d["pose"]),
                   eps_history=list(d["eps_history"]), cells=list(d["cells"]),
                   u_indices=list(d["u_indices"]), nominal=list(d["nominal"]))


class Session:
    """One negotiation, deployment and renegotiation lifecycle."""

    def __init__(self, scenario: Scenario, mdp: TreeMdp, solution: Solution,
                 session_id: Optional[str] = None):
        self.id = session_id or uuid.uuid4().hex[:12]
        self.scenario = scenario
        self.mdp = mdp
        self.solution = solution
        self.formula = solution.formula
        self.phase = PHASE_NEGOTIATING
        self.revision = 0
        self.candidates: dict[str, Candidate] = {}
        self.deployment: Optional[Deployment] = None
        self.strategy: Optional[Strategy] = None
        self.event_log: list[dict] = []
        self.prefix_blocks: tuple = ()  # blocks satisfied before a re-root
        self.verdict: Optional[bool] = None
        self._mdp_ref: Optional[str] = None

    # -- bookkeeping --------------------------------------------------------

    def log(self, kind: str, **detail) -> None:
        self.event_log.append({"time": _utcnow(), "kind": kind, **detail})

    def bump(self) -> None:
        self.revision += 1
        self.candidates = {}

    @property
    def bounds(self) -> tuple[float, float]:
        return self.solution.lower, self.solution.upper

    def mdp_ref(self) -> str:
        if self._mdp_ref is None:
            self._mdp_ref = self.mdp.content_hash()
        return self._mdp_ref

    def summary(self) -> dict:
        out = {
            "schema": SCHEMA_VERSION,
            "id": self.id,
            "phase": self.phase,
            "revision": self.revision,
            "formula": self.formula.text(),
            "lower": self.solution.lower,
            "upper": self.solution.upper,
            "states": len(self.mdp),
            "stages_total": self.scenario.stages,
        }
        if self.deployment is not None:
            out["deployment"] = {
                "stage": self.deployment.stage,
                "pose": [self.deployment.pose.x, self.deployment.pose.y,
                         self.deployment.pose.theta],
                "satisfied_up_to": self.strategy.satisfied_up_to,
                "cursor": self.strategy.cursor,
            }
        if self.verdict is not None:
            out["satisfied"] = self.verdict
        return out


def create_session(scenario: Scenario, session_id: Optional[str] = None) -> Session:
    """Build the MDP, solve the initial formula, open the negotiation."""
    formula = scenario.formula()  # parse/validate before the expensive build
    mdp = scenario.build()
    solution = solve(mdp, formula)
    session = Session(scenario, mdp, solution, session_id=session_id)
    session.log("created", scenario=scenario.name,
                lower=solution.lower, upper=solution.upper)
    return session


# -- relaxation candidates ---------------------------------------------------

def _candidate_rules(formula: Formula, propositions) -> list[UpdateRule]:
    """The bounded Increase-rule pool shown to the supervisor."""
    rules: list[UpdateRule] = []
    for j, b in enumerate(formula.blocks, start=1):
        for idx in range(len(b.phi)):
            rules.append(UpdateRule(kind=pctl.REMOVE_PHI_CLAUSE, j=j, index=idx))
        for p_plus in (b.p / 2.0, 1e-9):
            if 0.0 <= p_plus < b.p:
                rules.append(UpdateRule(kind=pctl.LOWER_THRESHOLD, j=j,
                                        p_plus=p_plus))
        used = {l.base for c in b.psi for l in c.literals}
        for name in sorted(set(propositions) - used):
            rules.append(UpdateRule(kind=pctl.ADD_PSI_CLAUSE, j=j,
                                    clause=conj(ExtProp(name, True))))
    return rules


def enumerate_relaxations(session: Session, limit: int = 5) -> list[Candidate]:
    """Solve the candidate pool incrementally, return the top `limit` by delta."""
    if session.phase not in (PHASE_NEGOTIATING, PHASE_RENEGOTIATING):
        raise PhaseError(f"cannot enumerate relaxations in phase {session.phase}")
    if limit < 1:
        raise DomainError(f"limit must be >= 1, got {limit}")
    base_lower = session.solution.lower
    out = []
    for k, rule in enumerate(_candidate_rules(session.formula,
                                              session.scenario.env.propositions)):
        try:
            inc = solve_incremental(session.solution, session.mdp,
                                    session.mdp.s0, rule)
        except pctl.FormulaError:
            continue
        cand = Candidate(
            id=f"r{session.revision}c{k}",
            rule=rule,
            description=rule.describe(),
            lower=inc.solution.lower,
            upper=inc.solution.upper,
            delta=inc.solution.lower - base_lower,
            basis=session.revision,
        )
        out.append(cand)
    out.sort(key=lambda c: (-c.delta, c.id))
    out = out[:limit]
    session.candidates = {c.id: c for c in out}
    session.log("enumerated", count=len(out), basis=session.revision)
    return out


def accept(session: Session, candidate_id: Optional[str] = None) -> Session:
    """Adopt one candidate's specification, or keep the current one."""
    if session.phase not in (PHASE_NEGOTIATING, PHASE_RENEGOTIATING):
        raise PhaseError(f"cannot accept in phase {session.phase}")
    if candidate_id is None:
        session.log("accepted", candidate=None)
        return session
    cand = session.candidates.get(candidate_id)
    if cand is None or cand.basis != session.revision:
        raise StaleCandidateError(
            f"candidate {candidate_id!r} is unknown or was enumerated against "
            f"an older session state; re-run the relaxation listing")
    inc = solve_incremental(session.solution, session.mdp, session.mdp.s0,
                            cand.rule)
    if not math.isclose(inc.solution.lower, cand.lower, abs_tol=1e-12):
        raise DomainError("candidate re-solve diverged from its prediction")
    session.solution = inc.solution
    session.formula = inc.solution.formula
    session.mdp = inc.mdp
    session.bump()
    if session.strategy is not None:  # renegotiation: rebind the cursor
        session.strategy = _rebind_strategy(session)
    session.log("accepted", candidate=cand.id, rule=cand.rule.to_dict(),
                lower=cand.lower, upper=cand.upper)
    return session


def _rebind_strategy(session: Session) -> Strategy:
    """Fresh cursor at the (re-rooted) initial state of the current MDP."""
    return Strategy(solution=session.solution, mdp=session.mdp)


# -- deployment --------------------------------------------------------------

def deploy(session: Session, seed: Optional[int] = None) -> Session:
    """Start (or resume after renegotiation) the online phase."""
    if session.phase == PHASE_NEGOTIATING:
        if seed is None:
            raise DomainError("an initial deployment needs a seed")
        session.deployment = Deployment(seed=seed, pose=session.scenario.q_init)
        session.strategy = Strategy(solution=session.solution, mdp=session.mdp)
        session.phase = PHASE_DEPLOYED
        session.log("deployed", seed=seed)
    elif session.phase == PHASE_RENEGOTIATING:
        session.phase = PHASE_DEPLOYED
        session.log("resumed", stage=session.deployment.stage)
    else:
        raise PhaseError(f"cannot deploy in phase {session.phase}")
    return session


def remaining_bounds(session: Session) -> tuple[float, float]:
    """Probability bounds for the not-yet-satisfied suffix from the cursor."""
    st = session.strategy
    f = len(session.formula.blocks)
    if st.active > f:
        return 1.0, 1.0
    if session.mdp.states[st.cursor].is_leaf:
        return 0.0, 0.0
    sub, _ = prune_from(session.mdp, st.cursor)
    suffix = Formula(session.formula.blocks[st.active - 1:])
    sol = solve(sub, suffix)
    return sol.lower, sol.upper


def step_deployment(session: Session, eps: Optional[float] = None,
                    with_bounds: bool = True) -> dict:
    """Advance the continuous vehicle one stage and report what happened."""
    if session.phase != PHASE_DEPLOYED:
        raise PhaseError(f"cannot step in phase {session.phase}")
    dep, st = session.deployment, session.strategy
    sc = session.scenario
    if eps is None:
        rng = trial_rng(dep.seed, dep.stage)
        eps = float(rng.uniform(-sc.eps_max, sc.eps_max))
    elif not -sc.eps_max <= eps <= sc.eps_max:
        raise DomainError(f"eps {eps} outside [-{sc.eps_max}, {sc.eps_max}]")

    u_idx = None if st.done else st.next_control()
    u = 0.0 if u_idx is None else sc.controls.inputs[u_idx]
    seg = integrate_arc(dep.pose, u + eps, sc.dt)
    cell = sc.noise.cell_of(eps)
    if u_idx is not None:
        st.observe_cell(u_idx, cell)
    dep.pose = seg.end
    dep.stage += 1
    dep.eps_history.append(eps)
    dep.cells.append(cell)
    dep.u_indices.append(u_idx)
    dep.nominal.append(u)

    report = {
        "stage": dep.stage,
        "u_index": u_idx,
        "u": u,
        "eps": eps,
        "cell": cell,
        "pose": [dep.pose.x, dep.pose.y, dep.pose.theta],
        "cursor": st.cursor,
        "satisfied_up_to": st.satisfied_up_to,
        "done": st.done,
        "phase": session.phase,
    }
    if with_bounds:
        report["lower"], report["upper"] = remaining_bounds(session)
    if dep.stage >= sc.stages or st.done:
        session.phase = PHASE_CLOSED
        session.verdict = _final_verdict(session)
        report["phase"] = session.phase
        report["satisfied"] = session.verdict
        session.log("closed", satisfied=session.verdict)
    else:
        session.log("stepped", stage=dep.stage, eps=eps, cell=cell)
    return report


def deployment_positions(session: Session) -> np.ndarray:
    """Dense positions of the flown trajectory, rebuilt from the history."""
    dep = session.deployment
    sc = session.scenario
    pose = sc.q_init
    ts = np.linspace(0.0, sc.dt, _WORD_STEPS + 1)
    chunks = []
    for u, eps in zip(dep.nominal, dep.eps_history):
        seg = integrate_arc(pose, u + eps, sc.dt)
        pts = seg.positions_at(ts)
        chunks.append(pts if not chunks else pts[1:])
        pose = seg.end
    if not chunks:
        return np.array([[sc.q_init.x, sc.q_init.y]])
    return np.vstack(chunks)


def _final_verdict(session: Session) -> bool:
    """Satisfaction of the full accepted mission formula on the flown word.

    Mid-flight updates strip the already-satisfied prefix from the working
    formula; the verdict re-attaches it so the whole chain is checked.
    """
    word = word_of_trace(deployment_positions(session), session.scenario.env)
    mission = Formula(session.prefix_blocks + session.formula.blocks)
    return check_word(word, mission)


def environment_event(session: Session, rule: UpdateRule) -> Session:
    """Halt the vehicle, apply the mid-flight specification update."""
    if session.phase != PHASE_DEPLOYED:
        raise PhaseError(f"cannot inject an event in phase {session.phase}")
    st = session.strategy
    i_now = st.satisfied_up_to
    if rule.satisfied_up_to != i_now:
        raise DomainError(
            f"rule claims satisfied_up_to={rule.satisfied_up_to} but the "
            f"deployment cursor has satisfied {i_now} block(s)")
    stripped = session.formula.blocks[:rule.satisfied_up_to]
    inc = solve_incremental(session.solution, session.mdp, st.cursor, rule)
    session.prefix_blocks = session.prefix_blocks + stripped
    session.deployment.root_stage = session.deployment.stage
    session.solution = inc.solution
    session.formula = inc.solution.formula
    session.mdp = inc.mdp
    session._mdp_ref = None
    session.phase = PHASE_RENEGOTIATING
    session.bump()
    session.strategy = _rebind_strategy(session)
    session.log("event", rule=rule.to_dict(), direction=pctl.direction(rule),
                lower=session.solution.lower, upper=session.solution.upper)
    if pctl.direction(rule) == pctl.DECREASE:
        enumerate_relaxations(session)
    return session


# -- persistence --------------------------------------------------------------

class SessionStore:
    """One JSON snapshot per session; MDPs stored once, content-addressed."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        (self.root / "mdps").mkdir(parents=True, exist_ok=True)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)

    def _mdp_path(self, ref: str) -> Path:
        return self.root / "mdps" / f"{ref}.json"

    def _session_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.json"

    def save(self, session: Session) -> Path:
        ref = session.mdp_ref()
        mdp_path = self._mdp_path(ref)
        if not mdp_path.exists():
            tmp = mdp_path.with_suffix(".tmp")
            with open(tmp, "w") as fh:
                json.dump(session.mdp.to_dict(), fh)
            tmp.replace(mdp_path)
        doc = {
            "schema": SCHEMA_VERSION,
            "id": session.id,
            "scenario": session.scenario.to_dict(),
            "mdp_ref": ref,
            "phase": session.phase,
            "revision": session.revision,
            "formula": session.formula.text(),
            "prefix_formula": (Formula(session.prefix_blocks).text()
                               if session.prefix_blocks else None),
            "lower": session.solution.lower,
            "upper": session.solution.upper,
            "candidates": [c.to_dict() for c in session.candidates.values()],
            "deployment": (session.deployment.to_dict()
                           if session.deployment else None),
            "event_log": session.event_log,
            "verdict": session.verdict,
        }
        path = self._session_path(session.id)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=1)
        tmp.replace(path)
        return path

    def load(self, session_id: str) -> Session:
        path = self._session_path(session_id)
        if not path.exists():
            raise SessionNotFound(f"no session {session_id!r} under {self.root}")
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != SCHEMA_VERSION:
            raise DomainError(f"unsupported snapshot schema {doc.get('schema')!r}")
        scenario = Scenario.from_dict(doc["scenario"])
        with open(self._mdp_path(doc["mdp_ref"])) as fh:
            mdp = TreeMdp.from_dict(json.load(fh))
        formula = pctl.parse(doc["formula"])
        solution = solve(mdp, formula)  # deterministic re-solve
        if not (math.isclose(solution.lower, doc["lower"], abs_tol=1e-9)
                and math.isclose(solution.upper, doc["upper"], abs_tol=1e-9)):
            raise DomainError(f"snapshot {session_id!r} does not re-solve to "
                              f"its recorded bounds; refusing to load")
        session = Session(scenario, mdp, solution, session_id=doc["id"])
        session.phase = doc["phase"]
        session.revision = doc["revision"]
        session.candidates = {c["id"]: Candidate.from_dict(c)
                              for c in doc["candidates"]}
        session.event_log = list(doc["event_log"])
        session.verdict = doc["verdict"]
        session._mdp_ref = doc["mdp_ref"]
        if doc.get("prefix_formula"):
            session.prefix_blocks = pctl.parse(doc["prefix_formula"]).blocks
        if doc["deployment"] is not None:
            session.deployment = Deployment.from_dict(doc["deployment"])
            session.strategy = _rebind_strategy(session)
            # replay the recorded observations to restore the cursor; the
            # history before the last re-root is already baked into the
            # pruned MDP, so only the post-root steps replay
            dep = session.deployment
            for k in range(dep.root_stage, dep.stage):
                u_idx = dep.u_indices[k]
                if u_idx is None or session.strategy.done:
                    continue
                session.strategy.observe_cell(u_idx, dep.cells[k])
        return session
