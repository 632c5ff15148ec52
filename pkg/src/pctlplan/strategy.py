"""Measurement-driven vehicle control strategies, continuous-system
simulation, and empirical satisfaction estimation.

A strategy tracks the vehicle's position on the MDP: each gyroscope
measurement selects one noise cell, which selects one child subtree.
Simulation draws continuous noise, integrates the true kinematics, and
feeds the quantized measurement back into the strategy, so the empirical
satisfaction frequency can be compared against the MDP bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .environment import Environment, word_of_trace
from .mdp import NU, TreeMdp
from .pctl import Formula
from .synthesis import Solution
from .vehicle import ControlSet, NoiseModel, Pose, integrate_arc

DONE = "done"

# Position sampling resolution per stage for word generation, matching
# the label-event scan used during abstraction.
WORD_SAMPLE_STEPS = 1024


class SensorContractError(ValueError):
    """A measured interval does not align with any gyroscope cell."""


class StrategyStateError(RuntimeError):
    """Strategy driven outside its contract (e.g. control mid-chain)."""


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Counter-based per-trial stream; (seed, trial) fully determines it."""
    return np.random.Generator(np.random.Philox(key=(seed << 32) | trial))


@dataclass
class Strategy:
    """Cursor-tracking realization of the history-dependent policy."""

    solution: Solution
    mdp: TreeMdp
    cursor: int = 0
    active: int = 1
    satisfied_up_to: int = 0
    visited: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.cursor = self.mdp.s0
        self.visited = [self.cursor]
        self._advance_blocks()

    def _advance_blocks(self) -> None:
        new_active = self.solution.policy.advance(self.cursor, self.active)
        if new_active > self.active:
            self.satisfied_up_to = max(self.satisfied_up_to, new_active - 1)
            self.active = new_active

    @property
    def done(self) -> bool:
        return (self.active > self.solution.policy.block_count
                or self.mdp.states[self.cursor].is_leaf)

    def next_control(self) -> Optional[int]:
        """Control index to apply at the current stage boundary, or None."""
        if self.done:
            return None
        state = self.mdp.states[self.cursor]
        if state.enabled == (NU,):
            raise StrategyStateError(
                f"state {self.cursor} is mid-chain; advance through the dummy "
                f"action before requesting a control")
        return self.solution.policy.action(self.cursor, self.active)

    def observe(self, u_index: int, measured: tuple[float, float],
                noise: NoiseModel) -> int:
        """Consume one gyroscope interval and move the cursor one stage."""
        u = self.mdp.control_inputs[u_index]
        lo, hi = measured
        cell = None
        tol = 1e-9 + 1e-9 * max(1.0, abs(u))
        for ci, (clo, chi) in enumerate(noise.cells):
            if abs(lo - (u + clo)) <= tol and abs(hi - (u + chi)) <= tol:
                cell = ci
                break
        if cell is None:
            raise SensorContractError(
                f"measured interval [{lo}, {hi}] does not align with any "
                f"noise cell around u={u}")
        return self.observe_cell(u_index, cell)

    def observe_cell(self, u_index: int, cell: int) -> int:
        state = self.mdp.states[self.cursor]
        if u_index not in state.enabled:
            raise StrategyStateError(
                f"control index {u_index} not enabled at state {self.cursor}")
        dist = self.mdp.transitions[(self.cursor, u_index)]
        self.cursor = dist[cell][0]
        self.visited.append(self.cursor)
        self._advance_blocks()
        # run down the dummy-action chain to the next decision point
        while (not self.mdp.states[self.cursor].is_leaf
               and self.mdp.states[self.cursor].enabled == (NU,)):
            self.cursor = self.mdp.transitions[(self.cursor, NU)][0][0]
            self.visited.append(self.cursor)
            self._advance_blocks()
        return self.cursor


@dataclass
class SimTrace:
    """One simulated deployment of the continuous system."""

    seed: int
    controls: list[float]        # applied angular velocities u_k + eps_k
    nominal: list[float]         # nominal controls u_k
    cells: list[int]             # measured noise cell per stage
    positions: np.ndarray        # dense position samples, shape (m, 2)
    word: list[frozenset[str]]
    satisfied: bool
    satisfied_up_to: int
    done_early: bool
    visited: list[int]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "controls": self.controls,
            "nominal": self.nominal,
            "cells": self.cells,
            "positions": self.positions.tolist(),
            "word": [sorted(w) for w in self.word],
            "satisfied": self.satisfied,
            "satisfied_up_to": self.satisfied_up_to,
            "done_early": self.done_early,
            "visited": self.visited,
        }


def check_word(word: list[frozenset[str]], formula: Formula) -> bool:
    """Evaluate the until chain on a single word (stutter-forever tail).

    On one path each block's probability is 0 or 1; the block's threshold
    comparator is applied to that degenerate value.
    """
    blocks = formula.blocks
    f = len(blocks)

    def lit_holds(lit, letter) -> bool:
        return (lit.base in letter) == lit.positive

    def clause_holds(clause, letter) -> bool:
        if clause.kind == "and":
            return all(lit_holds(l, letter) for l in clause.literals)
        return any(lit_holds(l, letter) for l in clause.literals)

    def psi_holds(b, letter) -> bool:
        return any(clause_holds(c, letter) for c in b.psi)

    def phi_holds(b, letter) -> bool:
        return all(clause_holds(c, letter) for c in b.phi)

    memo: dict[tuple[int, int], bool] = {}

    def sat_from(pos: int, jb: int) -> bool:
        if jb > f:
            return True
        key = (pos, jb)
        if key in memo:
            return memo[key]
        b = blocks[jb - 1]
        reached = False
        for k in range(pos, len(word)):
            if psi_holds(b, word[k]) and sat_from(k, jb + 1):
                reached = True
                break
            if not phi_holds(b, word[k]):
                break
        result = b.meets_threshold(1.0 if reached else 0.0)
        memo[key] = result
        return result

    if not word:
        raise ValueError("empty word")
    return sat_from(0, 1)


def simulate(
    env: Environment,
    controls: ControlSet,
    noise: NoiseModel,
    dt: float,
    stages: int,
    mdp: TreeMdp,
    solution: Solution,
    formula_over_pi: Formula,
    seed: int,
    rng: Optional[np.random.Generator] = None,
    sample_steps: int = WORD_SAMPLE_STEPS,
) -> SimTrace:
    """Simulate the continuous noisy vehicle under the synthesized strategy.

    After the strategy reports done (chain decided or leaf reached) the
    remaining stages are flown straight (u = 0): the verdict is already
    fixed and only the word needs completing.
    """
    if rng is None:
        rng = trial_rng(seed)
    st = Strategy(solution=solution, mdp=mdp)
    pose = mdp.q_init
    ts = np.linspace(0.0, dt, sample_steps + 1)
    chunks = []
    applied, nominal, cells = [], [], []
    done_early = False
    for k in range(stages):
        u_idx = st.next_control()
        if u_idx is None:
            done_early = True
            u = 0.0
        else:
            u = controls.inputs[u_idx]
        eps = float(rng.uniform(-noise.eps_max, noise.eps_max))
        w = u + eps
        seg = integrate_arc(pose, w, dt)
        pts = seg.positions_at(ts)
        chunks.append(pts if not chunks else pts[1:])
        cell = noise.cell_of(eps)
        nominal.append(u)
        applied.append(w)
        cells.append(cell)
        if u_idx is not None:
            st.observe_cell(u_idx, cell)
        pose = seg.end
    positions = np.vstack(chunks) if chunks else np.array([[pose.x, pose.y]])
    word = word_of_trace(positions, env)
    return SimTrace(
        seed=seed, controls=applied, nominal=nominal, cells=cells,
        positions=positions, word=word,
        satisfied=check_word(word, formula_over_pi),
        satisfied_up_to=st.satisfied_up_to,
        done_early=done_early, visited=st.visited,
    )


@dataclass
class EstimateResult:
    frequency: float
    trials: int
    wilson_low: float
    wilson_high: float

    def upper_conf(self, z: float) -> float:
        """Frequency plus z Wilson standard errors."""
        return wilson_interval(self.frequency, self.trials, z)[1]

    def to_dict(self) -> dict:
        return {"frequency": self.frequency, "trials": self.trials,
                "wilson95": [self.wilson_low, self.wilson_high]}


def wilson_interval(p_hat: float, n: int, z: float = 1.96) -> tuple[float, float]:
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2 * n)) / denom
    half = z * math.sqrt(p_hat * (1 - p_hat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def estimate(
    env: Environment,
    controls: ControlSet,
    noise: NoiseModel,
    dt: float,
    stages: int,
    mdp: TreeMdp,
    solution: Solution,
    formula_over_pi: Formula,
    trials: int,
    seed: int,
    sample_steps: int = WORD_SAMPLE_STEPS,
) -> EstimateResult:
    """Empirical satisfaction frequency over independent simulations."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    hits = 0
    for t in range(trials):
        trace = simulate(env, controls, noise, dt, stages, mdp, solution,
                         formula_over_pi, seed, rng=trial_rng(seed, t),
                         sample_steps=sample_steps)
        hits += trace.satisfied
    freq = hits / trials
    lo, hi = wilson_interval(freq, trials)
    return EstimateResult(frequency=freq, trials=trials,
                          wilson_low=lo, wilson_high=hi)
