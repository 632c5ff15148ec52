"""Dubins vehicle kinematics, gyroscope noise quantization, and the
reachability tree of positive-probability trajectories.

The vehicle is a unicycle with unit forward speed:

    x' = cos(theta),  y' = sin(theta),  theta' = w

where w is the applied angular velocity, constant over each stage of
length dt.  Nominal controls come from the three-element set
{-1/rho, 0, +1/rho}; actuator noise is uniform on [-eps_max, eps_max]
and quantized into n equal gyroscope measurement cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi

# Below this |w| the arc is integrated as a straight line to avoid
# catastrophic cancellation in the sin/cos quotients.
TOLERANCE_STRAIGHT = 1e-9


def wrap_angle(theta: float) -> float:
    """Normalize an angle into [0, 2*pi)."""
    theta = math.fmod(theta, TWO_PI)
    if theta < 0.0:
        theta += TWO_PI
    return theta if theta < TWO_PI else 0.0


@dataclass(frozen=True)
class Pose:
    """Vehicle configuration (x, y, theta) in SE(2), theta in [0, 2*pi)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        for v in (self.x, self.y, self.theta):
            if not math.isfinite(v):
                raise ValueError(f"non-finite pose component: {v!r}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ControlSet:
    """Nominal angular-velocity inputs {-1/rho, 0, +1/rho}."""

    rho: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0.0):
            raise ValueError(f"minimum turn radius must be positive, got {self.rho!r}")

    @property
    def inputs(self) -> tuple[float, float, float]:
        return (-1.0 / self.rho, 0.0, 1.0 / self.rho)

    def __len__(self) -> int:
        return 3


@dataclass(frozen=True)
class NoiseModel:
    """Uniform actuator noise on [-eps_max, eps_max] split into n equal cells.

    Each cell carries probability mass exactly 1/n; ``reps[i]`` is the
    midpoint of ``cells[i]`` and is the representative applied-noise value
    of the quantized system.
    """

    eps_max: float
    n: int
    cells: tuple[tuple[float, float], ...]
    reps: tuple[float, ...]

    @property
    def cell_width(self) -> float:
        return 2.0 * self.eps_max / self.n

    def cell_of(self, eps: float) -> int:
        """Index of the cell containing a noise draw eps."""
        if not -self.eps_max <= eps <= self.eps_max:
            raise ValueError(f"noise {eps} outside [-{self.eps_max}, {self.eps_max}]")
        if self.eps_max == 0.0:
            return 0
        i = int((eps + self.eps_max) / self.cell_width)
        return min(i, self.n - 1)


def make_noise_model(eps_max: float, n: int) -> NoiseModel:
    """Build the n-cell uniform quantization of [-eps_max, eps_max]."""
    if not (math.isfinite(eps_max) and eps_max >= 0.0):
        raise ValueError(f"eps_max must be >= 0, got {eps_max!r}")
    if n < 1:
        raise ValueError(f"cell count must be >= 1, got {n}")
    width = 2.0 * eps_max / n
    cells = []
    reps = []
    for i in range(n):
        lo = -eps_max + i * width
        hi = -eps_max + (i + 1) * width
        cells.append((lo, hi))
        reps.append((lo + hi) / 2.0)
    return NoiseModel(eps_max=eps_max, n=n, cells=tuple(cells), reps=tuple(reps))


@dataclass(frozen=True)
class ArcSegment:
    """One stage of motion: constant angular velocity w for duration dt.

    The end pose is the closed-form integral of the kinematics from
    ``start``; ``pose_at(t)`` gives the pose anywhere along the stage.
    """

    start: Pose
    w: float
    dt: float
    end: Pose = field(init=False)

    def __post_init__(self):
        if not math.isfinite(self.w):
            raise ValueError(f"non-finite angular velocity: {self.w!r}")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"duration must be positive, got {self.dt!r}")
        object.__setattr__(self, "end", self.pose_at(self.dt))

    def pose_at(self, t: float) -> Pose:
        """Pose at time t in [0, dt] along the arc."""
        if not 0.0 <= t <= self.dt * (1.0 + 1e-12):
            raise ValueError(f"t={t} outside [0, {self.dt}]")
        x, y, th = self.start.x, self.start.y, self.start.theta
        w = self.w
        if abs(w) < TOLERANCE_STRAIGHT:
            return Pose(x + t * math.cos(th), y + t * math.sin(th), th)
        return Pose(
            x + (math.sin(th + w * t) - math.sin(th)) / w,
            y - (math.cos(th + w * t) - math.cos(th)) / w,
            th + w * t,
        )

    def positions_at(self, ts: np.ndarray) -> np.ndarray:
        """(len(ts), 2) array of positions at the given times (vectorized)."""
        x, y, th = self.start.x, self.start.y, self.start.theta
        w = self.w
        if abs(w) < TOLERANCE_STRAIGHT:
            return np.column_stack((x + ts * math.cos(th), y + ts * math.sin(th)))
        ang = th + w * ts
        return np.column_stack(
            (x + (np.sin(ang) - math.sin(th)) / w,
             y - (np.cos(ang) - math.cos(th)) / w)
        )


def integrate_arc(start: Pose, w: float, dt: float) -> ArcSegment:
    """Closed-form integration of the kinematics under constant w for dt."""
    return ArcSegment(start=start, w=w, dt=dt)


# Time-sampling resolution for the worst-case uncertainty growth below.
UNCERTAINTY_SAMPLES = 1024

# Within-stage growth depends only on (u, cell, dt), not on the start pose:
# the two compared arcs start at the same pose, and Euclidean distance is
# invariant under the rigid motion that moves that pose to the origin.
_growth_cache: dict[tuple[float, float, float, float], float] = {}


def propagate_uncertainty(
    r_prev: float, start: Pose, u: float, cell: tuple[float, float],
    dt: float, beta_prev: float = 0.0,
) -> tuple[float, float]:
    """Worst-case uncertainty after one stage: (disc radius, heading bound).

    The true system's state at stage start differs from the nominal one by
    at most ``r_prev`` in position and ``beta_prev`` in heading.  Under any
    applied control the arcs it can fly decompose against the nominal arc
    into three worst-case contributions:

      * the start-position offset translates the whole arc: ``r_prev``;
      * the start-heading offset rotates the arc about its start point,
        displacing a unit-speed vehicle by at most ``beta_prev * dt``;
      * within the stage the applied control may sit anywhere in the
        observed cell while the nominal arc uses the representative; the
        worse cell endpoint bounds that residual (sampled over time).

    The heading mismatch itself grows by at most half the cell width
    per unit time, accumulated over the stage.
    """
    if r_prev < 0.0:
        raise ValueError(f"uncertainty radius must be >= 0, got {r_prev}")
    if beta_prev < 0.0:
        raise ValueError(f"heading bound must be >= 0, got {beta_prev}")
    lo, hi = cell
    rep = (lo + hi) / 2.0
    key = (u, lo, hi, dt)
    growth = _growth_cache.get(key)
    if growth is None:
        origin = Pose(0.0, 0.0, 0.0)
        ts = np.linspace(0.0, dt, UNCERTAINTY_SAMPLES + 1)
        ref = integrate_arc(origin, u + rep, dt).positions_at(ts)
        growth = 0.0
        for w in (u + lo, u + hi):
            other = integrate_arc(origin, w, dt).positions_at(ts)
            growth = max(growth, float(np.max(np.hypot(*(ref - other).T))))
        _growth_cache[key] = growth
    half_width = (hi - lo) / 2.0
    return r_prev + beta_prev * dt + growth, beta_prev + half_width * dt


@dataclass
class ReachNode:
    """One arc of the reachability tree (or the root, with no arc)."""

    pose: Pose
    stage: int
    u_index: Optional[int]  # index into ControlSet.inputs, None at root
    cell_index: Optional[int]  # noise cell index, None at root
    segment: Optional[ArcSegment]  # None at root
    parent: Optional["ReachNode"] = None
    _children: Optional[dict[tuple[int, int], "ReachNode"]] = None


class ReachTreeOverflow(RuntimeError):
    def __init__(self, max_nodes: int, depth: int):
        super().__init__(
            f"reachability tree exceeded the {max_nodes}-node ceiling "
            f"at depth K={depth}; reduce K or enable truncation"
        )
        self.max_nodes = max_nodes
        self.depth = depth


class ReachTree:
    """Tree of all positive-probability trajectories up to depth K.

    Children are expanded lazily: ``children(node)`` materializes the
    |U| * n child arcs of a node the first time it is called, so deep
    trees can be walked under a truncation rule without ever building
    the full (|U|*n)^K frontier.
    """

    def __init__(
        self,
        q_init: Pose,
        controls: ControlSet,
        noise: NoiseModel,
        dt: float,
        depth: int,
        truncate: Optional[Callable[[ReachNode], bool]] = None,
        max_nodes: int = 2_000_000,
    ):
        if depth < 0:
            raise ValueError(f"depth must be >= 0, got {depth}")
        if dt <= 0.0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.controls = controls
        self.noise = noise
        self.dt = dt
        self.depth = depth
        self.truncate = truncate
        self.max_nodes = max_nodes
        self.node_count = 1
        self.root = ReachNode(pose=q_init, stage=0, u_index=None,
                              cell_index=None, segment=None)

    def children(self, node: ReachNode) -> dict[tuple[int, int], ReachNode]:
        """Child arcs of a node, keyed (u_index, cell_index); expands lazily."""
        if node._children is not None:
            return node._children
        if node.stage >= self.depth or (self.truncate and self.truncate(node)):
            node._children = {}
            return node._children
        out: dict[tuple[int, int], ReachNode] = {}
        for ui, u in enumerate(self.controls.inputs):
            for ci, rep in enumerate(self.noise.reps):
                self.node_count += 1
                if self.node_count > self.max_nodes:
                    raise ReachTreeOverflow(self.max_nodes, self.depth)
                seg = integrate_arc(node.pose, u + rep, self.dt)
                out[(ui, ci)] = ReachNode(
                    pose=seg.end, stage=node.stage + 1, u_index=ui,
                    cell_index=ci, segment=seg, parent=node,
                )
        node._children = out
        return out

    def expand_all(self) -> None:
        """Eagerly expand the whole tree (feasible only for small K)."""
        stack = [self.root]
        while stack:
            stack.extend(self.children(stack.pop()).values())

    def iter_nodes(self):
        """All expanded nodes, depth-first in (u, cell) order."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node._children:
                stack.extend(reversed(list(node._children.values())))


def build_reach_tree(
    q_init: Pose,
    controls: ControlSet,
    noise: NoiseModel,
    dt: float,
    depth: int,
    truncate: Optional[Callable[[ReachNode], bool]] = None,
    max_nodes: int = 2_000_000,
) -> ReachTree:
    """Fully expanded reachability tree of depth K (eager)."""
    tree = ReachTree(q_init, controls, noise, dt, depth,
                     truncate=truncate, max_nodes=max_nodes)
    tree.expand_all()
    return tree
