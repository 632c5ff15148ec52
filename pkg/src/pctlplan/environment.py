"""Region maps, the doubled proposition alphabet, negation elimination,
and labeling of uncertainty discs along trajectory arcs.

Regions are unions of convex polygons.  A proposition name labels a
region; every proposition is doubled into a positive symbol (the disc is
entirely inside the region) and a negative symbol (the disc is entirely
outside).  A disc straddling a region boundary carries neither symbol.
Disc-in-polygon and disc-disjoint tests are exact edge-distance
computations; sampling appears only in test oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .vehicle import ArcSegment


@dataclass(frozen=True)
class ExtProp:
    """A proposition with polarity: inside-region (positive) or outside."""

    base: str
    positive: bool

    def __str__(self) -> str:
        return self.base if self.positive else "!" + self.base

    @property
    def negation(self) -> "ExtProp":
        return ExtProp(self.base, not self.positive)


# --- minimal NNF boolean AST for the negation-elimination transform ------

@dataclass(frozen=True)
class Prop:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "BoolExpr"


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


BoolExpr = Union[Prop, Neg, And, Or, ExtProp]


class NotInNnf(ValueError):
    def __init__(self, subformula):
        super().__init__(f"negation over a non-proposition subformula: {subformula!r}")
        self.subformula = subformula


def pos_translate(f: BoolExpr) -> BoolExpr:
    """Replace literals pi / !pi by their polarity symbols.

    Input must be in NNF (negation only directly over propositions); the
    output contains no negation nodes, and substituting each polarity
    symbol back recovers the input exactly (see ``unpos_translate``).
    """
    if isinstance(f, Prop):
        return ExtProp(f.name, True)
    if isinstance(f, Neg):
        if not isinstance(f.operand, Prop):
            raise NotInNnf(f.operand)
        return ExtProp(f.operand.name, False)
    if isinstance(f, And):
        return And(tuple(pos_translate(a) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(pos_translate(a) for a in f.args))
    raise TypeError(f"unexpected node in a formula over plain propositions: {f!r}")


def unpos_translate(f: BoolExpr) -> BoolExpr:
    """Inverse of ``pos_translate``."""
    if isinstance(f, ExtProp):
        return Prop(f.base) if f.positive else Neg(Prop(f.base))
    if isinstance(f, And):
        return And(tuple(unpos_translate(a) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(unpos_translate(a) for a in f.args))
    raise TypeError(f"unexpected node in a translated formula: {f!r}")


# --- convex polygon geometry ---------------------------------------------

class ConvexPolygon:
    """Convex polygon with precomputed inward edge normals.

    For a convex polygon, a disc of radius r lies inside iff the center
    is inside with inward margin >= r on every edge; the disc is disjoint
    iff the center is outside and its distance to every edge segment
    exceeds r.
    """

    def __init__(self, vertices: Sequence[Sequence[float]]):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ValueError(f"polygon needs >= 3 planar vertices, got shape {v.shape}")
        area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
        if abs(area2) < 1e-12:
            raise ValueError("degenerate polygon (zero area)")
        if area2 < 0:  # normalize to counter-clockwise
            v = v[::-1]
        edges = np.roll(v, -1, axis=0) - v
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if np.any(cross < -1e-12):
            raise ValueError("polygon is not convex")
        self.vertices = v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        if np.any(lengths < 1e-15):
            raise ValueError("repeated polygon vertices")
        # inward unit normal of each CCW edge is the left normal
        self._normals = np.column_stack((-edges[:, 1], edges[:, 0])) / lengths[:, None]
        self._edge_starts = v
        self._edge_vecs = edges
        self._edge_len2 = lengths**2

    def signed_margins(self, pts: np.ndarray) -> np.ndarray:
        """(m,) inward margin: min over edges of signed distance (>=0 inside)."""
        d = np.einsum("mk,ek->me", pts, self._normals) - np.einsum(
            "ek,ek->e", self._edge_starts, self._normals
        )
        return d.min(axis=1)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.signed_margins(pts) >= 0.0

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        """(m,) distance from each point to the polygon boundary."""
        rel = pts[:, None, :] - self._edge_starts[None, :, :]
        t = np.einsum("mek,ek->me", rel, self._edge_vecs) / self._edge_len2
        t = np.clip(t, 0.0, 1.0)
        proj = self._edge_starts[None, :, :] + t[:, :, None] * self._edge_vecs[None, :, :]
        return np.hypot(*(pts[:, None, :] - proj).transpose(2, 0, 1)).min(axis=1)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (
            float(self.vertices[:, 0].min()), float(self.vertices[:, 1].min()),
            float(self.vertices[:, 0].max()), float(self.vertices[:, 1].max()),
        )


class Environment:
    """Bounded rectangular world with named regions of interest.

    ``regions`` maps a proposition name to the list of convex polygons
    whose union interprets it.
    """

    def __init__(self, bounds: Sequence[float], regions: dict[str, list]):
        xmin, ymin, xmax, ymax = map(float, bounds)
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"bad bounds rectangle: {bounds!r}")
        self.bounds = (xmin, ymin, xmax, ymax)
        self.regions: dict[str, list[ConvexPolygon]] = {}
        for name, polys in regions.items():
            built = [p if isinstance(p, ConvexPolygon) else ConvexPolygon(p) for p in polys]
            for p in built:
                bx0, by0, bx1, by1 = p.bbox
                if bx0 < xmin - 1e-9 or by0 < ymin - 1e-9 or bx1 > xmax + 1e-9 or by1 > ymax + 1e-9:
                    raise ValueError(f"region {name!r} polygon leaves the world bounds")
            self.regions[name] = built
        self.propositions = tuple(sorted(self.regions))

    # -- point / disc classification (vectorized over points) ------------

    def membership(self, pts: np.ndarray) -> dict[str, np.ndarray]:
        """For each proposition, which points lie in its region union."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        px0, py0 = pts.min(axis=0)
        px1, py1 = pts.max(axis=0)
        out = {}
        for name, polys in self.regions.items():
            inside = np.zeros(len(pts), dtype=bool)
            for p in polys:
                bx0, by0, bx1, by1 = p.bbox
                if bx0 > px1 or bx1 < px0 or by0 > py1 or by1 < py0:
                    continue
                inside |= p.contains(pts)
            out[name] = inside
        return out

    def disc_labels(self, pts: np.ndarray, r: float) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Per proposition: (disc inside union, disc disjoint from union).

        Inside-union is tested per polygon (disc within one convex part);
        with overlapping parts this is conservative, which keeps every
        claimed label sound.
        """
        if r < 0.0:
            raise ValueError(f"disc radius must be >= 0, got {r}")
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        px0, py0 = pts.min(axis=0)
        px1, py1 = pts.max(axis=0)
        out = {}
        for name, polys in self.regions.items():
            pos = np.zeros(len(pts), dtype=bool)
            neg = np.ones(len(pts), dtype=bool)
            for p in polys:
                bx0, by0, bx1, by1 = p.bbox
                gap_x = max(bx0 - px1, px0 - bx1, 0.0)
                gap_y = max(by0 - py1, py0 - by1, 0.0)
                if math.hypot(gap_x, gap_y) > r:
                    continue  # every query disc is disjoint from this polygon
                margins = p.signed_margins(pts)
                inside = margins >= 0.0
                pos |= margins >= r
                # cheap bbox distance rules most points disjoint before the
                # exact per-edge distance is needed
                bx0, by0, bx1, by1 = p.bbox
                dx = np.maximum(np.maximum(bx0 - pts[:, 0], pts[:, 0] - bx1), 0.0)
                dy = np.maximum(np.maximum(by0 - pts[:, 1], pts[:, 1] - by1), 0.0)
                disjoint = ~inside & (np.hypot(dx, dy) > r)
                unsure = ~inside & ~disjoint
                if unsure.any():
                    disjoint[unsure] = p.boundary_distance(pts[unsure]) > r
                neg &= disjoint
            out[name] = (pos, neg)
        return out

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "regions": {
                name: [p.vertices.tolist() for p in polys]
                for name, polys in self.regions.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        return cls(d["bounds"], d["regions"])


def load_environment(path) -> Environment:
    with open(path) as fh:
        return Environment.from_dict(json.load(fh))


def interp(e: ExtProp, env: Environment):
    """Point-membership test of a polarity symbol's interpretation.

    Positive polarity is the region union; negative is its complement
    within the world.  An absent region name denotes the empty set.
    """
    polys = env.regions.get(e.base, [])

    def test(pt) -> bool:
        pts = np.atleast_2d(np.asarray(pt, dtype=float))
        inside = any(bool(p.contains(pts)[0]) for p in polys)
        return inside if e.positive else not inside

    return test


def label_disc(center, r: float, env: Environment) -> frozenset[ExtProp]:
    """All polarity symbols valid for the whole disc D(center, r)."""
    pts = np.atleast_2d(np.asarray(center, dtype=float))
    labels = set()
    for name, (pos, neg) in env.disc_labels(pts, r).items():
        if pos[0]:
            labels.add(ExtProp(name, True))
        if neg[0]:
            labels.add(ExtProp(name, False))
    return frozenset(labels)


@dataclass(frozen=True)
class LabelSeq:
    """Maximal constant-label sub-intervals tiling one stage [0, dt]."""

    entries: tuple[tuple[frozenset[ExtProp], float, float], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty label sequence")
        for (ta, lo, hi), (tb, lo2, _) in zip(self.entries, self.entries[1:]):
            if ta == tb:
                raise ValueError("consecutive entries with equal label sets")
            if abs(hi - lo2) > 1e-9:
                raise ValueError("label intervals do not tile the stage")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


# Scan resolution for bracketing label-change events along an arc; the
# exact event time is then refined by bisection.
TRACE_SCAN_STEPS = 1024
TRACE_BISECT_TOL = 1e-6


def _keys_at(seg: ArcSegment, ts: np.ndarray, r: float, env: Environment,
             names) -> np.ndarray:
    """Integer label keys (bit 2i = positive, 2i+1 = negative) per sample."""
    raw = env.disc_labels(seg.positions_at(ts), r)
    keys = np.zeros(len(ts), dtype=np.int64)
    for i, n in enumerate(names):
        pos, neg = raw[n]
        keys |= pos.astype(np.int64) << (2 * i)
        keys |= neg.astype(np.int64) << (2 * i + 1)
    return keys


def trace_labels(seg: ArcSegment, r: float, env: Environment,
                 scan_steps: int = TRACE_SCAN_STEPS) -> LabelSeq:
    """Sequence of disc label sets along one arc.

    Change events are bracketed by the scan and refined by two rounds of
    64-way subdivision (resolution ~dt * 2.4e-7, below the 1e-6 s target),
    batched into one vectorized evaluation per round.
    """
    names = env.propositions
    ts = np.linspace(0.0, seg.dt, scan_steps + 1)
    keys = _keys_at(seg, ts, r, env, names)

    # brackets: (lo, hi, key_left, key_right) around each change
    brackets = [(ts[j - 1], ts[j], keys[j - 1], keys[j])
                for j in range(1, len(ts)) if keys[j] != keys[j - 1]]
    fan = 64
    for _ in range(2):
        if not brackets:
            break
        grids = [np.linspace(lo, hi, fan + 1) for lo, hi, _, _ in brackets]
        flat = np.concatenate(grids)
        flat_keys = _keys_at(seg, flat, r, env, names)
        refined = []
        off = 0
        for (lo, hi, kl, kr), grid in zip(brackets, grids):
            sub = flat_keys[off:off + fan + 1]
            off += fan + 1
            # first grid point whose key differs from the left key
            idx = next(i for i in range(1, fan + 1) if sub[i] != kl)
            refined.append((grid[idx - 1], grid[idx], kl, sub[idx]))
        brackets = refined

    def key_to_set(key: int) -> frozenset[ExtProp]:
        out = set()
        for i, n in enumerate(names):
            if key & (1 << (2 * i)):
                out.add(ExtProp(n, True))
            if key & (1 << (2 * i + 1)):
                out.add(ExtProp(n, False))
        return frozenset(out)

    entries: list[list] = [[keys[0], 0.0, None]]
    for lo, hi, kl, kr in brackets:
        t_change = 0.5 * (lo + hi)
        if kr == entries[-1][0]:
            continue
        entries[-1][2] = t_change
        entries.append([kr, t_change, None])
    entries[-1][2] = seg.dt
    # merge any change-and-back artifacts within one scan step
    merged: list[list] = []
    for e in entries:
        if merged and merged[-1][0] == e[0]:
            merged[-1][2] = e[2]
        else:
            merged.append(e)
    return LabelSeq(tuple((key_to_set(k), lo, hi) for k, lo, hi in merged))


def word_of_trace(positions: Iterable, env: Environment) -> list[frozenset[str]]:
    """Word over 2^Pi generated by a densely sampled position sequence.

    Letters are sets of proposition names satisfied at the point; a new
    letter is appended only when the set changes.  The final letter is
    understood to repeat forever.
    """
    pts = np.atleast_2d(np.asarray(list(positions), dtype=float))
    member = env.membership(pts)
    names = env.propositions
    stacked = np.column_stack([member[n] for n in names]) if names else np.zeros((len(pts), 0), bool)
    word: list[frozenset[str]] = []
    prev = None
    changed = np.ones(len(pts), dtype=bool)
    changed[1:] = np.any(stacked[1:] != stacked[:-1], axis=1)
    for j in np.flatnonzero(changed):
        letter = frozenset(n for i, n in enumerate(names) if stacked[j, i])
        if letter != prev:
            word.append(letter)
            prev = letter
    return word
