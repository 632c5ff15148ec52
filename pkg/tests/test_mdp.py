"""Tree-MDP construction from the reachability tree, validity, snapshots."""

from __future__ import annotations

import math

import numpy as np
import pytest

from pctlplan.environment import Environment, ExtProp, label_disc
from pctlplan.mdp import NU, MdpOverflow, TreeMdp, build_mdp, validate
from pctlplan.vehicle import (ControlSet, Pose, ReachTree, build_reach_tree,
                              make_noise_model)
from conftest import random_tree_mdp

SQUARE = [[2.0, 2.0], [4.0, 2.0], [4.0, 4.0], [2.0, 4.0]]


@pytest.fixture
def env() -> Environment:
    return Environment([0.0, 0.0, 12.0, 8.0], {"a": [SQUARE]})


def small_tree(depth=2, n=2, q=Pose(0.5, 3.0, 0.0)):
    return ReachTree(q, ControlSet(rho=3.0 / math.pi),
                     make_noise_model(0.06, n), 1.2, depth)


class TestBuildMdp:
    def test_valid_and_leaf_count_without_truncation(self, env):
        for depth, n in [(1, 2), (2, 2), (2, 3), (3, 2)]:
            m = build_mdp(small_tree(depth, n), env)
            assert validate(m) == []
            assert len(m.leaf_ids()) == (3 * n) ** depth

    def test_root_is_initial_state(self, env):
        m = build_mdp(small_tree(), env)
        s0 = m.states[m.s0]
        assert s0.parent is None and s0.stage == 0
        assert s0.labels == label_disc((0.5, 3.0), 0.0, env)

    def test_stage_boundaries_offer_all_controls(self, env):
        m = build_mdp(small_tree(), env)
        for s in m.states:
            if not s.is_leaf and s.enabled != (NU,):
                assert s.enabled == (0, 1, 2)
                for a in s.enabled:
                    dist = m.transitions[(s.id, a)]
                    assert len(dist) == m.n
                    assert all(p == pytest.approx(1.0 / m.n) for _, p in dist)

    def test_chain_intervals_tile_each_arc(self, env):
        m = build_mdp(small_tree(), env)
        by_arc: dict[int, list] = {}
        for s in m.states:
            if s.arc is not None:
                by_arc.setdefault(id(s.arc), []).append(s)
        for slices in by_arc.values():
            slices.sort(key=lambda s: s.t_lo)
            assert slices[0].t_lo == 0.0
            assert slices[-1].t_hi == pytest.approx(1.2)

    def test_absorbing_label_truncates(self, env):
        a_pos = frozenset({ExtProp("a", True)})
        full = build_mdp(small_tree(3, 2), env)
        cut = build_mdp(small_tree(3, 2), env, absorbing=a_pos)
        assert len(cut) < len(full)
        assert validate(cut) == []
        for s in cut.states:
            if ExtProp("a", True) in s.labels:
                assert s.is_leaf

    def test_required_label_truncates(self, env):
        a_neg = frozenset({ExtProp("a", False)})
        cut = build_mdp(small_tree(3, 2), env, required=a_neg)
        assert validate(cut) == []
        for s in cut.states:
            if ExtProp("a", False) not in s.labels:
                assert s.is_leaf

    def test_max_states_guard(self, env):
        with pytest.raises(MdpOverflow):
            build_mdp(small_tree(3, 3), env, max_states=50)

    def test_zero_depth_single_leaf(self, env):
        m = build_mdp(small_tree(0, 2), env)
        assert len(m) == 1 and m.states[0].is_leaf
        assert validate(m) == []


class TestSnapshot:
    def test_round_trip_geometric(self, env):
        m = build_mdp(small_tree(), env)
        clone = TreeMdp.from_dict(m.to_dict())
        assert len(clone) == len(m)
        assert clone.transitions == m.transitions
        for a, b in zip(clone.states, m.states):
            assert (a.id, a.stage, a.labels, a.enabled, a.is_leaf,
                    a.parent) == (b.id, b.stage, b.labels, b.enabled,
                                  b.is_leaf, b.parent)
            assert a.r == b.r and a.t_lo == b.t_lo and a.t_hi == b.t_hi

    def test_content_hash_stable_and_discriminating(self, env):
        m1 = build_mdp(small_tree(), env)
        m2 = build_mdp(small_tree(), env)
        m3 = build_mdp(small_tree(q=Pose(0.6, 3.0, 0.0)), env)
        assert m1.content_hash() == m2.content_hash()
        assert m1.content_hash() != m3.content_hash()

    def test_version_guard(self, env):
        d = build_mdp(small_tree(1, 2), env).to_dict()
        d["version"] = 999
        with pytest.raises(ValueError):
            TreeMdp.from_dict(d)


class TestValidateCatchesDamage:
    def test_detects_bad_probability_sum(self, rng):
        m = random_tree_mdp(rng)
        key = next(k for k in m.transitions if len(m.transitions[k]) > 1)
        m.transitions[key] = tuple((c, p * 0.5) for c, p in m.transitions[key])
        assert any("sum" in msg for msg in validate(m))

    def test_detects_orphan(self, rng):
        m = random_tree_mdp(rng)
        sid = m.states[-1].id
        m.states[sid].parent = None
        assert any("parent" in msg for msg in validate(m))

    def test_detects_extra_incoming_edge(self, rng):
        m = random_tree_mdp(rng)
        leaf = m.leaf_ids()[0]
        other = m.leaf_ids()[-1]
        if leaf != other:
            m.transitions[(leaf, NU)] = ((other, 1.0),)
            assert validate(m)

    def test_random_generator_output_is_valid(self, rng):
        for _ in range(25):
            m = random_tree_mdp(rng, depth=int(rng.integers(0, 4)))
            assert validate(m) == []
