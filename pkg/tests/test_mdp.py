import unittest
import sys
import os

import numpy as np
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import InvariantBreach
from core.geometry import Subspace, random_unit, sector_contains
from core.packing import GAMMA_FLOOR
from core.mdp import (
    START,
    Family,
    HardInstance,
    NestedChain,
    StateAction,
    at_start,
    bellman_apply,
    case_of,
    default_horizon,
    forced_policy,
    in_caps,
    random_chain,
    random_instance,
    reward,
    shell_image,
    stratified_state_actions,
    successor,
    target_policy,
    target_policy_action,
    true_q,
    value_of_policy,
    verify_realizability,
)

GAMMA = 0.9
E = np.eye(3)


def plane_instance(family=Family.PE, sign=1):
    """d=3, B_1 = span{e1, e2}, w = e1."""
    chain = NestedChain([Subspace.standard(3, 2)], w=E[0])
    return HardInstance(family, chain, sign, GAMMA)


def zero_q(sa):
    return 0.0


def seeded_instance(seed, family=None, sign=1):
    """A random instance of either family with a random nonincreasing chain."""
    rng = np.random.default_rng(seed)
    family = family or (Family.PE if rng.random() < 0.5 else Family.BPI)
    d = int(rng.integers(2, 9))
    K = int(rng.integers(1, min(d, 3) + 1))
    dims = sorted((int(x) for x in rng.integers(1, d + 1, size=K)), reverse=True)
    gamma = float(rng.uniform(0.87, 0.97))
    return random_instance(family, d, dims, gamma, sign, rng), rng


def near_w(inst, rng):
    """A ball point at cosine close to gamma or 1 from +w or -w."""
    w = np.asarray(inst.w)
    side = 1.0 if rng.random() < 0.5 else -1.0
    c = rng.uniform(inst.gamma - 0.01, 1.0)
    r = random_unit(inst.d, rng)
    r = r - (r @ w) * w
    n = float(np.linalg.norm(r))
    x = side * c * w
    if n > 1e-9:
        x = x + np.sqrt(max(0.0, 1.0 - c * c)) * r / n
    return rng.uniform(0.9, 1.0) * x / np.linalg.norm(x)


def branches(inst, x):
    """Every case predicate evaluated independently of case_of."""
    cap = in_caps(inst.w, inst.gamma, x)
    inside = [True] + [sector_contains(L, inst.gamma, x) for L in inst.levels]
    out = {"cap": cap, "ring": not cap and inside[-1]}
    for k in range(len(inst.levels)):
        out[f"shell-{k}"] = not cap and inside[k] and not inside[k + 1]
    return out


class TestChain(unittest.TestCase):
    def test_containment_enforced(self):
        with self.assertRaises(InvariantBreach):
            NestedChain([Subspace(E[0]), Subspace(E[1])])

    def test_w_must_be_unit(self):
        with self.assertRaises(InvariantBreach):
            NestedChain([Subspace.standard(3, 2)], w=0.9 * E[0])

    def test_w_must_lie_in_innermost(self):
        with self.assertRaises(InvariantBreach):
            NestedChain([Subspace.standard(3, 2)], w=E[2])

    def test_random_chain_is_nested(self):
        chain = random_chain(6, [4, 2, 1], np.random.default_rng(1))
        self.assertEqual(chain.dims, [4, 2, 1])
        self.assertAlmostEqual(float(np.linalg.norm(chain.w)), 1.0)

    def test_random_chain_rejects_growing_dims(self):
        with self.assertRaises(ValueError):
            random_chain(4, [1, 2], np.random.default_rng(0))

    def test_instance_round_trip(self):
        inst = random_instance(Family.BPI, 5, [3, 1], 0.95, -1, np.random.default_rng(7))
        again = HardInstance.from_dict(inst.to_dict())
        self.assertEqual(again.family, Family.BPI)
        self.assertEqual(again.sign, -1)
        assert_array_equal(again.w, inst.w)
        self.assertEqual(again.chain.subspaces, inst.chain.subspaces)

    def test_gamma_below_floor_rejected(self):
        with self.assertRaises(ValueError):
            HardInstance(Family.PE, NestedChain([Subspace.standard(3, 2)], w=E[0]), 1, 0.5)

    def test_gamma_floor_is_inclusive(self):
        chain = NestedChain([Subspace.standard(3, 2)], w=E[0])
        self.assertEqual(HardInstance(Family.PE, chain, 1, GAMMA_FLOOR).gamma, GAMMA_FLOOR)
        with self.assertRaises(ValueError):
            HardInstance(Family.PE, chain, 1, 0.86)

    def test_state_action_round_trip(self):
        sa = StateAction(np.array([0.1, 0.2, 0.0]), np.array([0.0, 0.5, 0.5]))
        self.assertEqual(StateAction.from_dict(sa.to_dict()).key(), sa.key())
        self.assertTrue(StateAction.from_dict(at_start(E[1]).to_dict()).at_start)


class TestDynamics(unittest.TestCase):
    def test_reward_at_w(self):
        self.assertAlmostEqual(reward(plane_instance(), at_start(E[0])), 1 - GAMMA)
        self.assertAlmostEqual(reward(plane_instance(sign=-1), at_start(E[0])), -(1 - GAMMA))

    def test_reward_orthogonal_to_w(self):
        self.assertEqual(reward(plane_instance(), at_start(E[1])), 0.0)

    def test_pe_successor_is_action(self):
        a = np.array([0.3, 0.4, 0.0])
        assert_array_equal(successor(plane_instance(), at_start(a)), a)

    def test_bpi_successor(self):
        inst = plane_instance(Family.BPI)
        assert_array_equal(successor(inst, at_start(E[2])), np.zeros(3))
        assert_array_equal(successor(inst, at_start(E[0])), E[0])

    def test_bpi_rejects_free_actions(self):
        with self.assertRaises(ValueError):
            successor(plane_instance(Family.BPI), StateAction(E[1], E[0]))

    def test_target_policy_examples(self):
        inst = plane_instance()
        assert_array_equal(target_policy_action(inst, E[2]), np.zeros(3))
        assert_array_equal(target_policy_action(inst, E[0]), E[0])
        assert_allclose(target_policy_action(inst, np.array([0.6, 0.0, 0.8])),
                        [0.6 / GAMMA, 0.0, 0.0])
        self.assertEqual(case_of(inst, np.array([0.6, 0.0, 0.8])), "shell-0")

    def test_target_policy_at_start_is_zero_action(self):
        assert_array_equal(target_policy_action(plane_instance(), START), np.zeros(3))

    def test_target_policy_only_for_pe(self):
        with self.assertRaises(ValueError):
            target_policy_action(plane_instance(Family.BPI), E[0])

    def test_ring_case(self):
        inst = plane_instance()
        x = 0.5 * np.array([0.95, 0.0, np.sqrt(1 - 0.95 ** 2)])
        self.assertEqual(case_of(inst, x), "ring")
        assert_allclose(target_policy_action(inst, x), [0.5 * 0.95 / GAMMA, 0.0, 0.0])

    def test_shell_image_inside_innermost(self):
        self.assertIsNone(shell_image(E[0], [Subspace.standard(3, 2), Subspace(E[0])], GAMMA))

    def test_true_q(self):
        self.assertEqual(true_q(plane_instance(), at_start(E[0])), 1.0)
        self.assertEqual(true_q(plane_instance(sign=-1), at_start(E[0])), -1.0)
        self.assertEqual(true_q(plane_instance(), at_start(E[1])), 0.0)


class TestBellman(unittest.TestCase):
    def test_true_q_is_fixed_point(self):
        rng = np.random.default_rng(5)
        for family in Family:
            inst = random_instance(family, 4, [3, 2], GAMMA, 1, rng)
            policy = target_policy(inst) if family is Family.PE else None
            for _ in range(50):
                a = rng.standard_normal(4)
                a = a / np.linalg.norm(a) * rng.uniform(0.0, 1.0)
                sa = at_start(a)
                self.assertAlmostEqual(bellman_apply(inst, policy, lambda q: true_q(inst, q), sa),
                                       true_q(inst, sa), delta=1e-12)

    def test_zero_q_outside_caps(self):
        self.assertEqual(bellman_apply(plane_instance(), None, zero_q, at_start(E[1])), 0.0)

    def test_zero_q_at_w(self):
        self.assertAlmostEqual(bellman_apply(plane_instance(), None, zero_q, at_start(E[0])), 1 - GAMMA)

    def test_stratified_samples_cover_every_branch(self):
        pairs = stratified_state_actions(plane_instance(), 8, np.random.default_rng(3))
        names = [name for name, _ in pairs]
        self.assertEqual(sorted(set(names)), ["cap+", "cap-", "ring", "shell-0", "shell-1"])
        self.assertEqual(names.count("ring"), 2)
        for _, sa in pairs:
            self.assertLessEqual(float(np.linalg.norm(sa.action)), 1.0 + 1e-9)

    def test_realizability_pe(self):
        inst = random_instance(Family.PE, 3, [2, 1], GAMMA, 1, np.random.default_rng(0))
        report = verify_realizability(inst, 1000, seed=0)
        self.assertTrue(report.passed)
        self.assertLessEqual(report.max_residual, 1e-9)
        self.assertIn("ring", report.strata)
        self.assertEqual(sum(report.cases.values()), 1000)
        self.assertIn("cap", report.cases)
        self.assertEqual(report.to_dict()["cases"], report.cases)

    def test_realizability_bpi_both_signs(self):
        for sign in (1, -1):
            inst = random_instance(Family.BPI, 4, [2], 0.87, sign, np.random.default_rng(sign + 10))
            report = verify_realizability(inst, 1000, seed=1)
            self.assertTrue(report.passed, report.to_dict())


class TestRandomInvariants(unittest.TestCase):
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_negating_sign_negates_reward_and_q(self, seed):
        inst, rng = seeded_instance(seed)
        flipped = inst.with_sign(-1)
        pairs = [sa for _, sa in stratified_state_actions(inst, 20, rng)]
        pairs += [at_start(near_w(inst, rng)) for _ in range(5)]
        for sa in pairs:
            self.assertEqual(reward(flipped, sa), -reward(inst, sa))
            self.assertEqual(true_q(flipped, sa), -true_q(inst, sa))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_images_stay_in_unit_ball(self, seed):
        inst, rng = seeded_instance(seed)
        points = [random_unit(inst.d, rng) * rng.uniform(0.0, 1.0) for _ in range(10)]
        points += [near_w(inst, rng) for _ in range(10)]
        for x in points:
            self.assertLessEqual(float(np.linalg.norm(successor(inst, at_start(x)))), 1.0 + 1e-9)
            if inst.family is Family.PE:
                self.assertLessEqual(float(np.linalg.norm(target_policy_action(inst, x))), 1.0 + 1e-9)
            else:
                self.assertLessEqual(float(np.linalg.norm(successor(inst, StateAction(x, x)))), 1.0 + 1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_every_state_has_exactly_one_case(self, seed):
        inst, rng = seeded_instance(seed)
        points = [random_unit(inst.d, rng) * rng.uniform(0.01, 1.0) for _ in range(20)]
        points += [near_w(inst, rng) for _ in range(10)]
        points += [sa.action for _, sa in stratified_state_actions(inst, 10, rng)]
        for x in points:
            held = [name for name, holds in branches(inst, x).items() if holds]
            self.assertEqual(len(held), 1, f"{held} at {x}")
            self.assertEqual(held[0], case_of(inst, x))

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), family=st.sampled_from(list(Family)),
           sign=st.sampled_from([1, -1]))
    def test_rollout_value_matches_q_within_tail(self, seed, family, sign):
        inst, rng = seeded_instance(seed, family, sign)
        a0 = near_w(inst, rng) if rng.random() < 0.5 else random_unit(inst.d, rng) * rng.uniform(0.0, 1.0)
        policy = target_policy(inst) if family is Family.PE else forced_policy(inst, a0)
        value = value_of_policy(inst, policy, START, first_action=a0)
        tail = inst.gamma ** default_horizon(inst.gamma)
        self.assertLessEqual(abs(value - true_q(inst, at_start(a0))), tail + 1e-12)


class TestValues(unittest.TestCase):
    def test_target_policy_value_at_start(self):
        inst = plane_instance()
        self.assertAlmostEqual(value_of_policy(inst, target_policy(inst), START), 0.0,
                               delta=GAMMA ** default_horizon(GAMMA))

    def test_bpi_optimal_value(self):
        inst = plane_instance(Family.BPI)
        value = value_of_policy(inst, forced_policy(inst, E[0]), START)
        self.assertAlmostEqual(value, 1.0, delta=2 * GAMMA ** default_horizon(GAMMA))

    def test_single_step_outside_caps(self):
        inst = plane_instance()
        self.assertEqual(value_of_policy(inst, target_policy(inst), START, horizon=1, first_action=E[1]), 0.0)

    def test_horizon_must_be_positive(self):
        inst = plane_instance()
        with self.assertRaises(ValueError):
            value_of_policy(inst, target_policy(inst), START, horizon=0)


if __name__ == '__main__':
    unittest.main()
