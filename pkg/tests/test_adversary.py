import unittest
import sys
import os

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.adversary import (
    AdversaryState,
    DimsSchedule,
    LazyAdversary,
    finalize,
    fully_adaptive_schedule,
    illustration_schedule,
    multi_batch_schedule,
    respond_batch,
    reveal_policy,
)
from core.errors import AdversaryDefeated
from core.geometry import sector_contains
from core.learner import baseline_batch_learner
from core.mdp import Family, at_start, rescaled_projection
from core.protocol import QueryBatch, run_protocol

GAMMA = 0.9


def start_state(d, schedule, family=Family.PE, K=None, **kwargs):
    return AdversaryState.start(d, GAMMA, family, "multi_batch", K or len(schedule), seed=7,
                                schedule=schedule, **kwargs)


def batch(round_index, actions):
    return QueryBatch(round_index, tuple(at_start(a) for a in actions))


class TestSchedules(unittest.TestCase):
    def test_theoretical_examples(self):
        self.assertEqual(multi_batch_schedule(256, 2).dims, (4, 2))
        self.assertEqual(multi_batch_schedule(65536, 2).dims, (16, 2))
        self.assertEqual(multi_batch_schedule(8, 1).dims, (2,))

    def test_theoretical_plateau_is_flagged(self):
        schedule = multi_batch_schedule(16, 3)
        self.assertTrue(schedule.clamped)

    def test_geometric(self):
        self.assertEqual(multi_batch_schedule(16, 2, mode="geometric").dims, (8, 4))
        self.assertTrue(multi_batch_schedule(4, 3, mode="geometric").clamped)

    def test_fully_adaptive(self):
        self.assertEqual(fully_adaptive_schedule(3).dims, (2, 1))
        self.assertEqual(fully_adaptive_schedule(2).dims, (1,))
        self.assertEqual(illustration_schedule().dims, (2, 1))

    def test_override_validation(self):
        self.assertEqual(multi_batch_schedule(8, 2, override=[5, 3]).source, "override")
        for bad in ([3, 3], [9, 1], [2]):
            with self.assertRaises(ValueError):
                multi_batch_schedule(8, 2, override=bad)


class TestRespond(unittest.TestCase):
    def test_complement_round(self):
        state = start_state(4, DimsSchedule((1,), "override"))
        records = respond_batch(state, batch(1, list(np.eye(4)[:3])))
        B1 = state.chain_so_far.subspaces[0]
        self.assertEqual(B1.dim, 1)
        self.assertEqual(state.commitments[0].method, "complement")
        self.assertAlmostEqual(abs(float(B1.basis[3, 0])), 1.0)
        for record in records:
            self.assertEqual(record.reward, 0.0)
            assert_allclose(record.policy_eval, np.zeros(4), atol=1e-12)

    def test_generic_round_feedback_is_rescaled_projection(self):
        state = start_state(3, illustration_schedule())
        actions = [np.array([0.9, 0.1, 0.1]), np.array([0.1, 0.9, 0.1]), np.array([0.1, 0.1, 0.9])]
        records = respond_batch(state, batch(1, actions))
        B1 = state.chain_so_far.subspaces[0]
        self.assertEqual(B1.dim, 2)
        for a, record in zip(actions, records):
            self.assertFalse(sector_contains(B1, GAMMA, a))
            assert_array_equal(record.policy_eval, rescaled_projection(a, B1, GAMMA))
            assert_array_equal(record.successor, a)

    def test_rounds_must_be_consecutive(self):
        state = start_state(4, DimsSchedule((2, 1), "override"))
        with self.assertRaises(ValueError):
            respond_batch(state, batch(2, [np.eye(4)[0]]))

    def test_exhausted_schedule_raises_when_asked(self):
        state = start_state(2, fully_adaptive_schedule(2), K=2, on_defeat="raise")
        respond_batch(state, batch(1, [np.eye(2)[0]]))
        with self.assertRaises(AdversaryDefeated) as ctx:
            respond_batch(state, batch(2, [np.eye(2)[1]]))
        self.assertEqual(ctx.exception.round_index, 2)

    def test_exhausted_schedule_commits_truthfully(self):
        state = start_state(2, fully_adaptive_schedule(2), K=2)
        respond_batch(state, batch(1, [np.eye(2)[0]]))
        w = state.chain_so_far.innermost.basis[:, 0]
        records = respond_batch(state, batch(2, [w]))
        self.assertTrue(state.defeated)
        self.assertAlmostEqual(records[0].reward, 1 - GAMMA)
        with self.assertRaises(AdversaryDefeated):
            finalize(state)


class TestCertificates(unittest.TestCase):
    def _play(self, family, d=8, K=2, n=4, seed=1):
        state = AdversaryState.start(d, GAMMA, family, "multi_batch", K, seed=seed,
                                     schedule=multi_batch_schedule(d, K, mode="geometric"))
        learner = baseline_batch_learner("random_unit", n, seed, d=d, gamma=GAMMA, family=family)
        run_protocol(LazyAdversary(state), learner, K, family)
        return state, finalize(state)

    def test_pe_session(self):
        state, cert = self._play(Family.PE)
        self.assertAlmostEqual(cert.q_gap, 2.0)
        self.assertTrue(cert.replay_match)
        self.assertTrue(cert.sign_blind)
        self.assertEqual(cert.transcript.n_total, 8)
        self.assertEqual([c.round for c in cert.commitments], [1, 2])

    def test_bpi_session_value_gap(self):
        _, cert = self._play(Family.BPI, seed=3)
        self.assertTrue(cert.replay_match)
        self.assertAlmostEqual(cert.value_gap, 2.0, delta=1e-8)

    def test_revealed_policy_fixes_w(self):
        state = start_state(4, DimsSchedule((2,), "override"))
        respond_batch(state, batch(1, [np.eye(4)[0]]))
        policy = reveal_policy(state)
        w = state.committed_w
        assert_allclose(policy(w), w)
        assert_array_equal(finalize(state).w, w)

    def test_certificate_dict(self):
        _, cert = self._play(Family.PE, d=6, n=2)
        data = cert.to_dict()
        self.assertTrue(data["sign_pair"])
        self.assertEqual(data["family"], "PE")
        self.assertEqual(len(data["w"]), 6)

    def test_step_is_pe_only(self):
        state = start_state(3, illustration_schedule(), family=Family.BPI)
        with self.assertRaises(ValueError):
            LazyAdversary(state).step(at_start(np.eye(3)[0]))

    def test_finalize_needs_a_round(self):
        with self.assertRaises(ValueError):
            finalize(start_state(3, illustration_schedule()))


class TestFullyAdaptive(unittest.TestCase):
    def test_dimension_drops_by_one(self):
        d = 5
        state = AdversaryState.start(d, GAMMA, Family.PE, "fully_adaptive", d - 1, seed=0)
        rng = np.random.default_rng(0)
        for k in range(1, d):
            a = rng.standard_normal(d)
            respond_batch(state, batch(k, [a / np.linalg.norm(a)]))
        self.assertEqual(state.chain_so_far.dims, [4, 3, 2, 1])
        self.assertTrue(all(c.method == "complement" for c in state.commitments))
        self.assertTrue(finalize(state).replay_match)

    def test_dependent_queries_keep_nesting(self):
        state = AdversaryState.start(3, GAMMA, Family.PE, "fully_adaptive", 2, seed=0)
        a = np.array([0.6, 0.8, 0.0])
        respond_batch(state, batch(1, [a]))
        respond_batch(state, batch(2, [0.5 * a]))
        self.assertEqual(state.chain_so_far.dims, [2, 1])
        self.assertTrue(state.chain_so_far.subspaces[0].contains_subspace(state.chain_so_far.subspaces[1]))


if __name__ == '__main__':
    unittest.main()
