import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enumeration import SoftmaxPolicy, enumerate_estimator, tiny_config
from multislot.core import ResponseKind
from multislot.models import CombinationConfig, FeatureSchema, ResponseModel
from multislot.replay import (
    LoggedSession,
    ParetoPoint,
    ReplayEstimate,
    ReplayLog,
    SupportError,
    brute_force_frontier,
    dominates,
    estimate,
    estimates_csv,
    exact_match_replay,
    full_is_estimate,
    full_trajectory_weights,
    hybrid_policy,
    kish_ess,
    low_ess_warning,
    merge_points,
    one_step_is_estimate,
    pareto_frontier,
    read_estimates_csv,
    sweep_points,
    variance_report,
)
from multislot.simulator import (
    GreedyPolicy,
    PointwiseGreedyPolicy,
    RandomPolicy,
    SimConfig,
    replay_contexts,
    rollout,
    sequential_greedy_oracle,
)

CLICK = ResponseKind.CLICK
# Extra items keep the window full on every slot, so uniform logging is exactly 1/K.
FULL = SimConfig(n_slots=6, n_items=8, k=3, embedding_dim=2, n_creators=3,
                 reward={CLICK: 1.0, ResponseKind.SKIP: -0.5})


@pytest.fixture(scope="module")
def random_log():
    eps = rollout(RandomPolicy(), FULL, 3000, 21, 1).episodes
    return eps, ReplayLog.from_episodes(eps, ("reward", "click", "skip"), FULL)


class TestLoggedSession:
    def test_validation(self):
        with pytest.raises(ValueError, match="same slots"):
            LoggedSession(0, [0, 1], [0.5], [[1.0], [0.0]])
        with pytest.raises(ValueError):
            LoggedSession(0, [0], [1.5], [[1.0]])
        with pytest.raises(ValueError):
            LoggedSession(0, [0], [0.5], [[math.inf]])
        with pytest.raises(ValueError):
            LoggedSession(0, [-1], [0.5], [[1.0]])

    def test_vector_rewards(self):
        s = LoggedSession(0, [0, 1], [0.5, 0.5], [1.0, 0.0])
        assert s.rewards.shape == (2, 1)
        assert len(s) == 2

    def test_log_needs_consistent_objectives(self):
        s = LoggedSession(0, [0], [0.5], [[1.0, 2.0]])
        with pytest.raises(ValueError):
            ReplayLog([s], ("reward",))
        with pytest.raises(ValueError):
            ReplayLog([], ("reward",))

    def test_session_without_observations_or_config(self):
        log = ReplayLog([LoggedSession(0, [0], [0.5], [[1.0]])])
        with pytest.raises(ValueError, match="neither"):
            log.target_probabilities(PointwiseGreedyPolicy())


class TestSelfEvaluation:
    @pytest.mark.parametrize("fn", [full_is_estimate, one_step_is_estimate])
    def test_equals_empirical_mean(self, random_log, fn):
        eps, log = random_log
        est = fn(log, RandomPolicy())
        np.testing.assert_allclose(est.values, log.empirical_mean(), rtol=1e-12)
        assert est.values[0] == pytest.approx(np.mean([ep.total_reward for ep in eps]), rel=1e-12)
        assert est.ess == pytest.approx(log.n_slots)

    def test_self_normalized_identity(self, random_log):
        _, log = random_log
        est = one_step_is_estimate(log, RandomPolicy(), self_normalize=True)
        np.testing.assert_allclose(est.values, log.empirical_mean(), rtol=1e-12)

    def test_exact_match_with_all_matches(self, random_log):
        _, log = random_log
        est = exact_match_replay(log, target=np.ones(log.mask.shape))
        per_slot_mean = log.rewards[log.mask].mean(axis=0)
        np.testing.assert_allclose(est.values, per_slot_mean, rtol=1e-12)


class TestWeights:
    def test_full_weights_are_powers_of_k(self, random_log):
        _, log = random_log
        t = log.target_probabilities(PointwiseGreedyPolicy())
        w = full_trajectory_weights(log, t)
        depth = np.arange(1, w.shape[1] + 1)
        matched = np.cumprod(log.actions == 0, axis=1).astype(bool)
        np.testing.assert_allclose(w, np.where(matched, 3.0 ** depth, 0.0), rtol=1e-12)

    def test_one_step_weights(self, random_log):
        _, log = random_log
        t = log.target_probabilities(PointwiseGreedyPolicy())
        w = t / log.logging
        np.testing.assert_allclose(w, np.where(log.actions == 0, 3.0, 0.0), rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 10_000))
    def test_bounds_under_uniform_logging(self, k, depth, seed):
        rng = np.random.default_rng(seed)
        sessions = [LoggedSession(m, rng.integers(k, size=depth), [1.0 / k] * depth, rng.random((depth, 1)))
                    for m in range(4)]
        log = ReplayLog(sessions)
        target = rng.dirichlet(np.ones(k), size=(4, depth))
        t = np.take_along_axis(target, log.actions[..., None], axis=2)[..., 0]
        w_full = full_trajectory_weights(log, t)
        assert np.all(t / log.logging <= k + 1e-12)
        assert np.all(w_full <= float(k) ** np.arange(1, depth + 1) + 1e-9)

    def test_zero_propensity_is_a_support_violation(self):
        log = ReplayLog([LoggedSession(0, [0, 0], [0.5, 0.0], [[1.0], [1.0]])])
        for fn in (full_is_estimate, one_step_is_estimate):
            with pytest.raises(SupportError):
                fn(log, target=np.ones((1, 2)))

    def test_target_shape_checked(self):
        log = ReplayLog([LoggedSession(0, [0], [0.5], [[1.0]])])
        with pytest.raises(ValueError, match="shape"):
            full_is_estimate(log, target=np.ones((2, 2)))
        with pytest.raises(ValueError):
            full_is_estimate(log)

    def test_kish_ess(self):
        assert kish_ess(np.ones(10)) == 10.0
        assert kish_ess(np.zeros(5)) == 0.0
        assert kish_ess(np.array([3.0, 0.0, 0.0])) == 1.0


class TestTargetProbabilities:
    @pytest.mark.parametrize("policy", [RandomPolicy(), PointwiseGreedyPolicy(), sequential_greedy_oracle(FULL)])
    def test_batch_equals_per_observation(self, random_log, policy):
        eps, log = random_log
        eps = eps[:200]
        fast = ReplayLog.from_episodes(eps, ("reward",), FULL).target_probabilities(policy)
        sessions = []
        for m, ep in enumerate(eps):
            obs = [o for o, _ in replay_contexts(FULL, ep)]
            sessions.append(LoggedSession(m, [r.action for r in ep.slots],
                                          [r.propensities[r.action] for r in ep.slots],
                                          [[r.reward] for r in ep.slots], observations=obs))
        slow = ReplayLog(sessions).target_probabilities(policy)
        np.testing.assert_array_equal(fast, slow)

    def test_sessions_without_window_ids(self, random_log):
        eps, log = random_log
        bare = [LoggedSession(s.index, s.actions, s.propensities, s.rewards, seed=s.seed) for s in log.sessions[:50]]
        a = ReplayLog(bare, log.objectives, FULL).target_probabilities(PointwiseGreedyPolicy())
        b = ReplayLog(bare, log.objectives, FULL)
        seq = np.zeros(a.shape)
        for m, s in enumerate(b.sessions):
            for i, obs in enumerate(b._observations(s)):
                seq[m, i] = PointwiseGreedyPolicy().propensities(obs)[s.actions[i]]
        np.testing.assert_array_equal(a, seq)

    def test_foreign_config_rejected(self, random_log):
        eps, _ = random_log
        other = SimConfig(n_slots=6, n_items=8, k=3, embedding_dim=2, n_creators=4)
        log = ReplayLog.from_episodes(eps[:5], ("reward",), other)
        with pytest.raises(ValueError, match="different simulator config"):
            log.target_probabilities(PointwiseGreedyPolicy())
        with pytest.raises(ValueError, match="different simulator config"):
            log.target_probabilities(RandomPolicy())

    def test_window_mismatch_rejected(self, random_log):
        _, log = random_log
        s = log.sessions[0]
        bad = [list(w) for w in s.window_ids]
        bad[2] = [7, 6, 5]
        forged = LoggedSession(0, s.actions, s.propensities, s.rewards, seed=s.seed, window_ids=bad)
        with pytest.raises(ValueError, match="does not match"):
            ReplayLog([forged], log.objectives, FULL).target_probabilities(PointwiseGreedyPolicy())


class TestUnbiasedness:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("make", [SoftmaxPolicy, lambda: sequential_greedy_oracle(tiny_config()),
                                      PointwiseGreedyPolicy, RandomPolicy])
    def test_full_trajectory_exact(self, seed, make):
        expected, truth = enumerate_estimator(tiny_config(), seed, make())
        assert abs(expected - truth) <= 1e-9

    def test_one_step_is_biased_somewhere(self):
        # The enumeration oracle separates the two estimators.
        gaps = [abs(e - t) for e, t in (enumerate_estimator(tiny_config(), s, SoftmaxPolicy(), one_step_is_estimate)
                                        for s in range(4))]
        assert max(gaps) > 1e-3


class TestNormalization:
    def test_slot_scale(self, random_log):
        _, log = random_log
        pol = PointwiseGreedyPolicy()
        t = log.target_probabilities(pol)
        a = one_step_is_estimate(log, target=t)
        b = one_step_is_estimate(log, target=t, normalization="slot")
        np.testing.assert_allclose(np.array(b.values) * FULL.n_slots, a.values, rtol=1e-12)
        assert b.normalization == "slot"
        with pytest.raises(ValueError):
            one_step_is_estimate(log, target=t, normalization="episode")

    def test_per_slot_sums_to_value(self, random_log):
        _, log = random_log
        est = full_is_estimate(log, PointwiseGreedyPolicy())
        np.testing.assert_allclose(est.per_slot.sum(axis=0), est.values, rtol=1e-12)

    def test_self_normalized_constant_reward(self):
        rng = np.random.default_rng(0)
        sessions = [LoggedSession(m, rng.integers(2, size=3), [0.5] * 3, np.full((3, 1), 0.7)) for m in range(40)]
        log = ReplayLog(sessions)
        t = np.where(log.actions == 0, 0.8, 0.2)
        est = one_step_is_estimate(log, target=t, self_normalize=True)
        assert est.values[0] == pytest.approx(3 * 0.7, rel=1e-12)
        assert est.stderr[0] == pytest.approx(0.0, abs=1e-12)

    def test_ess_never_exceeds_slots(self):
        with pytest.raises(ValueError):
            ReplayEstimate("p", "one_step", ("reward",), (1.0,), (0.0,), 11.0, 1, 10)
        with pytest.raises(ValueError):
            ReplayEstimate("p", "nonsense", ("reward",), (1.0,), (0.0,), 1.0, 1, 10)


class TestExactMatch:
    def test_no_matches(self):
        log = ReplayLog([LoggedSession(0, [1, 1], [0.5, 0.5], [[1.0], [0.0]])])
        est = exact_match_replay(log, target=np.zeros((1, 2)))
        assert est.ess == 0.0
        assert math.isnan(est.values[0])

    def test_rejects_stochastic_target(self, random_log):
        _, log = random_log
        with pytest.raises(ValueError, match="deterministic"):
            exact_match_replay(log, RandomPolicy())

    def test_match_rate_near_one_third(self, random_log):
        _, log = random_log
        est = exact_match_replay(log, PointwiseGreedyPolicy())
        n = log.n_slots
        sigma = math.sqrt(n * (1 / 3) * (2 / 3))
        assert abs(est.ess - n / 3) <= 3 * sigma

    def test_values_are_mean_of_matched_rewards(self, random_log):
        _, log = random_log
        est = exact_match_replay(log, PointwiseGreedyPolicy())
        matched = log.rewards[log.mask & (log.actions == 0)]
        np.testing.assert_allclose(est.values, matched.mean(axis=0), rtol=1e-12)

    def test_dispatch(self, random_log):
        _, log = random_log
        pol = PointwiseGreedyPolicy()
        assert estimate(log, pol, "exact_match", normalization="session").estimator == "exact_match"
        assert estimate(log, pol, "full_trajectory").values == full_is_estimate(log, pol).values
        with pytest.raises(ValueError):
            estimate(log, pol, "doubly_robust")


class TestVarianceReport:
    @pytest.fixture(scope="class")
    @classmethod
    def report(cls):
        # Clicks stay common at every depth, so deep matched slots carry signal.
        cfg = SimConfig(n_slots=6, n_items=8, k=3, embedding_dim=2, n_creators=3, spr_ranges={CLICK: (0.3, 0.8)},
                        oracle_weights={CLICK: {"spr:click": 1.0, "same_creator": -1.0}})
        eps = rollout(RandomPolicy(), cfg, 20_000, 5, 1).episodes
        log = ReplayLog.from_episodes(eps, ("click",), cfg)
        return variance_report(log, PointwiseGreedyPolicy())

    def test_depth_one_coincides(self, report):
        first = report[0]
        assert first.depth == 1
        assert first.full_stderr == first.one_step_stderr
        assert first.full_ess == first.one_step_ess

    def test_match_fraction_decays_geometrically(self, report):
        for row in report[:5]:
            p = 3.0 ** -row.depth
            sigma = math.sqrt(p * (1 - p) / row.n_sessions)
            assert abs(row.match_fraction - p) <= 3 * sigma

    def test_one_step_stderr_not_larger(self, report):
        for row in report[1:]:
            assert row.one_step_stderr[0] <= row.full_stderr[0]

    def test_full_weight_stderr_grows_with_depth(self, report):
        se = [row.full_weight_stderr for row in report]
        assert all(b > a for a, b in zip(se, se[1:]))
        # Under uniform logging Var(w_i) = K^i - 1 for a deterministic target.
        for row in report:
            expected = math.sqrt((3.0 ** row.depth - 1) / row.n_sessions)
            assert row.full_weight_stderr == pytest.approx(expected, rel=0.25)

    def test_one_step_weight_stderr_is_flat(self, report):
        expected = math.sqrt(2.0 / report[0].n_sessions)
        for row in report:
            assert row.one_step_weight_stderr == pytest.approx(expected, rel=0.05)

    def test_needs_two_sessions(self):
        log = ReplayLog([LoggedSession(0, [0], [0.5], [[1.0]])])
        with pytest.raises(ValueError):
            variance_report(log, target=np.ones((1, 1)))


class TestLowEssWarning:
    def test_deep_full_trajectory_warns(self):
        cfg = SimConfig(n_slots=10, n_items=12, k=3, embedding_dim=2)
        log = ReplayLog.from_episodes(rollout(RandomPolicy(), cfg, 500, 0, 1).episodes, ("reward",), cfg)
        est = full_is_estimate(log, PointwiseGreedyPolicy())
        assert low_ess_warning(est) is not None
        assert low_ess_warning(one_step_is_estimate(log, RandomPolicy())) is None


class TestDominance:
    def test_definition(self):
        assert dominates((2, 1), (1, 1))
        assert not dominates((1, 1), (1, 1))
        assert not dominates((2, 0), (1, 1))


def vectors(frontier):
    return {p.values for p in frontier.points}


class TestParetoFrontier:
    def test_single_point(self):
        f = pareto_frontier([(1.0, 2.0)])
        assert vectors(f) == {(1.0, 2.0)}
        assert f.dominated == ()

    def test_worked_example(self):
        pts = [(1, 1), (2, 0.5), (0.5, 2), (1.5, 1.5), (1, 1.4)]
        f = pareto_frontier(pts)
        assert vectors(f) == {(2.0, 0.5), (1.5, 1.5), (0.5, 2.0)}
        assert vectors(f) == brute_force_frontier(pts)
        assert {p.values for p in f.dominated} == {(1.0, 1.0), (1.0, 1.4)}

    def test_duplicates_keep_one(self):
        pts = [ParetoPoint((1.0, 1.0), "a"), ParetoPoint((1.0, 1.0), "b"), ParetoPoint((0.0, 0.0), "c")]
        f = pareto_frontier(pts)
        assert [p.policy_id for p in f.points] == ["a"]
        assert [p.policy_id for p in f.dominated] == ["b", "c"]

    def test_minimize(self):
        f = pareto_frontier([(1.0, 0.2), (1.0, 0.1), (0.5, 0.0)], minimize=[1])
        assert vectors(f) == {(1.0, 0.1), (0.5, 0.0)}

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensionality"):
            pareto_frontier([(1.0, 2.0), (1.0,)])
        with pytest.raises(ValueError):
            pareto_frontier([])
        with pytest.raises(ValueError):
            ParetoPoint((math.nan, 1.0))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(*[st.integers(0, 6)] * 3), min_size=1, max_size=60))
    def test_matches_brute_force_with_ties(self, pts):
        f = pareto_frontier(pts)
        assert vectors(f) == brute_force_frontier(pts)
        assert len(f.points) == len(vectors(f))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 100), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_matches_brute_force_continuous(self, n, d, seed):
        pts = np.random.default_rng(seed).normal(size=(n, d))
        assert vectors(pareto_frontier(pts.tolist())) == brute_force_frontier(pts.tolist())

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=40))
    def test_idempotent(self, pts):
        once = pareto_frontier(pts)
        twice = pareto_frontier(once.points)
        assert vectors(twice) == vectors(once)
        assert twice.dominated == ()

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=40))
    def test_nothing_dominates_the_frontier(self, pts):
        f = pareto_frontier(pts)
        for p in f.points:
            assert not any(dominates(q, p.values) for q in pts)
        for p in f.dominated:
            assert f.weakly_dominates(p.values)


class TestMergeAndHybrid:
    def test_merge_points(self):
        a = ReplayEstimate("x", "one_step", ("click", "contributions"), (0.4, 0.1), (0.01, 0.02), 100.0, 10, 200)
        b = ReplayEstimate("y", "one_step", ("click", "contributions"), (0.3, 0.2), (0.03, 0.04), 50.0, 10, 200)
        p = merge_points([(a, "click"), (b, ResponseKind.CONTRIBUTIONS)], "hybrid")
        assert p.values == (0.4, 0.2)
        assert p.stderr == (0.01, 0.04)
        assert p.ess == 50.0 and p.estimator == "one_step"

    def contributions_model(self, cfg):
        schema = FeatureSchema(cfg.item_types, cfg.embedding_dim, families=frozenset({"bias", "type"}))
        return ResponseModel(ResponseKind.CONTRIBUTIONS, np.linspace(-1, 1, schema.n_features), schema)

    def test_zero_weight_is_pointwise(self, random_log):
        _, log = random_log
        h = hybrid_policy(FULL, self.contributions_model(FULL), 0.0)
        np.testing.assert_array_equal(log.target_probabilities(h),
                                      log.target_probabilities(PointwiseGreedyPolicy()))

    def test_requires_contributions_model(self):
        m = FULL.oracle_models()[CLICK]
        with pytest.raises(ValueError):
            hybrid_policy(FULL, m, 1.0)

    def test_sweep_points(self, random_log):
        _, log = random_log
        pols = [hybrid_policy(FULL, self.contributions_model(FULL), w) for w in (0.0, 1.0)]
        ests = sweep_points(log, pols)
        assert [e.policy_id for e in ests] == ["hybrid_w=0", "hybrid_w=1"]


class TestCsv:
    def test_round_trip(self):
        pts = [ParetoPoint((0.1, 1 / 3), "a", (0.01, 0.02), "one_step", 12.5),
               ParetoPoint((0.2, 0.3), "b,with comma", (0.0, 0.0), "full_trajectory", 3.0)]
        text = estimates_csv(pts, "abc123", on_frontier={0: True})
        lines = text.splitlines()
        assert lines[0] == "# config_hash=abc123"
        assert lines[1] == "policy_id,objective_1,objective_2,stderr_1,stderr_2,estimator,ess,on_frontier"
        back, chash = read_estimates_csv(text)
        assert chash == "abc123"
        assert back == pts

    def test_estimates_are_accepted(self, random_log):
        _, log = random_log
        est = one_step_is_estimate(log, PointwiseGreedyPolicy())
        back, chash = read_estimates_csv(estimates_csv([est]))
        assert chash is None
        assert back[0].values == est.values

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            read_estimates_csv("a,b\n1,2\n")
        with pytest.raises(ValueError):
            estimates_csv([])
        with pytest.raises(ValueError):
            estimates_csv([ParetoPoint((1.0,)), ParetoPoint((1.0, 2.0))])


class TestBestVersusSecondBest:
    def test_ordering_on_small_log(self):
        cfg = SimConfig(n_slots=10, embedding_dim=4)
        log = ReplayLog.from_episodes(rollout(RandomPolicy(), cfg, 3000, 3, 1).episodes, ("reward",), cfg)
        coef = CombinationConfig(dict(cfg.reward))
        best = one_step_is_estimate(log, GreedyPolicy("best", cfg.oracle_models(), coef))
        second = one_step_is_estimate(log, GreedyPolicy("second", cfg.oracle_models(), coef, rank=1))
        assert best.values[0] > second.values[0]
