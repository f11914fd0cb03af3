"""Rollouts, mode scoring, SOG-BC and the GAIL building blocks."""
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from soglab.circles import STATE_DIM, CirclesConfig, CirclesEnv, generate_expert_dataset
from soglab.imitation import (
    LOG_QUARTER,
    BCConfig,
    ExpertPolicy,
    GailConfig,
    RandomPolicy,
    _ppo_grads,
    advantage_estimate,
    best_bijection,
    clip_value,
    disc_features,
    disc_prob,
    discounted_returns,
    discriminator_objective,
    discriminator_update,
    gail_reward,
    make_discriminator,
    make_policy,
    mode_reward_assignment,
    perturbed_eval,
    policy_entropy,
    ppo_surrogate,
    reward_matrix,
    rollout,
    select_trajectory_codes,
    sog_bc_loss_grads,
    sog_bc_train,
    sog_gail_train,
    sog_nll_loss_grads,
    trajectory_code_losses,
    trajectory_mse,
)
from soglab.latent import DiscretePrior
from soglab.nn import Dense, DenseNet, OptimizerState, TwoHeadPolicyNet

SHORT = CirclesConfig(episode_length=150)


def code_only_policy():
    """Linear policy whose mean equals the 2-d code, ignoring the state."""
    sh = Dense(np.zeros((2, STATE_DIM)), np.zeros(2))
    lh = Dense(np.eye(2), np.zeros(2))
    trunk = DenseNet([Dense(np.eye(2), np.zeros(2), "identity")])
    return TwoHeadPolicyNet(sh, lh, trunk, np.zeros(2), head_activation="identity")


def small_policy(seed=0, log_std=-1.0):
    return make_policy(3, np.random.default_rng(seed), hidden=(8, 8), log_std=log_std, output_scale=1.0)


@pytest.fixture(scope="module")
def expert_short():
    return generate_expert_dataset(SHORT, per_mode=2, seed=0)


class TestRollout:
    def test_zero_length(self):
        trajs = rollout(small_policy(), CirclesEnv(n_envs=2), np.eye(3)[:1], T=0)
        assert len(trajs) == 2
        assert all(len(t) == 0 for t in trajs)
        np.testing.assert_array_equal(trajs[0].final_state, 0.0)

    def test_actions_near_mean_at_floor_std(self):
        policy = small_policy(log_std=-5.0)
        (t,) = rollout(policy, CirclesEnv(SHORT), np.eye(3)[1], T=100, rng=np.random.default_rng(1))
        mean = policy.forward(t.states, np.broadcast_to(np.eye(3)[1], (100, 3)))
        assert np.abs(t.actions - mean).max() < 3e-2

    def test_deterministic_given_seed(self):
        a = rollout(small_policy(), CirclesEnv(SHORT, 2), np.eye(3)[2], T=50, rng=np.random.default_rng(3))
        b = rollout(small_policy(), CirclesEnv(SHORT, 2), np.eye(3)[2], T=50, rng=np.random.default_rng(3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.actions, y.actions)

    def test_deterministic_flag_uses_mean(self):
        policy = small_policy()
        (t,) = rollout(policy, CirclesEnv(SHORT), np.eye(3)[0], T=20, deterministic=True)
        np.testing.assert_allclose(t.actions, policy.forward(t.states, np.broadcast_to(np.eye(3)[0], (20, 3))))

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            rollout(small_policy(), CirclesEnv(SHORT), np.eye(3)[0], T=151)
        with pytest.raises(ValueError):
            rollout(small_policy(), CirclesEnv(SHORT), np.eye(3)[0], perturb_p=1.5)

    def test_records_mode_rewards(self):
        (t,) = rollout(ExpertPolicy(noise=False), CirclesEnv(SHORT), np.eye(3)[0], T=50, modes=[0])
        assert t.mode == 0
        np.testing.assert_allclose(t.rewards, 1.0, atol=1e-9)


class TestModeScoring:
    def test_bijection_diagonal(self):
        perm, total = best_bijection(9 * np.eye(3))
        assert perm == (0, 1, 2)
        assert total == 27

    def test_bijection_tie_keeps_first(self):
        perm, _ = best_bijection(np.ones((3, 3)))
        assert perm == (0, 1, 2)

    def test_bijection_off_diagonal(self):
        m = np.array([[0.1, 0.9, 0.0], [0.0, 0.1, 0.8], [0.7, 0.0, 0.1]])
        perm, total = best_bijection(m)
        assert perm == (1, 2, 0)
        assert total == pytest.approx(2.4)

    @given(st.integers(0, 10_000))
    def test_bijection_is_optimal(self, seed):
        m = np.random.default_rng(seed).random((3, 3))
        _, total = best_bijection(m)
        assert total == pytest.approx(max(sum(m[i, p[i]] for i in range(3)) for p in itertools.permutations(range(3))))

    def test_bijection_rejects_non_square(self):
        with pytest.raises(ValueError):
            best_bijection(np.ones((2, 3)))

    def test_expert_wiring_recovered(self):
        wiring = (2, 0, 1)
        res = mode_reward_assignment(ExpertPolicy(wiring), SHORT, np.eye(3), n_rollouts=2)
        assert res.bijection == wiring
        assert np.all(res.per_mode_reward >= 0.9)

    def test_random_policy_scores_low(self):
        res = mode_reward_assignment(RandomPolicy(), SHORT, np.eye(3), n_rollouts=2)
        assert res.mean_reward < 0.6

    def test_assignment_json(self):
        res = mode_reward_assignment(RandomPolicy(), CirclesConfig(episode_length=10), np.eye(3), n_rollouts=1)
        rec = res.to_json()
        assert set(rec) == {"matrix", "bijection", "per_mode_reward", "total"}
        assert len(rec["matrix"]) == 3


class TestPerturbedEval:
    def test_zero_rate_is_plain_evaluation(self):
        policy = small_policy()
        z = np.eye(3)[0]
        plain = rollout(policy, CirclesEnv(SHORT, 2, seed=1), z, rng=np.random.default_rng(0))
        expected = reward_matrix([plain], SHORT)[0, 1]
        assert perturbed_eval(policy, SHORT, z, p=0.0, n_rollouts=2, mode=1) == expected

    def test_full_rate_ignores_policy(self):
        a = perturbed_eval(small_policy(0), SHORT, np.eye(3)[0], p=1.0, n_rollouts=2, mode=0)
        b = perturbed_eval(small_policy(5), SHORT, np.eye(3)[0], p=1.0, n_rollouts=2, mode=0)
        assert a == b

    def test_perturbation_hurts_expert(self):
        clean = perturbed_eval(ExpertPolicy(), SHORT, np.eye(3)[0], p=0.0, mode=0)
        noisy = perturbed_eval(ExpertPolicy(), SHORT, np.eye(3)[0], p=0.2, mode=0)
        assert noisy < clean
        assert noisy > 0.5


class TestCodeSelection:
    def test_trajectory_mean_not_per_pair_vote(self):
        # two pairs favour code 0 slightly, one pair favours code 1 strongly
        policy = code_only_policy()
        states = np.zeros((1, 3, STATE_DIM))
        actions = np.array([[[0.9, 0.0], [0.9, 0.0], [-3.0, 1.0]]])
        cands = np.eye(2)[None]
        per_pair = [int(np.argmin(np.sum((np.eye(2) - a) ** 2, axis=1))) for a in actions[0]]
        assert per_pair == [0, 0, 1]
        idx, codes = select_trajectory_codes(policy, states, actions, cands)
        assert idx.tolist() == [1]
        np.testing.assert_array_equal(codes, [[0.0, 1.0]])
        np.testing.assert_allclose(trajectory_code_losses(policy, states[0], actions[0], np.eye(2)), [17.02 / 3, 12.62 / 3])

    @given(st.integers(0, 10_000))
    def test_batched_matches_loop(self, seed):
        rng = np.random.default_rng(seed)
        policy = small_policy(seed % 7)
        bs = rng.standard_normal((4, 5, STATE_DIM))
        ba = 0.1 * rng.standard_normal((4, 5, 2))
        cands = np.broadcast_to(np.eye(3), (4, 3, 3))
        idx, _ = select_trajectory_codes(policy, bs, ba, cands)
        loop = [int(np.argmin(trajectory_code_losses(policy, bs[i], ba[i], np.eye(3)))) for i in range(4)]
        assert idx.tolist() == loop


class TestSogBC:
    def test_single_code_loss_decreases(self, expert_short):
        policy = make_policy(1, np.random.default_rng(0), hidden=(16, 16))
        trajs = [t for t in expert_short if t.mode == 0]
        rep = sog_bc_train(policy, trajs, DiscretePrior.uniform(1), BCConfig(iterations=150, pairs_per_traj=32, learning_rate=3e-3))
        assert np.mean(rep.losses[-10:]) < 0.5 * np.mean(rep.losses[:10])

    def test_deterministic(self, expert_short):
        cfg = BCConfig(iterations=20, pairs_per_traj=8)
        a = make_policy(3, np.random.default_rng(1), hidden=(8, 8))
        b = make_policy(3, np.random.default_rng(1), hidden=(8, 8))
        ra = sog_bc_train(a, expert_short, DiscretePrior.uniform(3), cfg)
        rb = sog_bc_train(b, expert_short, DiscretePrior.uniform(3), cfg)
        assert ra.losses == rb.losses
        for p, q in zip(a.params(), b.params()):
            np.testing.assert_array_equal(p, q)

    def test_learning_rate_schedule(self):
        cfg = BCConfig(iterations=101, learning_rate=1e-3, final_lr_frac=0.05)
        assert cfg.lr_at(0) == pytest.approx(1e-3)
        assert cfg.lr_at(100) == pytest.approx(5e-5)
        assert cfg.lr_at(50) == pytest.approx(0.5 * (1e-3 + 5e-5))

    def test_log_std_untouched(self, expert_short):
        policy = make_policy(3, np.random.default_rng(0), hidden=(8, 8))
        before = policy.log_std.copy()
        sog_bc_train(policy, expert_short, DiscretePrior.uniform(3), BCConfig(iterations=5, pairs_per_traj=4))
        np.testing.assert_array_equal(policy.log_std, before)

    def test_rejects_empty_data(self):
        with pytest.raises(ValueError):
            sog_bc_train(small_policy(), [], DiscretePrior.uniform(3), BCConfig(iterations=1))

    def test_loss_matches_mse(self, expert_short):
        policy = small_policy()
        codes = np.eye(3)[[t.mode for t in expert_short]]
        bs = np.stack([t.states for t in expert_short])
        ba = np.stack([t.actions for t in expert_short])
        loss, _ = sog_bc_loss_grads(policy, bs, ba, codes)
        assert loss == pytest.approx(trajectory_mse(policy, expert_short, codes), rel=1e-12)


def _fd_check(loss_fn, params, grads, rng, n_checks=40, eps=1e-6):
    worst = 0.0
    for _ in range(n_checks):
        i = int(rng.integers(len(params)))
        j = int(rng.integers(params[i].size))
        flat = params[i].reshape(-1)
        old = flat[j]
        flat[j] = old + eps
        up = loss_fn()
        flat[j] = old - eps
        down = loss_fn()
        flat[j] = old
        num = (up - down) / (2 * eps)
        worst = max(worst, abs(grads[i].reshape(-1)[j] - num) / max(1.0, abs(num)))
    return worst


class TestGradients:
    def test_nll_gradient(self):
        rng = np.random.default_rng(0)
        policy = small_policy(log_std=-1.0)
        policy.log_std[:] = [-1.0, -0.7]
        bs = rng.standard_normal((3, 4, STATE_DIM))
        ba = 0.3 * rng.standard_normal((3, 4, 2))
        codes = np.eye(3)
        _, grads = sog_nll_loss_grads(policy, bs, ba, codes)
        assert _fd_check(lambda: sog_nll_loss_grads(policy, bs, ba, codes)[0], policy.params(), grads, rng) < 1e-6

    def test_nll_selects_same_codes_as_mse(self):
        # the NLL is an increasing affine map of the squared error for a shared std
        rng = np.random.default_rng(2)
        policy = small_policy()
        bs = rng.standard_normal((1, 6, STATE_DIM))
        ba = 0.3 * rng.standard_normal((1, 6, 2))
        mse = [sog_bc_loss_grads(policy, bs, ba, np.eye(3)[[k]])[0] for k in range(3)]
        nll = [sog_nll_loss_grads(policy, bs, ba, np.eye(3)[[k]])[0] for k in range(3)]
        assert np.argmin(mse) == np.argmin(nll)

    def test_ppo_gradient(self):
        rng = np.random.default_rng(1)
        policy = small_policy(log_std=-1.0)
        s = rng.standard_normal((20, STATE_DIM))
        z = np.eye(3)[rng.integers(0, 3, 20)]
        a = policy.forward(s, z) + 0.3 * rng.standard_normal((20, 2))
        # a reference policy far from the current one keeps every pair off the clip boundary
        logp_old = policy.log_prob(s, z, a) + rng.choice([-1.0, 1.0], 20)
        adv = rng.standard_normal(20)
        _, grads = _ppo_grads(policy, s, z, a, logp_old, adv, 0.2, 0.01)
        loss = lambda: _ppo_grads(policy, s, z, a, logp_old, adv, 0.2, 0.01)[0]
        assert _fd_check(loss, policy.params(), grads, rng) < 1e-5


class TestDiscriminator:
    def test_half_everywhere(self):
        disc = make_discriminator(np.random.default_rng(0), hidden=(8,))
        disc.layers[-1].weight[:] = 0.0
        disc.layers[-1].bias[:] = 0.0
        f = np.random.default_rng(1).standard_normal((10, STATE_DIM + 2))
        np.testing.assert_allclose(disc_prob(disc, f), 0.5)
        assert discriminator_objective(disc, f, f) == pytest.approx(LOG_QUARTER)

    def test_identical_batches_at_half_are_stationary(self):
        disc = make_discriminator(np.random.default_rng(0), hidden=(8,))
        disc.layers[-1].weight[:] = 0.0
        disc.layers[-1].bias[:] = 0.0
        before = [p.copy() for p in disc.params()]
        f = np.random.default_rng(1).standard_normal((10, STATE_DIM + 2))
        discriminator_update(disc, f, f, OptimizerState("sgd", 0.1))
        for p, q in zip(before, disc.params()):
            np.testing.assert_allclose(p, q, atol=1e-15)

    def test_separable_batches_improve(self):
        rng = np.random.default_rng(0)
        disc = make_discriminator(rng, hidden=(16,))
        gen = rng.standard_normal((64, STATE_DIM + 2)) + 2.0
        exp = rng.standard_normal((64, STATE_DIM + 2)) - 2.0
        opt = OptimizerState("adam", 1e-2)
        first = discriminator_objective(disc, gen, exp)
        for _ in range(50):
            discriminator_update(disc, gen, exp, opt)
        last = discriminator_objective(disc, gen, exp)
        assert last > first
        assert last > -0.1
        assert np.all(gail_reward(disc, exp) > gail_reward(disc, gen).max())

    def test_objective_bounded(self):
        rng = np.random.default_rng(3)
        disc = make_discriminator(rng, hidden=(8,))
        f = 100.0 * rng.standard_normal((20, STATE_DIM + 2))
        assert 2 * -np.logaddexp(0.0, 20.0) <= discriminator_objective(disc, f, -f) <= 0.0

    def test_batch_size_mismatch(self):
        disc = make_discriminator(np.random.default_rng(0), hidden=(4,))
        with pytest.raises(ValueError):
            discriminator_update(disc, np.zeros((3, 12)), np.zeros((4, 12)), OptimizerState())

    def test_features_scale_actions(self):
        f = disc_features(np.ones((2, STATE_DIM)), np.full((2, 2), 0.05), 0.1)
        np.testing.assert_allclose(f[:, -2:], 0.5)

    def test_reward_forms(self):
        disc = make_discriminator(np.random.default_rng(0), hidden=(4,))
        f = np.random.default_rng(1).standard_normal((5, STATE_DIM + 2))
        d = disc_prob(disc, f)
        np.testing.assert_allclose(gail_reward(disc, f), -np.log(d), rtol=1e-10)
        np.testing.assert_allclose(gail_reward(disc, f, "log_one_minus_d"), np.log(1 - d), rtol=1e-10)
        with pytest.raises(ValueError):
            gail_reward(disc, f, "other")


class TestPPO:
    def test_clipped_values(self):
        assert ppo_surrogate(1.5, 1.0, 0.2) == pytest.approx(1.2)
        assert ppo_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8)
        assert ppo_surrogate(1.0, 0.7, 0.2) == 0.7

    @given(st.floats(0.01, 10.0), st.floats(-5.0, 5.0), st.floats(0.01, 0.5))
    def test_min_of_unclipped_and_clip_value(self, r, a, eps):
        out = ppo_surrogate(r, a, eps)
        assert out == min(r * a, float(clip_value(eps, a)))
        assert out <= r * a

    def test_rejects_nonpositive_ratio(self):
        with pytest.raises(ValueError):
            ppo_surrogate(0.0, 1.0, 0.2)

    def test_returns(self):
        np.testing.assert_allclose(discounted_returns([1.0, 1.0, 1.0], 0.99), [2.9701, 1.99, 1.0])

    def test_zero_discount_advantage(self):
        adv, g = advantage_estimate([1.0, 2.0, 3.0], [0.5, 0.5, 0.5], 0.0, normalize_batch=False)
        np.testing.assert_allclose(g, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(adv, [0.5, 1.5, 2.5])

    def test_normalized_advantage(self):
        adv, _ = advantage_estimate(np.arange(10.0), np.zeros(10), 0.9)
        assert adv.mean() == pytest.approx(0.0, abs=1e-12)
        assert adv.std() == pytest.approx(1.0)


class TestEntropy:
    def test_unit_gaussian(self):
        policy = small_policy(log_std=0.0)
        assert policy.entropy() == pytest.approx(1 + np.log(2 * np.pi))
        assert policy.entropy() == pytest.approx(2.8379, abs=1e-4)

    def test_monotone_in_log_std(self):
        values = [small_policy(log_std=v).entropy() for v in (-3.0, -1.0, 0.0, 1.0)]
        assert values == sorted(values)

    def test_discounted_closed_form(self):
        policy = small_policy(log_std=0.0)
        s = np.zeros((3, STATE_DIM))
        expected = (1 + 0.9 + 0.81) * policy.entropy()
        assert policy_entropy(policy, s, np.eye(3)[0], gamma=0.9) == pytest.approx(expected)

    def test_monte_carlo_agrees(self):
        rng = np.random.default_rng(0)
        policy = small_policy(log_std=-0.5)
        n = 20_000
        s = rng.standard_normal((n, STATE_DIM))
        z = np.broadcast_to(np.eye(3)[1], (n, 3))
        a = policy.forward(s, z) + np.exp(policy.log_std) * rng.standard_normal((n, 2))
        per_step = -policy.log_prob(s, z, a)
        se = per_step.std() / np.sqrt(n)
        assert abs(per_step.mean() - policy.entropy()) < 3 * se
        assert policy_entropy(policy, s[:1], z[:1], a[:1]) == pytest.approx(per_step[0])


class TestGail:
    def _cfg(self, **kw):
        base = dict(iterations=2, rollouts_per_iter=2, rollout_length=40, ppo_epochs=1, minibatch=40,
                    disc_steps=1, value_steps=2, hidden=(8, 8), sog_pairs_per_traj=4)
        base.update(kw)
        return GailConfig(**base)

    def test_runs_without_sog_term(self, expert_short):
        policy = make_policy(3, np.random.default_rng(0), hidden=(8, 8))
        disc = make_discriminator(np.random.default_rng(1), hidden=(8, 8))
        rep = sog_gail_train(policy, disc, expert_short, DiscretePrior.uniform(3), self._cfg(lambda_s=0.0), SHORT)
        assert [r[0] for r in rep.rows] == [1, 2]
        assert np.all(np.isfinite(np.array(rep.rows)))

    def test_deterministic(self, expert_short):
        runs = []
        for _ in range(2):
            policy = make_policy(3, np.random.default_rng(0), hidden=(8, 8))
            disc = make_discriminator(np.random.default_rng(1), hidden=(8, 8))
            runs.append(sog_gail_train(policy, disc, expert_short, DiscretePrior.uniform(3), self._cfg(), SHORT).rows)
        assert runs[0] == runs[1]

    def test_disc_objective_in_range(self, expert_short):
        policy = make_policy(3, np.random.default_rng(0), hidden=(8, 8))
        disc = make_discriminator(np.random.default_rng(1), hidden=(8, 8))
        rep = sog_gail_train(policy, disc, expert_short, DiscretePrior.uniform(3), self._cfg(iterations=3), SHORT)
        obj = rep.column("disc_obj")
        assert np.all(obj < 0) and np.all(obj > 2 * -np.logaddexp(0.0, 20.0))

    def test_large_sog_weight_tracks_behaviour_cloning(self, expert_short):
        prior = DiscretePrior.uniform(3)
        codes = np.eye(3)[[t.mode for t in expert_short]]
        bc = make_policy(3, np.random.default_rng(0), hidden=(16, 16))
        sog_bc_train(bc, expert_short, prior, BCConfig(iterations=40, pairs_per_traj=16))
        start = make_policy(3, np.random.default_rng(0), hidden=(16, 16))
        gail = make_policy(3, np.random.default_rng(0), hidden=(16, 16))
        disc = make_discriminator(np.random.default_rng(1), hidden=(8, 8))
        cfg = self._cfg(iterations=10, lambda_s=1e4, sog_loss="mse", minibatch=20, sog_pairs_per_traj=16)
        sog_gail_train(gail, disc, expert_short, prior, cfg, SHORT)
        perms = [list(p) for p in itertools.permutations(range(3))]
        mse = lambda p: min(trajectory_mse(p, expert_short, codes[:, perm]) for perm in perms)
        assert mse(gail) < mse(start)
        assert mse(gail) < 2 * mse(bc)

    def test_config_validation(self):
        for bad in (dict(gamma=1.0), dict(clip_eps=0.0), dict(lambda_s=-1.0), dict(reward_form="x"), dict(sog_loss="x")):
            with pytest.raises(ValueError):
                GailConfig(**bad)
