import numpy as np
import pytest

from conftest import assert_grads_close, finite_difference_grads
from memrl import envs, sac
from memrl.autodiff import Node, backward
from memrl.pearl import PearlAgent, PearlHyper, TaskPosterior, kl_to_prior
from memrl.replay import ReplayBuffer


def make_agent(seed=0, obs=2, act=2, k=3, hidden=(8,), sac_hidden=(8, 8)):
    hyper = PearlHyper(latent_dim=k, enc_hidden=hidden,
                       sac=sac.SacHyper(hidden=sac_hidden, batch_size=8))
    return PearlAgent(obs, act, hyper, np.random.default_rng(seed))


class TestEncodeContext:
    def test_empty_context_is_exact_prior(self):
        agent = make_agent()
        post = agent.encode_context(np.zeros((0, 7)))
        assert np.array_equal(post.mu, np.zeros(3))
        assert np.array_equal(post.var, np.ones(3))

    def test_two_factor_closed_form(self):
        """Factors N(0,1) and N(2,1) with unit prior: lambda=3, mu=2/3."""
        # direct check of the fusion arithmetic, bypassing the network
        mu_i = np.array([[0.0], [2.0]])
        var_i = np.array([[1.0], [1.0]])
        prec = 1.0 + (1.0 / var_i).sum(axis=0)
        mu = (mu_i / var_i).sum(axis=0) / prec
        assert prec[0] == pytest.approx(3.0)
        assert mu[0] == pytest.approx(2.0 / 3.0)
        assert (1.0 / prec)[0] == pytest.approx(1.0 / 3.0)

    def test_product_matches_closed_form_on_random_factors(self):
        """Network posterior equals the closed-form product of the factors
        the network itself emits, on 100 random contexts."""
        agent = make_agent(1)
        rng = np.random.default_rng(0)
        k = agent.hyper.latent_dim
        from memrl.nn import mlp
        for _ in range(100):
            ctx = rng.standard_normal((int(rng.integers(1, 9)), 7))
            post = agent.encode_context(ctx)
            out = mlp(agent.encoder, "enc", Node(ctx)).value
            mu_i = out[:, :k]
            var_i = np.log1p(np.exp(out[:, k:])) + 1e-8
            prec = 1.0 + (1.0 / var_i).sum(axis=0)
            mu = (mu_i / var_i).sum(axis=0) / prec
            assert np.allclose(post.mu, mu, atol=1e-9)
            assert np.allclose(post.var, 1.0 / prec, atol=1e-9)

    def test_permutation_invariance(self):
        agent = make_agent(2)
        rng = np.random.default_rng(3)
        ctx = rng.standard_normal((20, 7))
        base = agent.encode_context(ctx)
        for _ in range(5):
            perm = rng.permutation(20)
            post = agent.encode_context(ctx[perm])
            assert np.allclose(post.mu, base.mu, atol=1e-9)
            assert np.allclose(post.var, base.var, atol=1e-9)

    def test_variance_nonincreasing_as_context_grows(self):
        agent = make_agent(4)
        rng = np.random.default_rng(5)
        ctx = rng.standard_normal((30, 7))
        prev = np.ones(agent.hyper.latent_dim)
        for n in range(0, 31, 5):
            post = agent.encode_context(ctx[:n])
            assert np.all(post.var <= prev + 1e-12)
            prev = post.var


class TestKl:
    def test_prior_is_zero(self):
        assert kl_to_prior(np.zeros(4), np.ones(4)) == 0.0

    def test_unit_mean_shift(self):
        assert kl_to_prior(np.array([1.0]), np.array([1.0])) == pytest.approx(0.5)

    def test_shrunk_variance(self):
        expected = 0.5 * (0.25 - 1.0 - np.log(0.25))
        assert kl_to_prior(np.array([0.0]), np.array([0.25])) == pytest.approx(
            expected)
        assert expected == pytest.approx(0.3181, abs=1e-4)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            mu = rng.standard_normal(5)
            var = rng.uniform(0.05, 3.0, 5)
            assert kl_to_prior(mu, var) >= 0.0


class TestReparameterization:
    def test_z_gradients(self):
        """dz/dmu = 1 and dz/dsigma = eps, via finite differences."""
        from memrl.nn import ParamSet
        pset = ParamSet()
        pset.add("mu", np.array([0.3, -0.2]))
        pset.add("sigma", np.array([0.5, 1.5]))
        eps = np.array([0.7, -1.1])

        def build():
            return (pset["mu"] + pset["sigma"] * Node(eps)).sum()

        backward(build())
        analytic = pset.grads()
        assert np.allclose(analytic["mu"], 1.0)
        assert np.allclose(analytic["sigma"], eps)
        numeric = finite_difference_grads(lambda: float(build().value), pset)
        assert_grads_close(analytic, numeric)


class TestEncoderObjectiveGradient:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        """Gradient of (critic loss + beta KL) w.r.t. encoder params on a
        2-transition context."""
        agent = make_agent(seed)
        rng = np.random.default_rng(seed + 10)
        ctx = rng.standard_normal((2, 7))
        s = rng.standard_normal((3, 2))
        a = rng.uniform(-1, 1, (3, 2))
        y = rng.standard_normal(3)
        eps = rng.standard_normal(agent.hyper.latent_dim)
        beta = agent.hyper.beta_kl

        def build():
            mu, var = agent.encode_context_graph(ctx)
            z = mu + var**0.5 * Node(eps)
            ones = Node(np.ones((3, 1)))
            z_rows = ones @ z.reshape(1, agent.hyper.latent_dim)
            kl = 0.5 * (var + mu.square() - 1.0 - var.log()).sum()
            return sac.critic_loss(agent.sac, s, a, y, z_rows) + beta * kl

        agent.encoder.zero_grad()
        agent.sac.critics.zero_grad()
        backward(build())
        analytic = agent.encoder.grads()
        numeric = finite_difference_grads(lambda: float(build().value),
                                          agent.encoder)
        assert_grads_close(analytic, numeric)


class TestTrainIteration:
    def _buffers(self):
        return ReplayBuffer("long"), ReplayBuffer("long")

    def test_zero_lr_leaves_parameters_unchanged(self):
        agent = make_agent(0)
        agent.hyper.sac.lr = 0.0
        agent.hyper.enc_lr = 0.0
        split = envs.sample_tasks("point", 3, 1, seed=0)
        rl, enc = self._buffers()
        before = {**agent.encoder.values(),
                  **{f"a.{k}": v for k, v in agent.sac.actor.values().items()},
                  **{f"c.{k}": v for k, v in agent.sac.critics.values().items()}}
        metrics = agent.train_iteration(rl, enc, "point", split.train,
                                        np.random.default_rng(0),
                                        n_collect_tasks=2, n_collect_eps=1,
                                        n_grad=3)
        after = {**agent.encoder.values(),
                 **{f"a.{k}": v for k, v in agent.sac.actor.values().items()},
                 **{f"c.{k}": v for k, v in agent.sac.critics.values().items()}}
        for k in before:
            assert np.array_equal(before[k], after[k]), k
        assert np.isfinite(metrics["train_return"])

    def test_deterministic_under_seed(self):
        def run():
            agent = make_agent(3)
            split = envs.sample_tasks("point", 3, 1, seed=0)
            rl, enc = self._buffers()
            return agent.train_iteration(rl, enc, "point", split.train,
                                         np.random.default_rng(11),
                                         n_collect_tasks=2, n_collect_eps=1,
                                         n_grad=4)

        assert run() == run()

    def test_empty_buffer_raises(self):
        from memrl.replay import EmptyBufferError
        agent = make_agent(0)
        split = envs.sample_tasks("point", 2, 1, seed=0)
        rl, enc = self._buffers()
        with pytest.raises(EmptyBufferError):
            agent.train_iteration(rl, enc, "point", split.train,
                                  np.random.default_rng(0), collect=False)


class TestAdapt:
    def test_context_grows_by_horizon_each_episode(self):
        agent = make_agent(0)
        task = envs.Task("point", (1.0, 0.0))
        returns, posteriors, trajs = agent.adapt(
            "point", task, 3, np.random.default_rng(0))
        assert len(returns) == len(posteriors) == len(trajs) == 3
        for e, traj in enumerate(trajs):
            assert len(traj) == envs.HORIZONS["point"]

    def test_first_episode_acts_under_prior(self):
        """With a fixed rng, episode 1 behavior equals a rollout under
        z ~ N(0, I) drawn from the same stream."""
        agent = make_agent(1)
        task = envs.Task("point", (0.0, 1.0))
        _, _, trajs = agent.adapt("point", task, 1, np.random.default_rng(42))

        rng = np.random.default_rng(42)
        z = rng.standard_normal(agent.hyper.latent_dim)  # prior sample
        from memrl.pearl import rollout
        env = envs.MetaEnv("point")
        traj, _ = rollout(agent, env, task, z, rng, stochastic=True)
        assert np.allclose(trajs[0].a, traj.a)
