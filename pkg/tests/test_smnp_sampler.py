import numpy as np
import pytest
from scipy import stats

from smnp.rng import RngStream, sample_invwishart, sample_trace_restricted
from smnp.smnp import SmnpSampler, SmnpState, run_smnp
from smnp.types import ChoiceDataset, Hyperparameters, expand_beta


def make_dataset(rng, n, p, k_d=0, k_a=1, y=None):
    x_a = rng.normal(0.0, 0.8, size=(n, p, k_a))
    if k_a:
        x_a -= x_a.mean(axis=1, keepdims=True)
    return ChoiceDataset(
        y=rng.integers(0, p, size=n) if y is None else np.asarray(y),
        x_d=rng.standard_normal((n, k_d)),
        x_a=x_a,
        labels=tuple(f"c{j}" for j in range(p)),
    )


def empty_dataset(p, k_d=0, k_a=1):
    return ChoiceDataset(
        y=np.zeros(0, dtype=int),
        x_d=np.zeros((0, k_d)),
        x_a=np.zeros((0, p, k_a)),
        labels=tuple(f"c{j}" for j in range(p)),
    )


class TestInitState:
    def test_rows_centered_and_consistent(self, rng):
        ds = make_dataset(rng, n=200, p=4)
        sampler = SmnpSampler(ds)
        state = sampler.init_state(RngStream(3).generator())
        assert np.abs(state.w_tilde.sum(axis=1)).max() < 1e-12
        np.testing.assert_array_equal(state.w_tilde.argmax(axis=1), ds.y)

    def test_p2_sign_structure(self, rng):
        ds = make_dataset(rng, n=50, p=2, y=np.zeros(50, dtype=int))
        state = SmnpSampler(ds).init_state(RngStream(4).generator())
        assert (state.w_tilde[:, 0] > 0).all()
        np.testing.assert_allclose(state.w_tilde[:, 0], -state.w_tilde[:, 1])

    def test_deterministic(self, rng):
        ds = make_dataset(rng, n=20, p=3)
        sampler = SmnpSampler(ds)
        s1 = sampler.init_state(RngStream(5).generator())
        s2 = sampler.init_state(RngStream(5).generator())
        np.testing.assert_array_equal(s1.w_tilde, s2.w_tilde)
        assert s1.b == s2.b


def _sweep_once(sampler, state, seed):
    return sampler.step_utilities(state, RngStream(seed).generator())


class TestStepUtilities:
    def test_p2_reduces_to_sign_constraint(self, rng):
        # with p=2 and y != b, the truncation is just w > 0
        n = 500
        ds = make_dataset(rng, n=n, p=2, y=np.zeros(n, dtype=int))
        sampler = SmnpSampler(ds)
        g = RngStream(6).generator()
        state = sampler.init_state(g)
        state = SmnpState(
            b=1,
            sigma_b=state.sigma_b,
            alpha2=state.alpha2,
            w_tilde=state.w_tilde,
            beta_tilde=state.beta_tilde,
        )
        new = sampler.step_utilities(state, g)
        assert (new.w_tilde[:, 0] > 0).all()
        np.testing.assert_allclose(new.w_tilde.sum(axis=1), 0, atol=1e-12)

    def test_sweep_preserves_consistency(self, rng):
        ds = make_dataset(rng, n=300, p=5, k_d=1)
        sampler = SmnpSampler(ds)
        g = RngStream(7).generator()
        state = sampler.init_state(g)
        for _ in range(5):
            state = sampler.step_utilities(state, g)
            state = sampler.step_beta(state, g)
            state = sampler.step_b_sigma_alpha(state, g)
            np.testing.assert_array_equal(state.w_tilde.argmax(axis=1), ds.y)
            assert np.abs(state.w_tilde.sum(axis=1)).max() < 1e-8

    @pytest.mark.parametrize("y_common", [0, 1, 2])
    def test_single_site_matches_rejection_oracle(self, rng, y_common):
        # first updated site (original category 0, faux base 2) for the three
        # truncation cases: chosen-here (y=0), chosen-other (y=1), chosen-base (y=2)
        n = 120_000
        p, b = 3, 2
        x_row = np.array([[0.4], [-0.1], [-0.3]])
        ds = ChoiceDataset(
            y=np.full(n, y_common),
            x_d=np.zeros((n, 0)),
            x_a=np.tile(x_row, (n, 1, 1)),
            labels=("c0", "c1", "c2"),
        )
        sampler = SmnpSampler(ds, Hyperparameters(beta_var=1.0))
        sigma_b = np.array([[1.2, -0.4], [-0.4, 0.8]])
        sigma_b = sigma_b * (p - 1) / np.trace(sigma_b)
        alpha2 = 1.3
        beta_tilde = np.array([0.3, -0.2, -0.6])
        # a single starting row, valid for the observed choice, repeated
        w_rows = {0: [1.0, 0.2, -1.2], 1: [0.2, 1.0, -1.2], 2: [-0.6, -0.4, 1.0]}
        w0 = np.tile(np.array(w_rows[y_common]), (n, 1))
        state = SmnpState(b=b, sigma_b=sigma_b, alpha2=alpha2, w_tilde=w0, beta_tilde=beta_tilde)
        new = sampler.step_utilities(state, RngStream(8 + y_common).generator())
        draws = new.w_tilde[:, 0]

        # oracle: unconstrained univariate conditional + argmax rejection
        V = alpha2 * sigma_b
        m = sampler.X_red[b][0] @ beta_tilde
        w1_old = w0[0, 1]
        mu_c = m[0] + V[0, 1] / V[1, 1] * (w1_old - m[1])
        sd_c = np.sqrt(V[0, 0] - V[0, 1] ** 2 / V[1, 1])
        g = np.random.default_rng(99)
        z = g.normal(mu_c, sd_c, size=8 * n)
        rows = np.column_stack([z, np.full(z.shape, w1_old), -(z + w1_old)])
        accepted = z[rows.argmax(axis=1) == y_common]
        assert accepted.size > 10_000
        p_ks = stats.ks_2samp(draws, accepted).pvalue
        assert p_ks > 0.01, f"KS p={p_ks:.4f} for case y={y_common}"

    def test_empty_dataset_noop(self):
        ds = empty_dataset(3)
        sampler = SmnpSampler(ds)
        state = sampler.init_state(RngStream(1).generator())
        assert sampler.step_utilities(state, RngStream(2).generator()) is state


class TestStepBeta:
    def test_prior_only_distribution(self):
        # n=0: draw is normal(0, alpha^2 A)
        ds = empty_dataset(3, k_a=1)
        sampler = SmnpSampler(ds, Hyperparameters(beta_var=2.0))
        g = RngStream(9).generator()
        state = sampler.init_state(g)
        state = SmnpState(
            b=state.b, sigma_b=state.sigma_b, alpha2=4.0,
            w_tilde=state.w_tilde, beta_tilde=state.beta_tilde,
        )
        draws = np.array([sampler.step_beta(state, g).beta_tilde for _ in range(20_000)])
        sd_expected = np.sqrt(4.0 * 2.0)
        p_ks = stats.kstest(draws[:, 0] / sd_expected, "norm").pvalue
        assert p_ks > 0.01
        assert abs(draws.std() - sd_expected) < 0.05

    def test_gls_limit(self, rng):
        # flat-prior limit: conditional mean equals generalized least squares
        ds = make_dataset(rng, n=3, p=3, k_a=1)
        sampler = SmnpSampler(ds, Hyperparameters(beta_var=1e12))
        g = RngStream(10).generator()
        state = sampler.init_state(g)
        state = sampler.step_utilities(state, g)
        beta_hat, _ = sampler.beta_conditional(state)

        sig_inv = np.linalg.inv(state.sigma_b)
        Xb = sampler.X_red[state.b]
        W = state.w_tilde[:, [j for j in range(3) if j != state.b]]
        P = sum(Xb[i].T @ sig_inv @ Xb[i] for i in range(3))
        r = sum(Xb[i].T @ sig_inv @ W[i] for i in range(3))
        gls = np.linalg.solve(P, r)
        np.testing.assert_allclose(beta_hat, gls, atol=1e-10)

    def test_reproducible(self, rng):
        ds = make_dataset(rng, n=10, p=3)
        sampler = SmnpSampler(ds)
        g1, g2 = RngStream(11).generator(), RngStream(11).generator()
        s1 = sampler.init_state(g1)
        s2 = sampler.init_state(g2)
        np.testing.assert_array_equal(
            sampler.step_beta(s1, g1).beta_tilde, sampler.step_beta(s2, g2).beta_tilde
        )


class TestStepBSigmaAlpha:
    def test_prior_only_b_uniform(self):
        ds = empty_dataset(4)
        sampler = SmnpSampler(ds)
        g = RngStream(12).generator()
        state = sampler.init_state(g)
        bs = np.array([sampler.step_b_sigma_alpha(state, g).b for _ in range(10_000)])
        counts = np.bincount(bs, minlength=4)
        # binomial se, 3 sigma
        se = np.sqrt(10_000 * 0.25 * 0.75)
        assert np.abs(counts - 2500).max() < 3 * se

    def test_trace_restriction(self, rng):
        ds = make_dataset(rng, n=40, p=4)
        sampler = SmnpSampler(ds)
        g = RngStream(13).generator()
        state = sampler.init_state(g)
        for _ in range(5):
            state = sampler.step_utilities(state, g)
            state = sampler.step_beta(state, g)
            state = sampler.step_b_sigma_alpha(state, g)
            assert abs(np.trace(state.sigma_b) - 3.0) < 1e-12
            assert state.alpha2 > 0

    def test_b_weights_match_importance_oracle(self, rng):
        # integrate the step-3 joint over the covariance by importance
        # sampling with inverse-Wishart proposals and a shared scale
        p, n = 3, 5
        ds = make_dataset(rng, n=n, p=p, k_a=1)
        sampler = SmnpSampler(ds, Hyperparameters(beta_var=1.0))
        g = RngStream(14).generator()
        state = sampler.init_state(g)
        for _ in range(3):
            state = sampler.step_utilities(state, g)
            state = sampler.step_beta(state, g)

        logw = sampler.candidate_logweights(state)
        w_impl = np.exp(logw - logw.max())
        w_impl /= w_impl.sum()

        nu = sampler.resolved.nu
        S = sampler.resolved.S
        full = expand_beta(state.beta_tilde, state.b, p, ds.k_a)
        resid = state.w_tilde - sampler.X @ full
        G = resid.T @ resid
        C = [S + np.delete(np.delete(G, c, 0), c, 1) for c in range(p)]
        df = n + nu
        prop_scale = sum(C) / p
        draws = sample_invwishart(df, prop_scale, RngStream(15).generator(), size=40_000)
        logq = stats.invwishart.logpdf(np.moveaxis(draws, 0, -1), df=df, scale=prop_scale)
        est = np.empty(p)
        d = p - 1
        for c in range(p):
            sign, logdet = np.linalg.slogdet(draws)
            inv = np.linalg.inv(draws)
            logf = -0.5 * (df + d + 1) * logdet - 0.5 * np.einsum("sij,ji->s", inv, C[c])
            ratios = logf - logq
            mx = ratios.max()
            est[c] = np.exp(mx) * np.exp(ratios - mx).mean()
        est /= est.sum()
        np.testing.assert_allclose(w_impl, est, rtol=0.02)

    def test_beta_reexpressed(self, rng):
        ds = make_dataset(rng, n=20, p=4)
        sampler = SmnpSampler(ds)
        g = RngStream(16).generator()
        state = sampler.init_state(g)
        state = sampler.step_utilities(state, g)
        state = sampler.step_beta(state, g)
        full_before = expand_beta(state.beta_tilde, state.b, 4, ds.k_a)
        new = sampler.step_b_sigma_alpha(state, g)
        full_after = expand_beta(new.beta_tilde, new.b, 4, ds.k_a)
        np.testing.assert_allclose(full_before, full_after, atol=1e-12)


class TestRunSmnp:
    def test_prior_recovery(self):
        ds = empty_dataset(4, k_a=1)
        h = Hyperparameters(iters=4400, burn=400, thin=1, seed=21, beta_var=2.5)
        store = run_smnp(ds, h)
        assert store.n_draws == 4000
        counts = np.bincount(store.b, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01
        # covariance prior: diagonal of the trace-restricted block
        direct, _ = sample_trace_restricted(
            5.0, store_prior_scale(4), 3.0, RngStream(77).generator(), size=4000
        )
        rows = [np.array([j for j in range(4) if j != b]) for b in range(4)]
        diag0 = np.array(
            [store.sigma[i][rows[store.b[i]][0], rows[store.b[i]][0]] for i in range(store.n_draws)]
        )
        assert stats.ks_2samp(diag0, direct[:, 0, 0]).pvalue > 0.01
        # coefficient prior: expanded normal(0, A)
        g = RngStream(78).generator()
        ref = np.stack(
            [
                expand_beta(np.sqrt(2.5) * g.standard_normal(4), int(g.integers(4)), 4, 1)
                for _ in range(4000)
            ]
        )
        for k in range(5):
            assert stats.ks_2samp(store.beta[:, k], ref[:, k]).pvalue > 0.01

    def test_stored_structure(self, rng):
        ds = make_dataset(rng, n=30, p=3)
        h = Hyperparameters(iters=300, burn=100, thin=4, seed=5)
        store = run_smnp(ds, h)
        assert store.n_draws == 50
        assert np.abs(store.beta[:, :3].sum(axis=1)).max() < 1e-10
        assert np.abs(store.sigma.sum(axis=2)).max() < 1e-9
        assert np.isfinite(store.log_kernel).all()
        ranks = np.linalg.matrix_rank(store.sigma[:5])
        assert (ranks == 2).all()

    def test_bit_identical_reruns(self, rng):
        ds = make_dataset(rng, n=25, p=3)
        h = Hyperparameters(iters=200, burn=50, thin=3, seed=9)
        assert run_smnp(ds, h).equals(run_smnp(ds, h))

    def test_utilities_optional(self, rng):
        ds = make_dataset(rng, n=8, p=3)
        h = Hyperparameters(iters=60, burn=10, thin=5, seed=1, store_utilities=True)
        store = run_smnp(ds, h)
        assert store.utilities is not None
        assert store.utilities.shape == (10, 8, 3)
        np.testing.assert_allclose(store.utilities.sum(axis=2), 0, atol=1e-8)
        assert run_smnp(ds, Hyperparameters(iters=60, burn=10, thin=5, seed=1)).utilities is None


def store_prior_scale(p):
    from smnp.types import default_S

    return default_S(p, 1.0 / (p - 1))
