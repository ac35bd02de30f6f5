import numpy as np
import pytest
from scipy import stats

from smnp.draws import DrawStore
from smnp.posterior import export_traces, postprocess_identify, predict_probs, price_curve
from smnp.rng import RngStream, sample_trace_restricted
from smnp.smnp import run_smnp
from smnp.types import ChoiceDataset, Hyperparameters, construct_R, default_S, expand_beta

from test_smnp_sampler import make_dataset


def synthetic_store(p=3, k_a=1, m=400, beta=None, sigma_b=None, seed=50):
    """Hand-built symmetric-model draw store for prediction tests."""
    g = RngStream(seed).generator()
    n_full = p * 1 + k_a
    betas = np.zeros((m, n_full))
    sigmas = np.empty((m, p, p))
    bs = g.integers(0, p, size=m)
    for s in range(m):
        if sigma_b is None:
            sb, _ = sample_trace_restricted(p + 1.0, default_S(p, 1 / (p - 1)), p - 1.0, g)
        else:
            sb = sigma_b
        R = construct_R(sb, int(bs[s]))
        sigmas[s] = R @ R.T
        if beta is not None:
            betas[s] = beta
    return DrawStore(
        kind="smnp",
        labels=tuple(f"c{j}" for j in range(p)),
        b=bs,
        alpha2=np.ones(m),
        beta=betas,
        sigma=sigmas,
        log_kernel=np.zeros(m),
        meta={"p": p, "k_d": 0, "k_a": k_a, "burn": 0, "thin": 1},
    )


class TestPredictProbs:
    def test_symmetric_zero_coefficients(self):
        store = synthetic_store(p=4, m=300)
        probs, se = predict_probs(store, np.zeros((4, 1)), mc_per_draw=64)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(probs, 0.25, atol=0.02)
        assert (se > 0).all()

    def test_dominant_category(self):
        beta = np.array([10.0, -5.0, -5.0, 0.0])
        sigma_b = 0.005 * default_S(3, 0.5)
        sigma_b *= 2.0 / np.trace(sigma_b) * 0.005
        store = synthetic_store(p=3, m=200, beta=beta, sigma_b=sigma_b)
        probs, _ = predict_probs(store, np.zeros((3, 1)), mc_per_draw=64)
        assert probs[0] > 1 - 1e-3

    def test_p2_quadrature_oracle(self, rng):
        # full-chain check: fitted p=2 symmetric model versus direct numeric
        # integration of the scalar binary-probit posterior
        n = 60
        x_a = rng.normal(0, 1.0, size=(n, 2, 1))
        x_a -= x_a.mean(axis=1, keepdims=True)
        dx = x_a[:, 0, 0] - x_a[:, 1, 0]
        eta0, delta = 0.4, -0.9
        margin = 2 * eta0 + delta * dx
        y = (margin + 2 * rng.standard_normal(n) < 0).astype(int)
        ds = ChoiceDataset(y=y, x_d=np.zeros((n, 0)), x_a=x_a, labels=("a", "b"))
        a_var = 3.0
        store = run_smnp(ds, Hyperparameters(iters=8000, burn=2000, thin=2, seed=51, beta_var=a_var))

        x_new = np.array([[0.5], [-0.5]])
        probs, _ = predict_probs(store, x_new, mc_per_draw=64, rng=RngStream(52).generator())

        # quadrature over (eta0, delta); eta0 is the category-0 intercept of
        # the sum-to-zero pair, margin mean = 2*eta0 + delta*dx, sd 2
        etas = np.linspace(-3, 3, 201)
        deltas = np.linspace(-4, 2, 201)
        E, D = np.meshgrid(etas, deltas, indexing="ij")
        mrg = 2 * E[..., None] + D[..., None] * dx
        loglik = np.where(y == 0, stats.norm.logcdf(mrg / 2), stats.norm.logcdf(-mrg / 2)).sum(-1)
        logpost = loglik - (E**2 + D**2) / (2 * a_var)
        w = np.exp(logpost - logpost.max())
        w /= w.sum()
        m_new = 2 * E + D * (x_new[0, 0] - x_new[1, 0])
        prob_quad = (w * stats.norm.cdf(m_new / 2)).sum()
        assert abs(probs[0] - prob_quad) < 0.01

    def test_dimension_mismatch(self):
        store = synthetic_store()
        with pytest.raises(ValueError):
            predict_probs(store, np.zeros((4, 1)))

    def test_sums_exactly_one(self, rng):
        store = synthetic_store(p=5, m=123)
        probs, _ = predict_probs(store, rng.standard_normal((5, 1)), mc_per_draw=17)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestPriceCurve:
    def test_constant_grid_constant_curve(self):
        store = synthetic_store(p=3, m=400)
        curve = price_curve(
            store, brand=0, price_grid=np.full(5, 1.0), fixed_prices=np.ones(3),
            mc_per_draw=64, rng=RngStream(60).generator(),
        )
        spread = curve.probs.max(axis=0) - curve.probs.min(axis=0)
        assert (spread < 6 * curve.se.max(axis=0) + 0.01).all()

    def test_probabilities_sum_to_one(self):
        store = synthetic_store(p=3, m=100)
        curve = price_curve(
            store, brand=1, price_grid=[0.5, 1.0, 2.0], fixed_prices=np.ones(3),
            log_scale=True, mc_per_draw=32,
        )
        np.testing.assert_allclose(curve.probs.sum(axis=1), 1.0, atol=1e-12)
        assert curve.probs.shape == (3, 3)

    def test_monotone_under_negative_price_coefficient(self, rng):
        # strictly negative price coefficient in every draw: own-brand
        # probability cannot increase with own price beyond MC noise
        m = 300
        g = RngStream(61).generator()
        store = synthetic_store(p=3, m=m)
        store.beta[:, 3] = -1.0 + 0.1 * g.standard_normal(m)
        store.beta[:, 3] = np.minimum(store.beta[:, 3], -0.2)
        curve = price_curve(
            store, brand=0, price_grid=np.linspace(0.2, 3.0, 8),
            fixed_prices=np.ones(3), mc_per_draw=64, rng=g,
        )
        own = curve.probs[:, 0]
        se = curve.se[:, 0]
        for j in range(len(own) - 1):
            assert own[j + 1] <= own[j] + 2 * np.sqrt(se[j] ** 2 + se[j + 1] ** 2)

    def test_log_scale_rejects_nonpositive(self):
        store = synthetic_store()
        with pytest.raises(ValueError):
            price_curve(store, 0, [1.0, -0.5], np.ones(3), log_scale=True)

    def test_empty_grid_rejected(self):
        store = synthetic_store()
        with pytest.raises(ValueError):
            price_curve(store, 0, [], np.ones(3))


class TestPostprocess:
    def test_trace_and_signs(self, rng):
        ds = make_dataset(rng, n=25, p=3)
        store = run_smnp(ds, Hyperparameters(iters=200, burn=50, thin=3, seed=62))
        out = postprocess_identify(store)
        np.testing.assert_allclose(np.trace(out.sigma, axis1=1, axis2=2), 3.0, atol=1e-12)
        assert (np.sign(out.beta) == np.sign(store.beta)).all()

    def test_idempotent(self, rng):
        ds = make_dataset(rng, n=20, p=3)
        store = run_smnp(ds, Hyperparameters(iters=150, burn=50, thin=2, seed=63))
        once = postprocess_identify(store)
        twice = postprocess_identify(once)
        np.testing.assert_allclose(once.sigma, twice.sigma, atol=1e-14)
        np.testing.assert_allclose(once.beta, twice.beta, atol=1e-14)

    def test_rejects_base_model(self, rng):
        from smnp.basemnp import run_mnp

        ds = make_dataset(rng, n=10, p=3)
        store = run_mnp(ds, Hyperparameters(iters=60, burn=20, thin=2, seed=64), base=0)
        with pytest.raises(ValueError):
            postprocess_identify(store)


class TestExportTraces:
    def test_selectors_and_shape(self, rng):
        ds = make_dataset(rng, n=15, p=3)
        store = run_smnp(ds, Hyperparameters(iters=110, burn=10, thin=4, seed=65))
        for sel in ("b", "alpha2", "log_kernel", "beta[2]", "sigma[0,1]"):
            series = export_traces(store, sel)
            assert series.shape == (store.n_draws, 2)
        np.testing.assert_array_equal(
            export_traces(store, "b")[:, 0], 10 + 4 * np.arange(store.n_draws)
        )

    def test_prior_only_b_uniform(self):
        from test_smnp_sampler import empty_dataset

        ds = empty_dataset(3)
        store = run_smnp(ds, Hyperparameters(iters=3300, burn=300, thin=1, seed=66))
        series = export_traces(store, "b")[:, 1].astype(int)
        counts = np.bincount(series, minlength=3)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_unknown_selector(self, rng):
        ds = make_dataset(rng, n=5, p=3)
        store = run_smnp(ds, Hyperparameters(iters=30, burn=10, thin=2, seed=67))
        for bad in ("gamma", "beta[99]", "sigma[9,9]", "beta"):
            with pytest.raises(ValueError):
                export_traces(store, bad)
