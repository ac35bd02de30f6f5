"""Three-step Gibbs sampler for the symmetric multinomial probit.

The chain lives on a transformed state (b, Sigma_b, alpha^2, W~, beta~)
where W~ = alpha W and beta~ = alpha beta carry an auxiliary working scale
alpha; Sigma_b keeps trace p-1 at every iteration.  One sweep is

  1. latent utilities W~, one truncated-normal site at a time,
  2. reduced coefficients beta~ from their normal conditional,
  3. the triple (b, Sigma_b, alpha): a marginalized multinomial for the
     faux base b, an inverse-Wishart for the unnormalized covariance, and
     trace normalization to recover (alpha, Sigma_b).

Retained draws are snapshotted after step 2, where every component of the
state refers to the same working scale, and back-transformed to the
identified parametrization (beta = beta~/alpha, Sigma = R R^T).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla

from .draws import KIND_SMNP, DrawStore
from .rng import RngStream, as_generator, sample_invwishart, truncnorm_vec
from .types import (
    ChoiceDataset,
    Hyperparameters,
    ResolvedHyper,
    build_design_all,
    construct_R,
    ensure_centered,
    expand_beta,
    reduce_beta,
    reduced_columns,
)


@dataclass
class SmnpState:
    """Current Gibbs state on the transformed parametrization."""

    b: int
    sigma_b: np.ndarray  # (p-1, p-1), trace p-1
    alpha2: float
    w_tilde: np.ndarray  # (n, p), rows sum to zero, row argmax matches y
    beta_tilde: np.ndarray  # ((p-1)(k_d+1) + k_a,)


class SmnpSampler:
    """Precomputed designs plus the three Gibbs steps for one dataset."""

    def __init__(self, dataset: ChoiceDataset, hyper: Hyperparameters | None = None):
        # per-category covariate means before centering; prediction defaults
        self._x_a_mean_raw = dataset.x_a.mean(axis=0) if dataset.n else None
        self.dataset = ensure_centered(dataset)
        self.hyper = hyper if hyper is not None else Hyperparameters()
        p, k_d, k_a = self.dataset.p, self.dataset.k_d, self.dataset.k_a
        self.resolved: ResolvedHyper = self.hyper.resolve(p, self.dataset.n_coef_reduced)
        self.X = build_design_all(self.dataset)
        self._rows = [np.array([j for j in range(p) if j != b]) for b in range(p)]
        self._cols = [reduced_columns(p, k_d, k_a, b) for b in range(p)]
        self.X_red = [self.X[:, self._rows[b], :][:, :, self._cols[b]] for b in range(p)]
        # reduced column position of each agent's chosen category, -1 when y_i = b
        y = self.dataset.y
        self._y_red = []
        for b in range(p):
            pos = np.searchsorted(self._rows[b], y)
            pos[y == b] = -1
            self._y_red.append(pos)
        self._A_inv = np.linalg.inv(self.resolved.A)
        _, self._A_logdet = np.linalg.slogdet(self.resolved.A)

    def with_choices(self, y: np.ndarray) -> "SmnpSampler":
        """Same designs and priors, different observed choices.

        Cheap: shares the precomputed design tensors, recomputing only the
        y-indexed lookups.  Used by joint-distribution validation harnesses
        that alternate parameter sweeps with data redraws.
        """
        y = np.asarray(y, dtype=np.int64)
        if y.shape != self.dataset.y.shape:
            raise ValueError("y has the wrong length")
        other = copy.copy(self)
        other.dataset = replace(self.dataset, y=y)
        other._y_red = []
        for b in range(self.dataset.p):
            pos = np.searchsorted(other._rows[b], y)
            pos[y == b] = -1
            other._y_red.append(pos)
        return other

    # -- initialization ----------------------------------------------------

    def init_state(self, rng) -> SmnpState:
        """Centered standard-normal utilities permuted so each row's maximum
        sits at the observed choice; b uniform; Sigma_b at the prior scale
        normalized to trace p-1; alpha = 1; coefficients zero."""
        rng = as_generator(rng)
        ds = self.dataset
        n, p = ds.n, ds.p
        z = rng.standard_normal((n, p))
        z -= z.mean(axis=1, keepdims=True)
        rows = np.arange(n)
        top = z.argmax(axis=1)
        swap = z[rows, ds.y].copy()
        z[rows, ds.y] = z[rows, top]
        z[rows, top] = swap
        b = int(rng.integers(p))
        S = self.resolved.S
        sigma_b = S * (p - 1) / np.trace(S)
        return SmnpState(
            b=b,
            sigma_b=sigma_b,
            alpha2=1.0,
            w_tilde=z,
            beta_tilde=np.zeros(ds.n_coef_reduced),
        )

    # -- step 1: latent utilities -------------------------------------------

    def step_utilities(self, state: SmnpState, rng) -> SmnpState:
        """Gibbs-sweep the free utility coordinates (ascending, skipping b).

        Each site is univariate truncated normal; the truncation region keeps
        the row argmax (including the implied coordinate at b, the negative
        sum of the others) equal to the observed choice.
        """
        ds = self.dataset
        n, p = ds.n, ds.p
        if n == 0:
            return state
        rng = as_generator(rng)
        b = state.b
        rows_b = self._rows[b]
        y_red = self._y_red[b]
        M = self.X_red[b] @ state.beta_tilde  # (n, p-1) conditional means
        omega = np.linalg.inv(state.alpha2 * state.sigma_b)
        W = state.w_tilde[:, rows_b].copy()
        D = W - M
        agents = np.arange(n)
        y = ds.y
        neg_inf = np.full(n, -np.inf)
        pos_inf = np.full(n, np.inf)
        for jr in range(p - 1):
            tau = 1.0 / np.sqrt(omega[jr, jr])
            mu = M[:, jr] - (D @ omega[:, jr] - omega[jr, jr] * D[:, jr]) / omega[jr, jr]
            total = W.sum(axis=1) - W[:, jr]
            if p > 2:
                others = np.delete(W, jr, axis=1).max(axis=1)
            else:
                others = neg_inf
            lower = neg_inf.copy()
            upper = pos_inf.copy()
            chosen_here = y == rows_b[jr]
            chosen_base = y == b
            chosen_other = ~chosen_here & ~chosen_base
            if chosen_here.any():
                lower[chosen_here] = np.maximum(-0.5 * total, others)[chosen_here]
            if chosen_other.any():
                wc = W[agents[chosen_other], y_red[chosen_other]]
                upper[chosen_other] = wc
                lower[chosen_other] = -total[chosen_other] - wc
            if chosen_base.any():
                upper[chosen_base] = np.minimum(-0.5 * total, -(others + total))[chosen_base]
            try:
                W[:, jr] = truncnorm_vec(mu, tau, lower, upper, rng)
            except (ValueError, RuntimeError) as exc:
                bad = int(np.argmax(~(lower < upper))) if (lower >= upper).any() else -1
                raise RuntimeError(f"utility update failed at agent {bad}") from exc
            D[:, jr] = W[:, jr] - M[:, jr]
        w_new = np.empty((n, p))
        w_new[:, rows_b] = W
        w_new[:, b] = -W.sum(axis=1)
        assert (w_new.argmax(axis=1) == y).all(), "utility sweep broke data consistency"
        return replace(state, w_tilde=w_new)

    # -- step 2: coefficients -----------------------------------------------

    def beta_conditional(self, state: SmnpState):
        """Mean and precision Cholesky factor of the coefficient conditional.

        The conditional is normal(beta_hat, alpha^2 (L L^T)^{-1}) with
        precision sum_i X_red^T Sigma_b^{-1} X_red + A^{-1}.
        """
        ds = self.dataset
        b = state.b
        sig_inv = np.linalg.inv(state.sigma_b)
        if ds.n:
            Xb = self.X_red[b]
            W_red = state.w_tilde[:, self._rows[b]]
            K = np.einsum("ab,ibm->iam", sig_inv, Xb)
            precision = np.einsum("iam,iak->mk", Xb, K) + self._A_inv
            lin = np.einsum("iam,ia->m", K, W_red)
        else:
            precision = self._A_inv.copy()
            lin = np.zeros(ds.n_coef_reduced)
        try:
            L = sla.cholesky(precision, lower=True)
        except sla.LinAlgError as exc:
            raise RuntimeError("coefficient precision is not positive definite") from exc
        beta_hat = sla.cho_solve((L, True), lin)
        return beta_hat, L

    def step_beta(self, state: SmnpState, rng) -> SmnpState:
        """Normal conditional from Bayesian linear regression of the reduced
        utilities on the reduced designs, with prior scaled by the working
        parameter."""
        rng = as_generator(rng)
        beta_hat, L = self.beta_conditional(state)
        z = rng.standard_normal(beta_hat.shape[0])
        draw = beta_hat + np.sqrt(state.alpha2) * sla.solve_triangular(L.T, z, lower=False)
        return replace(state, beta_tilde=draw)

    # -- step 3: faux base, covariance, working scale ------------------------

    def _residual_gram(self, state: SmnpState, full_beta: np.ndarray) -> np.ndarray:
        """Cross-product matrix of full-dimension utility residuals; each
        candidate's reduced residual matrix is a row/column deletion of it."""
        ds = self.dataset
        if not ds.n:
            return np.zeros((ds.p, ds.p))
        resid = state.w_tilde - self.X @ full_beta
        return resid.T @ resid

    def _logweights(self, gram: np.ndarray) -> np.ndarray:
        nu, S = self.resolved.nu, self.resolved.S
        p = self.dataset.p
        logw = np.empty(p)
        for cand in range(p):
            rows = self._rows[cand]
            sign, logdet = np.linalg.slogdet(S + gram[np.ix_(rows, rows)])
            if sign <= 0 or not np.isfinite(logdet):
                raise RuntimeError(f"singular candidate scale matrix at base {cand}")
            logw[cand] = -0.5 * (self.dataset.n + nu) * logdet
        return logw

    def candidate_logweights(self, state: SmnpState) -> np.ndarray:
        """Log of the marginalized multinomial weights over candidate bases.

        The current coefficients are mapped through the full sum-to-zero
        vector to every candidate's reduced parametrization; each weight is
        -((n + nu)/2) log|S + residual cross-products|.
        """
        full = expand_beta(state.beta_tilde, state.b, self.dataset.p, self.dataset.k_a)
        return self._logweights(self._residual_gram(state, full))

    def step_b_sigma_alpha(self, state: SmnpState, rng) -> SmnpState:
        rng = as_generator(rng)
        ds = self.dataset
        p, k_a = ds.p, ds.k_a
        full = expand_beta(state.beta_tilde, state.b, p, k_a)
        gram = self._residual_gram(state, full)
        logw = self._logweights(gram)
        w = np.exp(logw - logw.max())
        b_new = int(rng.choice(p, p=w / w.sum()))
        rows = self._rows[b_new]
        scale = self.resolved.S + gram[np.ix_(rows, rows)]
        sigma_raw = sample_invwishart(ds.n + self.resolved.nu, scale, rng)
        alpha2 = float(np.trace(sigma_raw)) / (p - 1)
        return replace(
            state,
            b=b_new,
            sigma_b=sigma_raw / alpha2,
            alpha2=alpha2,
            beta_tilde=reduce_beta(full, b_new, p, k_a),
        )

    # -- diagnostics ----------------------------------------------------------

    def log_kernel(self, state: SmnpState) -> float:
        """Unnormalized log joint density of the augmented state (constants in
        the data dimension dropped); a per-iteration diagnostic series."""
        ds = self.dataset
        p = ds.p
        nu, S = self.resolved.nu, self.resolved.S
        a2 = state.alpha2
        sig_inv = np.linalg.inv(state.sigma_b)
        _, logdet_sig = np.linalg.slogdet(state.sigma_b)
        out = 0.0
        if ds.n:
            W_red = state.w_tilde[:, self._rows[state.b]]
            resid = W_red - self.X_red[state.b] @ state.beta_tilde
            quad = np.einsum("ia,ab,ib->", resid, sig_inv, resid)
            out += -0.5 * ds.n * (logdet_sig + (p - 1) * np.log(a2)) - 0.5 * quad / a2
        m = state.beta_tilde.shape[0]
        out += -0.5 * (m * np.log(a2) + self._A_logdet) - 0.5 * (
            state.beta_tilde @ self._A_inv @ state.beta_tilde
        ) / a2
        out += (
            -0.5 * (nu + p) * logdet_sig
            - 0.5 * np.sum(S * sig_inv.T) / a2
            - (nu * (p - 1) / 2 + 1) * np.log(a2)
        )
        return float(out)

    # -- full chain -----------------------------------------------------------

    def run(self, rng=None) -> DrawStore:
        """Iterate steps 1-2-3, keeping every ``thin``-th sweep after burn-in.

        Snapshots are taken after step 2 so that the retained (b, Sigma_b,
        alpha, W~, beta~) all refer to one working scale; stored draws are the
        back-transformed beta = beta~/alpha (expanded to the sum-to-zero
        parametrization) and Sigma = R R^T.
        """
        hyper = self.hyper
        rng = as_generator(rng if rng is not None else RngStream(hyper.seed))
        ds = self.dataset
        p, k_a = ds.p, ds.k_a
        n_keep = hyper.n_retained()
        b_out = np.empty(n_keep, dtype=np.int64)
        alpha2_out = np.empty(n_keep)
        beta_out = np.empty((n_keep, ds.n_coef_full))
        sigma_out = np.empty((n_keep, p, p))
        kernel_out = np.empty(n_keep)
        util_out = np.empty((n_keep, ds.n, p)) if hyper.store_utilities else None

        t0 = time.perf_counter()
        state = self.init_state(rng)
        k = 0
        for it in range(hyper.iters):
            state = self.step_utilities(state, rng)
            state = self.step_beta(state, rng)
            if it >= hyper.burn and (it - hyper.burn) % hyper.thin == 0:
                alpha = np.sqrt(state.alpha2)
                b_out[k] = state.b
                alpha2_out[k] = state.alpha2
                beta_out[k] = expand_beta(state.beta_tilde, state.b, p, k_a) / alpha
                R = construct_R(state.sigma_b, state.b)
                sigma_out[k] = R @ R.T
                kernel_out[k] = self.log_kernel(state)
                if util_out is not None:
                    util_out[k] = state.w_tilde / alpha
                k += 1
            state = self.step_b_sigma_alpha(state, rng)
        wall = time.perf_counter() - t0

        meta = {
            "kind": KIND_SMNP,
            "p": p,
            "k_d": ds.k_d,
            "k_a": ds.k_a,
            "labels": list(ds.labels),
            "n_obs": ds.n,
            "nu": self.resolved.nu,
            "c": self.resolved.c,
            "beta_var": (
                float(hyper.beta_var)
                if np.isscalar(hyper.beta_var)
                else np.asarray(hyper.beta_var).tolist()
            ),
            "iters": hyper.iters,
            "burn": hyper.burn,
            "thin": hyper.thin,
            "seed": hyper.seed,
            "wall_time_s": wall,
            "x_a_mean": None if self._x_a_mean_raw is None else self._x_a_mean_raw.tolist(),
        }
        return DrawStore(
            kind=KIND_SMNP,
            labels=ds.labels,
            b=b_out,
            alpha2=alpha2_out,
            beta=beta_out,
            sigma=sigma_out,
            log_kernel=kernel_out,
            meta=meta,
            utilities=util_out,
        )


def run_smnp(dataset: ChoiceDataset, hyper: Hyperparameters | None = None, rng=None) -> DrawStore:
    """Fit the symmetric multinomial probit by Gibbs sampling."""
    return SmnpSampler(dataset, hyper).run(rng)
