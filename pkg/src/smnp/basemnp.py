"""Trace-restricted base-category multinomial probit (the comparison model).

One category is fixed as the base; its utility is subtracted from the
others, giving (p-1)-dimensional latent utilities with covariance
constrained to trace p-1 and the same working-scale bookkeeping as the
symmetric sampler.  The base is rotated into position 0 internally, so a
single code path serves every base choice.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla

from .draws import KIND_MNP, DrawStore
from .rng import RngStream, as_generator, sample_invwishart, truncnorm_vec
from .types import (
    ChoiceDataset,
    Hyperparameters,
    ensure_centered,
    tbc_matrix,
)


def base_rotation(p: int, base: int) -> np.ndarray:
    """Category order with the base first, others in ascending index order."""
    if not 0 <= base < p:
        raise ValueError(f"base must be in 0..{p - 1}, got {base}")
    return np.array([base] + [j for j in range(p) if j != base])


def transform_to_base(dataset: ChoiceDataset, base: int) -> np.ndarray:
    """Per-agent base-subtracted designs, shape (n, p-1, (p-1)(k_d+1) + k_a).

    Blocks: [I_{p-1} | x_d^T kron I_{p-1} | base-subtracted x_a], with the
    base rotated into the reference slot.
    """
    ds = dataset
    n, p, k_d, k_a = ds.n, ds.p, ds.k_d, ds.k_a
    order = base_rotation(p, base)
    m = (p - 1) * (k_d + 1) + k_a
    X = np.zeros((n, p - 1, m))
    eye = np.eye(p - 1)
    X[:, :, : p - 1] = eye
    for j in range(k_d):
        X[:, :, (j + 1) * (p - 1) : (j + 2) * (p - 1)] = ds.x_d[:, j, None, None] * eye
    if k_a:
        X[:, :, (p - 1) * (k_d + 1) :] = ds.x_a[:, order, :][:, 1:, :] - ds.x_a[:, base, None, :]
    return X


def sigma_star_from_full(sigma: np.ndarray, base: int) -> np.ndarray:
    """Base-subtracted covariance T_bc Sigma_rot T_bc^T; test utility."""
    p = sigma.shape[0]
    order = base_rotation(p, base)
    T = tbc_matrix(p)
    return T @ sigma[np.ix_(order, order)] @ T.T


@dataclass
class BaseMnpState:
    """Gibbs state for the base-category model on the transformed scale."""

    sigma_star: np.ndarray  # (p-1, p-1), trace p-1
    alpha2: float
    w_star: np.ndarray  # (n, p-1) base-subtracted utilities (working scale)
    beta_tilde: np.ndarray


class BaseMnpSampler:
    def __init__(self, dataset: ChoiceDataset, hyper: Hyperparameters | None = None, base: int = 0):
        self._x_a_mean_raw = dataset.x_a.mean(axis=0) if dataset.n else None
        self.dataset = ensure_centered(dataset)
        self.hyper = hyper if hyper is not None else Hyperparameters()
        self.base = int(base)
        p = self.dataset.p
        self.order = base_rotation(p, self.base)
        self.resolved = self.hyper.resolve(p, self.dataset.n_coef_reduced)
        self.X = transform_to_base(self.dataset, self.base)
        # reduced slot of each agent's chosen category; -1 when the base is chosen
        pos_in_order = np.empty(p, dtype=np.int64)
        pos_in_order[self.order] = np.arange(p)
        self._y_red = pos_in_order[self.dataset.y] - 1 if self.dataset.n else np.zeros(0, int)
        self._A_inv = np.linalg.inv(self.resolved.A)
        _, self._A_logdet = np.linalg.slogdet(self.resolved.A)

    def with_choices(self, y: np.ndarray) -> "BaseMnpSampler":
        import copy

        y = np.asarray(y, dtype=np.int64)
        other = copy.copy(self)
        other.dataset = replace(self.dataset, y=y)
        p = self.dataset.p
        pos_in_order = np.empty(p, dtype=np.int64)
        pos_in_order[self.order] = np.arange(p)
        other._y_red = pos_in_order[y] - 1
        return other

    def init_state(self, rng) -> BaseMnpState:
        """Standard-normal utilities arranged to satisfy the observation rule:
        all negative when the base was chosen, otherwise the chosen slot
        positive and maximal."""
        rng = as_generator(rng)
        ds = self.dataset
        n, p = ds.n, ds.p
        z = rng.standard_normal((n, p - 1))
        chose_base = self._y_red < 0
        z[chose_base] = -np.abs(z[chose_base])
        idx = np.flatnonzero(~chose_base)
        if idx.size:
            tops = np.abs(z[idx]).max(axis=1) + 0.5
            z[idx, self._y_red[idx]] = tops
        S = self.resolved.S
        return BaseMnpState(
            sigma_star=S * (p - 1) / np.trace(S),
            alpha2=1.0,
            w_star=z,
            beta_tilde=np.zeros(ds.n_coef_reduced),
        )

    def step_utilities(self, state: BaseMnpState, rng) -> BaseMnpState:
        ds = self.dataset
        n, p = ds.n, ds.p
        if n == 0:
            return state
        rng = as_generator(rng)
        M = self.X @ state.beta_tilde
        omega = np.linalg.inv(state.alpha2 * state.sigma_star)
        W = state.w_star.copy()
        D = W - M
        y_red = self._y_red
        agents = np.arange(n)
        neg_inf = np.full(n, -np.inf)
        pos_inf = np.full(n, np.inf)
        for jr in range(p - 1):
            tau = 1.0 / np.sqrt(omega[jr, jr])
            mu = M[:, jr] - (D @ omega[:, jr] - omega[jr, jr] * D[:, jr]) / omega[jr, jr]
            if p > 2:
                others = np.delete(W, jr, axis=1).max(axis=1)
            else:
                others = neg_inf
            lower = neg_inf.copy()
            upper = pos_inf.copy()
            chose_base = y_red < 0
            chosen_here = y_red == jr
            chosen_other = ~chose_base & ~chosen_here
            upper[chose_base] = 0.0
            if chosen_here.any():
                lower[chosen_here] = np.maximum(0.0, others)[chosen_here]
            if chosen_other.any():
                upper[chosen_other] = W[agents[chosen_other], y_red[chosen_other]]
            W[:, jr] = truncnorm_vec(mu, tau, lower, upper, rng)
            D[:, jr] = W[:, jr] - M[:, jr]
        ok_base = (W.max(axis=1) < 0) | (y_red >= 0)
        ok_pick = (y_red < 0) | (
            (W[agents, np.maximum(y_red, 0)] > 0)
            & (W.argmax(axis=1) == np.maximum(y_red, 0))
        )
        assert (ok_base & ok_pick).all(), "utility sweep broke the base-category rule"
        return replace(state, w_star=W)

    def beta_conditional(self, state: BaseMnpState):
        ds = self.dataset
        sig_inv = np.linalg.inv(state.sigma_star)
        if ds.n:
            K = np.einsum("ab,ibm->iam", sig_inv, self.X)
            precision = np.einsum("iam,iak->mk", self.X, K) + self._A_inv
            lin = np.einsum("iam,ia->m", K, state.w_star)
        else:
            precision = self._A_inv.copy()
            lin = np.zeros(ds.n_coef_reduced)
        L = sla.cholesky(precision, lower=True)
        return sla.cho_solve((L, True), lin), L

    def step_beta(self, state: BaseMnpState, rng) -> BaseMnpState:
        rng = as_generator(rng)
        beta_hat, L = self.beta_conditional(state)
        z = rng.standard_normal(beta_hat.shape[0])
        draw = beta_hat + np.sqrt(state.alpha2) * sla.solve_triangular(L.T, z, lower=False)
        return replace(state, beta_tilde=draw)

    def step_sigma_alpha(self, state: BaseMnpState, rng) -> BaseMnpState:
        rng = as_generator(rng)
        ds = self.dataset
        p = ds.p
        if ds.n:
            resid = state.w_star - self.X @ state.beta_tilde
            scale = self.resolved.S + resid.T @ resid
        else:
            scale = self.resolved.S
        raw = sample_invwishart(ds.n + self.resolved.nu, scale, rng)
        alpha2 = float(np.trace(raw)) / (p - 1)
        return replace(state, sigma_star=raw / alpha2, alpha2=alpha2)

    def log_kernel(self, state: BaseMnpState) -> float:
        ds = self.dataset
        p = ds.p
        nu, S = self.resolved.nu, self.resolved.S
        a2 = state.alpha2
        sig_inv = np.linalg.inv(state.sigma_star)
        _, logdet = np.linalg.slogdet(state.sigma_star)
        out = 0.0
        if ds.n:
            resid = state.w_star - self.X @ state.beta_tilde
            quad = np.einsum("ia,ab,ib->", resid, sig_inv, resid)
            out += -0.5 * ds.n * (logdet + (p - 1) * np.log(a2)) - 0.5 * quad / a2
        m = state.beta_tilde.shape[0]
        out += -0.5 * (m * np.log(a2) + self._A_logdet) - 0.5 * (
            state.beta_tilde @ self._A_inv @ state.beta_tilde
        ) / a2
        out += (
            -0.5 * (nu + p) * logdet
            - 0.5 * np.sum(S * sig_inv.T) / a2
            - (nu * (p - 1) / 2 + 1) * np.log(a2)
        )
        return float(out)

    def run(self, rng=None) -> DrawStore:
        hyper = self.hyper
        rng = as_generator(rng if rng is not None else RngStream(hyper.seed))
        ds = self.dataset
        p = ds.p
        n_keep = hyper.n_retained()
        alpha2_out = np.empty(n_keep)
        beta_out = np.empty((n_keep, ds.n_coef_reduced))
        sigma_out = np.empty((n_keep, p - 1, p - 1))
        kernel_out = np.empty(n_keep)
        util_out = np.empty((n_keep, ds.n, p - 1)) if hyper.store_utilities else None

        t0 = time.perf_counter()
        state = self.init_state(rng)
        k = 0
        for it in range(hyper.iters):
            state = self.step_utilities(state, rng)
            state = self.step_beta(state, rng)
            if it >= hyper.burn and (it - hyper.burn) % hyper.thin == 0:
                alpha = np.sqrt(state.alpha2)
                alpha2_out[k] = state.alpha2
                beta_out[k] = state.beta_tilde / alpha
                sigma_out[k] = state.sigma_star
                kernel_out[k] = self.log_kernel(state)
                if util_out is not None:
                    util_out[k] = state.w_star / alpha
                k += 1
            state = self.step_sigma_alpha(state, rng)
        wall = time.perf_counter() - t0

        meta = {
            "kind": KIND_MNP,
            "p": p,
            "k_d": ds.k_d,
            "k_a": ds.k_a,
            "labels": list(ds.labels),
            "n_obs": ds.n,
            "base": self.base,
            "base_label": ds.labels[self.base],
            "order": self.order.tolist(),
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
            kind=KIND_MNP,
            labels=ds.labels,
            b=np.full(n_keep, self.base, dtype=np.int64),
            alpha2=alpha2_out,
            beta=beta_out,
            sigma=sigma_out,
            log_kernel=kernel_out,
            meta=meta,
            utilities=util_out,
        )


def run_mnp(
    dataset: ChoiceDataset,
    hyper: Hyperparameters | None = None,
    base: int = 0,
    rng=None,
) -> DrawStore:
    """Fit the base-category multinomial probit by Gibbs sampling."""
    return BaseMnpSampler(dataset, hyper, base).run(rng)
