"""Posterior predictive probabilities, price curves, post-hoc scale
identification, and trace-series export."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from .basemnp import base_rotation
from .draws import KIND_MNP, KIND_SMNP, DrawStore
from .rng import RngStream, as_generator
from .types import argmax_choice, build_design, construct_R


@dataclass(frozen=True)
class PredictiveCurve:
    """Posterior predictive selection probabilities along a covariate grid."""

    grid: np.ndarray  # (g,) the varied value (display scale)
    probs: np.ndarray  # (g, p)
    se: np.ndarray  # (g, p) batch-means Monte Carlo standard errors
    labels: tuple[str, ...]


def _center(x_a: np.ndarray) -> np.ndarray:
    return x_a - x_a.mean(axis=0, keepdims=True) if x_a.size else x_a


def _check_config(draws: DrawStore, x_a, x_d):
    p = draws.p
    k_a = int(draws.meta.get("k_a", 0))
    k_d = int(draws.meta.get("k_d", 0))
    x_a = np.zeros((p, 0)) if x_a is None else np.atleast_2d(np.asarray(x_a, dtype=float))
    if x_a.shape == (1, p) and k_a == 1:
        x_a = x_a.T
    if x_a.shape != (p, k_a):
        raise ValueError(f"x_a must have shape ({p}, {k_a}), got {x_a.shape}")
    x_d = np.zeros(k_d) if x_d is None else np.asarray(x_d, dtype=float).reshape(-1)
    if x_d.shape != (k_d,):
        raise ValueError(f"x_d must have length {k_d}")
    return x_a, x_d


def predict_probs(
    draws: DrawStore,
    x_a=None,
    x_d=None,
    mc_per_draw: int = 32,
    rng=None,
):
    """Posterior predictive category probabilities for one covariate
    configuration.

    For every retained draw, ``mc_per_draw`` utility vectors are simulated
    (through the rank-deficient factor for the symmetric model, through the
    base-subtracted covariance and observation rule for the base-category
    model) and argmax frequencies are tallied over a fixed denominator.

    Returns
    -------
    (probs, se): p-vectors; probabilities sum to one exactly, standard
    errors come from batch means over draws.
    """
    if draws.n_draws == 0:
        raise ValueError("empty draw store")
    rng = as_generator(rng if rng is not None else RngStream(0, 7))
    x_a, x_d = _check_config(draws, x_a, x_d)
    x_a = _center(x_a)
    p = draws.p
    m = draws.n_draws
    counts = np.zeros((m, p), dtype=np.int64)
    if draws.kind == KIND_SMNP:
        X = build_design(x_d, x_a)
        for s in range(m):
            mean = X @ draws.beta[s]
            keep = [j for j in range(p) if j != draws.b[s]]
            sigma_b = draws.sigma[s][np.ix_(keep, keep)]
            R = construct_R(sigma_b, int(draws.b[s]))
            w = mean[:, None] + R @ rng.standard_normal((p - 1, mc_per_draw))
            picks = argmax_choice(w.T, warn_ties=True)
            counts[s] = np.bincount(picks, minlength=p)
    else:
        base = int(draws.meta["base"])
        order = np.asarray(draws.meta.get("order", base_rotation(p, base)))
        x_star = x_a[order][1:] - x_a[base]
        blocks = [np.eye(p - 1)]
        for v in x_d:
            blocks.append(v * np.eye(p - 1))
        blocks.append(x_star)
        X = np.hstack(blocks)
        for s in range(m):
            mean = X @ draws.beta[s]
            L = np.linalg.cholesky(draws.sigma[s])
            w = mean[:, None] + L @ rng.standard_normal((p - 1, mc_per_draw))
            top = argmax_choice(w.T, warn_ties=True)
            cats = np.where(w.max(axis=0) < 0, base, order[top + 1])
            counts[s] = np.bincount(cats, minlength=p)
    total = m * mc_per_draw
    probs = counts.sum(axis=0) / total
    n_batches = max(min(30, m // 4), 1)
    edges = np.array_split(np.arange(m), n_batches)
    batch_probs = np.stack([counts[e].sum(axis=0) / (len(e) * mc_per_draw) for e in edges])
    se = batch_probs.std(axis=0, ddof=1) / np.sqrt(n_batches) if n_batches > 1 else np.zeros(p)
    return probs, se


def price_curve(
    draws: DrawStore,
    brand: int,
    price_grid,
    fixed_prices,
    log_scale: bool = False,
    covariate: int = 0,
    x_a_base=None,
    x_d=None,
    mc_per_draw: int = 32,
    rng=None,
) -> PredictiveCurve:
    """Predictive probabilities as one brand's price moves along a grid.

    ``fixed_prices`` holds the other brands' values for the varied covariate;
    with ``log_scale`` the grid and fixed values are prices in money units and
    enter the model through their logarithm.  Covariates are re-centered per
    observation before prediction, matching the fitting convention.
    """
    price_grid = np.asarray(price_grid, dtype=float)
    if price_grid.size == 0:
        raise ValueError("price grid is empty")
    p = draws.p
    k_a = int(draws.meta.get("k_a", 0))
    if not 0 <= brand < p:
        raise ValueError(f"brand must be in 0..{p - 1}")
    if not 0 <= covariate < max(k_a, 1):
        raise ValueError(f"covariate must be in 0..{k_a - 1}")
    fixed = np.asarray(fixed_prices, dtype=float).reshape(-1)
    if fixed.shape != (p,):
        raise ValueError(f"fixed_prices must have length {p}")
    base_cfg = (
        np.zeros((p, k_a))
        if x_a_base is None
        else np.asarray(x_a_base, dtype=float).reshape(p, k_a)
    )
    rng = as_generator(rng if rng is not None else RngStream(0, 11))
    probs = np.empty((price_grid.size, p))
    se = np.empty((price_grid.size, p))
    for g, price in enumerate(price_grid):
        values = fixed.copy()
        values[brand] = price
        if log_scale:
            if (values <= 0).any():
                raise ValueError("prices must be positive on a log scale")
            values = np.log(values)
        x_a = base_cfg.copy()
        x_a[:, covariate] = values
        probs[g], se[g] = predict_probs(draws, x_a, x_d, mc_per_draw, rng)
    return PredictiveCurve(grid=price_grid, probs=probs, se=se, labels=draws.labels)


def postprocess_identify(draws: DrawStore) -> DrawStore:
    """Rescale each retained draw to the single identified scale tr(Sigma) = p.

    Sigma is multiplied by s = p / tr(Sigma) and beta by sqrt(s); signs of
    beta are untouched.  Only meaningful for the symmetric model.
    """
    if draws.kind != KIND_SMNP:
        raise ValueError("post-processing applies to symmetric-model draws")
    p = draws.p
    tr = np.trace(draws.sigma, axis1=1, axis2=2)
    s = p / tr
    out = replace(
        draws,
        sigma=draws.sigma * s[:, None, None],
        beta=draws.beta * np.sqrt(s)[:, None],
        meta={**draws.meta, "postprocessed_trace": p},
    )
    return out


_SELECTOR = re.compile(
    r"^(b|alpha2|log_kernel|beta\[(\d+)\]|sigma\[(\d+),(\d+)\])$"
)


def export_traces(draws: DrawStore, which: str) -> np.ndarray:
    """Iteration-indexed series for one parameter selector.

    Selectors: ``b``, ``alpha2``, ``log_kernel``, ``beta[k]``, ``sigma[i,j]``.
    Returns an (m, 2) array of (chain iteration, value).
    """
    m = _SELECTOR.match(which.strip())
    if not m:
        raise ValueError(f"unknown trace selector {which!r}")
    if which == "b":
        series = draws.b.astype(float)
    elif which == "alpha2":
        series = draws.alpha2
    elif which == "log_kernel":
        series = draws.log_kernel
    elif which.startswith("beta"):
        k = int(m.group(2))
        if k >= draws.beta.shape[1]:
            raise ValueError(f"beta index {k} out of range")
        series = draws.beta[:, k]
    else:
        i, j = int(m.group(3)), int(m.group(4))
        if i >= draws.sigma.shape[1] or j >= draws.sigma.shape[2]:
            raise ValueError(f"sigma index ({i},{j}) out of range")
        series = draws.sigma[:, i, j]
    burn = int(draws.meta.get("burn", 0))
    thin = int(draws.meta.get("thin", 1))
    its = burn + thin * np.arange(draws.n_draws)
    return np.column_stack([its.astype(float), series])
