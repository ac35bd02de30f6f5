"""Synthetic-data comparison of the symmetric model against every possible
base-category fit, scored by total variation from the true purchase
probabilities."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basemnp import run_mnp
from .draws import DrawStore
from .posterior import predict_probs
from .rng import RngStream, as_generator, sample_invwishart
from .smnp import run_smnp
from .types import ChoiceDataset, Hyperparameters, argmax_choice


@dataclass(frozen=True)
class SimScenario:
    """Data-generating settings, loosely calibrated to consumer-choice data.

    Brand intercepts and mean prices are jointly Gaussian with the stated
    correlation (desirable brands cost more); per-purchase prices add noise
    around the brand mean; the price coefficient is uniform on
    [coef_low, coef_high]; the utility covariance is inverse-Wishart with
    identity mean.  Marginal scales (intercept_sd, mean_price_sd,
    price_noise_sd) are package choices: they are chosen so every brand is
    purchased with substantial probability.
    """

    n: int = 750
    p: int = 6
    intercept_price_corr: float = 0.9
    intercept_sd: float = 0.5
    mean_price_level: float = 1.0
    mean_price_sd: float = 0.5
    price_noise_sd: float = 0.1
    coef_low: float = -1.25
    coef_high: float = -0.75
    cov_df: float = 50.0
    n_eval_pricesets: int = 10

    def labels(self) -> tuple[str, ...]:
        return tuple(f"brand{j}" for j in range(self.p))


@dataclass(frozen=True)
class TrueParams:
    intercepts: np.ndarray
    mean_prices: np.ndarray
    price_coef: float
    cov: np.ndarray


@dataclass
class StudyResult:
    """Per-replicate average total variation for each fitted model."""

    model_names: list[str]
    scores: np.ndarray  # (replicates, 1 + p); column 0 is the symmetric model
    meta: dict = field(default_factory=dict)

    @property
    def n_replicates(self) -> int:
        return self.scores.shape[0]

    def smnp_beats_median(self) -> np.ndarray:
        """Replicates where the symmetric fit beats the median base score."""
        med = np.median(self.scores[:, 1:], axis=1)
        return self.scores[:, 0] < med

    def smnp_is_worst(self) -> np.ndarray:
        return self.scores[:, 0] > self.scores[:, 1:].max(axis=1)


def gen_dataset(scenario: SimScenario, rng) -> tuple[ChoiceDataset, TrueParams]:
    """Draw one synthetic dataset and its generating parameters.

    Parameters are drawn without regard to any identifying restriction; the
    fitted models' normalizations are theirs alone.
    """
    rng = as_generator(rng)
    sc = scenario
    p, n = sc.p, sc.n
    z1 = rng.standard_normal(p)
    z2 = rng.standard_normal(p)
    intercepts = sc.intercept_sd * z1
    rho = sc.intercept_price_corr
    mean_prices = sc.mean_price_level + sc.mean_price_sd * (
        rho * z1 + np.sqrt(1 - rho**2) * z2
    )
    prices = mean_prices + sc.price_noise_sd * rng.standard_normal((n, p))
    price_coef = rng.uniform(sc.coef_low, sc.coef_high)
    cov = sample_invwishart(sc.cov_df, (sc.cov_df - p - 1) * np.eye(p), rng)
    chol = np.linalg.cholesky(cov)
    utils = intercepts + price_coef * prices + rng.standard_normal((n, p)) @ chol.T
    y = argmax_choice(utils, warn_ties=True)
    dataset = ChoiceDataset(
        y=y, x_d=np.zeros((n, 0)), x_a=prices[:, :, None], labels=sc.labels()
    )
    return dataset, TrueParams(
        intercepts=intercepts, mean_prices=mean_prices, price_coef=price_coef, cov=cov
    )


def true_probs(params: TrueParams, priceset, n_draws: int = 1_000_000, rng=None) -> np.ndarray:
    """Monte Carlo purchase probabilities under the true data-generating
    process at one price configuration."""
    rng = as_generator(rng if rng is not None else RngStream(0, 3))
    priceset = np.asarray(priceset, dtype=float).reshape(-1)
    p = params.intercepts.shape[0]
    if priceset.shape != (p,):
        raise ValueError(f"priceset must have length {p}")
    mean = params.intercepts + params.price_coef * priceset
    chol = np.linalg.cholesky(params.cov)
    counts = np.zeros(p, dtype=np.int64)
    chunk = 250_000
    done = 0
    while done < n_draws:
        k = min(chunk, n_draws - done)
        utils = mean + rng.standard_normal((k, p)) @ chol.T
        counts += np.bincount(argmax_choice(utils, warn_ties=False), minlength=p)
        done += k
    return counts / n_draws


def total_variation(p_hat, p_true) -> float:
    """Half the L1 distance between two probability vectors."""
    p_hat = np.asarray(p_hat, dtype=float)
    p_true = np.asarray(p_true, dtype=float)
    for v in (p_hat, p_true):
        if abs(v.sum() - 1.0) > 1e-6 or (v < -1e-12).any():
            raise ValueError("inputs must lie on the probability simplex")
    return float(0.5 * np.abs(p_hat - p_true).sum())


def default_fitter(name: str, dataset: ChoiceDataset, hyper: Hyperparameters, rng) -> DrawStore:
    if name == "smnp":
        return run_smnp(dataset, hyper, rng)
    if name.startswith("mnp"):
        return run_mnp(dataset, hyper, base=int(name[3:]), rng=rng)
    raise ValueError(f"unknown model {name!r}")


def score_replicate(
    scenario: SimScenario,
    chain: Hyperparameters,
    master_seed: int,
    rep: int,
    fitter=None,
    mc_per_draw: int = 32,
    true_prob_draws: int = 1_000_000,
) -> np.ndarray:
    """Generate one dataset and score the symmetric fit plus every base fit
    by average total variation over the first eval pricesets."""
    fitter = fitter or default_fitter
    stream = RngStream(master_seed, rep)
    dataset, params = gen_dataset(scenario, stream.substream(0).generator())
    n_eval = min(scenario.n_eval_pricesets, dataset.n)
    pricesets = dataset.x_a[:n_eval, :, 0]
    truths = [
        true_probs(params, pricesets[k], true_prob_draws, stream.substream(1).generator())
        for k in range(n_eval)
    ]
    names = ["smnp"] + [f"mnp{j}" for j in range(scenario.p)]
    scores = np.empty(len(names))
    for f, name in enumerate(names):
        store = fitter(name, dataset, chain, stream.substream(10 + f).generator())
        # per-priceset prediction streams are shared across models (common
        # random numbers), so identical fits score identically
        tvs = [
            total_variation(
                predict_probs(
                    store,
                    pricesets[k][:, None],
                    mc_per_draw=mc_per_draw,
                    rng=stream.substream(100 + k).generator(),
                )[0],
                truths[k],
            )
            for k in range(n_eval)
        ]
        scores[f] = np.mean(tvs)
    return scores


def _worker(args):
    scenario, chain, master_seed, rep, mc_per_draw, true_prob_draws = args
    return score_replicate(
        scenario, chain, master_seed, rep, None, mc_per_draw, true_prob_draws
    )


def max_workers() -> int:
    cap = os.environ.get("SMNP_THREADS", "").strip()
    if cap:
        return max(1, int(cap))
    return max(1, min(4, os.cpu_count() or 1))


def run_study(
    n_replicates: int,
    scenario: SimScenario | None = None,
    chain: Hyperparameters | None = None,
    master_seed: int = 0,
    fitter=None,
    mc_per_draw: int = 32,
    true_prob_draws: int = 1_000_000,
    workers: int | None = None,
) -> StudyResult:
    """Replicate the generate/fit/score loop; replicates use independent
    random streams derived from the master seed, so results do not depend on
    scheduling."""
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    scenario = scenario or SimScenario()
    chain = chain or Hyperparameters(iters=5000, burn=1000, thin=4)
    names = ["smnp"] + [f"mnp{j}" for j in range(scenario.p)]
    workers = workers if workers is not None else max_workers()
    rows = []
    if fitter is None and workers > 1 and n_replicates > 1:
        jobs = [
            (scenario, chain, master_seed, rep, mc_per_draw, true_prob_draws)
            for rep in range(n_replicates)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_worker, jobs))
    else:
        for rep in range(n_replicates):
            rows.append(
                score_replicate(
                    scenario, chain, master_seed, rep, fitter, mc_per_draw, true_prob_draws
                )
            )
    return StudyResult(
        model_names=names,
        scores=np.stack(rows),
        meta={
            "master_seed": master_seed,
            "n": scenario.n,
            "p": scenario.p,
            "iters": chain.iters,
            "burn": chain.burn,
            "thin": chain.thin,
        },
    )
