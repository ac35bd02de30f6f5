"""Monte Carlo probes of prior selection-probability asymmetry.

Three-category setting: a fixed "category of interest" is examined once
coded as the base category and once as the first non-base category.  For a
structural-utility offset v and a base-subtracted covariance Sigma*,

- phi(v, Sigma*, "base")    = Pr(both components of N((-v,-v), Sigma*) < 0),
- phi(v, Sigma*, "nonbase") = Pr(first component of N((v,0), Sigma*) is
  positive and exceeds the second),

and psi averages phi over the trace-restricted prior for Sigma*.  The two
psi curves nearly coincide while the phi distributions differ sharply,
which is what makes fixed-base priors asymmetric in practice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream, as_generator, sample_trace_restricted

WHICH = ("base", "nonbase")


def _default_scale() -> np.ndarray:
    return np.array([[1.0, 0.5], [0.5, 1.0]])


@dataclass(frozen=True)
class PriorProbeConfig:
    """Defaults match the two-dimensional probe setting: nu = 2, scale with
    unit diagonal and 0.5 off-diagonal, offsets 0..3."""

    nu: float = 2.0
    S: np.ndarray = field(default_factory=_default_scale)
    v_grid: np.ndarray = field(default_factory=lambda: np.round(np.arange(0.0, 3.01, 0.1), 10))
    n_sigma_draws: int = 10_000
    n_eps_draws: int = 10_000

    def __post_init__(self):
        if self.n_sigma_draws <= 0 or self.n_eps_draws <= 0:
            raise ValueError("draw counts must be positive")
        S = np.asarray(self.S, dtype=float)
        if S.shape != (2, 2) or np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("S must be 2x2 symmetric positive definite")


@dataclass(frozen=True)
class PriorProbeResult:
    """psi curves with standard errors, plus raw phi samples at one offset."""

    v_grid: np.ndarray
    psi: dict  # which -> (g,) values
    se: dict  # which -> (g,) Monte Carlo standard errors
    phi_sample_v: float
    phi_samples: dict  # which -> (n_sigma_draws,) phi draws at phi_sample_v


def _phi_statistics(sigma_star: np.ndarray, n_eps: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw reductions whose empirical cdfs give phi for every offset.

    With eps ~ N(0, Sigma*): the base event is max(e1, e2) < v and the
    nonbase event is min(e1, e1 - e2) > -v.
    """
    L = np.linalg.cholesky(sigma_star)
    eps = rng.standard_normal((n_eps, 2)) @ L.T
    u = eps.max(axis=1)
    t = np.minimum(eps[:, 0], eps[:, 0] - eps[:, 1])
    return u, t


def phi(v: float, sigma_star: np.ndarray, which: str, n_eps: int, rng) -> float:
    """Monte Carlo estimate of the selection probability of the category of
    interest at structural offset v, under one base coding."""
    if which not in WHICH:
        raise ValueError(f"which must be one of {WHICH}")
    rng = as_generator(rng)
    u, t = _phi_statistics(np.asarray(sigma_star, dtype=float), n_eps, rng)
    if which == "base":
        return float((u < v).mean())
    return float((t > -v).mean())


def psi(v: float, which: str, cfg: PriorProbeConfig, rng) -> tuple[float, float]:
    """Average phi over the trace-restricted prior; returns (value, se)."""
    if which not in WHICH:
        raise ValueError(f"which must be one of {WHICH}")
    rng = as_generator(rng)
    sigmas, _ = sample_trace_restricted(cfg.nu, cfg.S, 2.0, rng, size=cfg.n_sigma_draws)
    vals = np.empty(cfg.n_sigma_draws)
    for s in range(cfg.n_sigma_draws):
        vals[s] = phi(v, sigmas[s], which, cfg.n_eps_draws, rng)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(cfg.n_sigma_draws))


def psi_curve(cfg: PriorProbeConfig, rng=None, phi_sample_v: float = 1.0) -> PriorProbeResult:
    """Both psi curves over the offset grid from one set of prior draws.

    Each covariance draw is reduced to sorted statistics so that all grid
    offsets (and both base codings) reuse the same utility draws; phi samples
    at ``phi_sample_v`` are kept for density plots.
    """
    rng = as_generator(rng if rng is not None else RngStream(0, 23))
    v = np.asarray(cfg.v_grid, dtype=float)
    sigmas, _ = sample_trace_restricted(cfg.nu, cfg.S, 2.0, rng, size=cfg.n_sigma_draws)
    n_s, n_e = cfg.n_sigma_draws, cfg.n_eps_draws
    phis = {w: np.empty((n_s, v.size)) for w in WHICH}
    samples = {w: np.empty(n_s) for w in WHICH}
    for s in range(n_s):
        u, t = _phi_statistics(sigmas[s], n_e, rng)
        u.sort()
        t.sort()
        phis["base"][s] = np.searchsorted(u, v, side="left") / n_e
        phis["nonbase"][s] = 1.0 - np.searchsorted(t, -v, side="right") / n_e
        samples["base"][s] = np.searchsorted(u, phi_sample_v, side="left") / n_e
        samples["nonbase"][s] = 1.0 - np.searchsorted(t, -phi_sample_v, side="right") / n_e
    out_psi = {w: phis[w].mean(axis=0) for w in WHICH}
    out_se = {w: phis[w].std(axis=0, ddof=1) / np.sqrt(n_s) for w in WHICH}
    return PriorProbeResult(
        v_grid=v, psi=out_psi, se=out_se, phi_sample_v=phi_sample_v, phi_samples=samples
    )
