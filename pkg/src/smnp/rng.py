"""Reproducible sampling primitives used by the Gibbs samplers.

All randomness flows through :class:`RngStream`, a thin wrapper over a
counter-based Philox generator keyed by (seed, stream id).  Identical keys
reproduce identical draw sequences; distinct stream ids give statistically
independent streams, which is what lets simulation replicates run in
parallel off one master seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

#: standardized bound beyond which the truncated-normal sampler switches from
#: inverse-CDF to exponential-tilted rejection
TAIL_SWITCH = 4.0

_MAX_REJECTION_ROUNDS = 1000


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream) pair naming one reproducible random stream."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, k: int) -> "RngStream":
        """Derive an independent stream; distinct k give distinct streams."""
        return RngStream(seed=self.seed, stream=self.stream * 1_000_003 + k + 1)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(seed=int(rng)).generator()


def _truncnorm_std(lower: np.ndarray, upper: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal draws conditioned to (lower, upper), elementwise.

    Inverse-CDF in the complementary-probability parametrization for moderate
    truncation; exponential-tilted rejection once the near bound passes
    TAIL_SWITCH standard deviations.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    out = np.empty(lower.shape)

    # reflect intervals sitting in the lower tail so the binding bound is a >= 0
    flip = upper <= -lower
    a = np.where(flip, -upper, lower)
    b = np.where(flip, -lower, upper)

    tail = a > TAIL_SWITCH
    mod = ~tail
    if mod.any():
        am, bm = a[mod], b[mod]
        u = np.maximum(rng.uniform(size=am.shape), 5e-17)
        # work with upper-tail probabilities: accurate for large positive bounds
        pa = special.ndtr(-am)
        pb = special.ndtr(-bm)
        t = pb + u * (pa - pb)
        out[mod] = -special.ndtri(t)
    if tail.any():
        out[tail] = _tail_rejection(a[tail], b[tail], rng)

    np.negative(out, where=flip, out=out)
    # keep draws strictly inside the interval even when rounding lands on a bound
    bad = (out <= lower) | (out >= upper)
    if bad.any():
        lo_in = np.nextafter(lower[bad], upper[bad])
        hi_in = np.nextafter(upper[bad], lower[bad])
        out[bad] = np.clip(out[bad], lo_in, hi_in)
        if not np.isfinite(out[bad]).all():
            raise RuntimeError("degenerate truncation interval")
    return out


def _tail_rejection(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exponential-tilted rejection for intervals with a > TAIL_SWITCH.

    Proposals come from an exponential with the optimal tilt rate, truncated
    to (a, b); acceptance compares against the Gaussian kernel.
    """
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    # mass of the proposal's support: 1 - exp(-lam (b-a)), stable for b = inf
    span = -np.expm1(-lam * np.minimum(b - a, 7.0e2))
    out = np.empty(a.shape)
    todo = np.ones(a.shape, dtype=bool)
    for _ in range(_MAX_REJECTION_ROUNDS):
        m = int(todo.sum())
        if not m:
            return out
        u = np.maximum(rng.uniform(size=m), 5e-17)
        x = a[todo] - np.log1p(-u * span[todo]) / lam[todo]
        accept = rng.uniform(size=m) <= np.exp(-0.5 * (x - lam[todo]) ** 2)
        idx = np.flatnonzero(todo)[accept]
        out[idx] = x[accept]
        todo[idx] = False
    raise RuntimeError("truncated-normal rejection failed to accept")


def truncnorm_vec(mu, sd, lower, upper, rng) -> np.ndarray:
    """Vectorized truncated-normal draws; arguments broadcast elementwise."""
    rng = as_generator(rng)
    mu, sd, lower, upper = np.broadcast_arrays(
        np.asarray(mu, dtype=float),
        np.asarray(sd, dtype=float),
        np.asarray(lower, dtype=float),
        np.asarray(upper, dtype=float),
    )
    if (sd <= 0).any():
        raise ValueError("sd must be positive")
    if (lower >= upper).any():
        raise ValueError("need lower < upper")
    if (~np.isfinite(mu)).any():
        raise ValueError("mu must be finite")
    z = _truncnorm_std((lower - mu) / sd, (upper - mu) / sd, rng)
    return mu + sd * z


def sample_truncnorm(mu: float, sd: float, lower: float, upper: float, rng) -> float:
    """One draw from normal(mu, sd^2) conditioned to the open interval
    (lower, upper); bounds may be infinite."""
    return float(truncnorm_vec(mu, sd, lower, upper, rng)[()])


def sample_mvnorm(mu: np.ndarray, chol_factor: np.ndarray, rng) -> np.ndarray:
    """mu + L z with z iid standard normal; L is a lower-triangular factor."""
    rng = as_generator(rng)
    mu = np.asarray(mu, dtype=float)
    L = np.asarray(chol_factor, dtype=float)
    return mu + L @ rng.standard_normal(L.shape[1])


def sample_invwishart(nu: float, S: np.ndarray, rng, size: int | None = None) -> np.ndarray:
    """Inverse-Wishart draw with density proportional to
    |Sigma|^{-(nu+d+1)/2} exp(-tr(S Sigma^{-1})/2), so E[Sigma] = S/(nu-d-1).

    Returns a (d, d) matrix, or (size, d, d) when ``size`` is given.
    """
    rng = as_generator(rng)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    d = S.shape[0]
    if nu <= d - 1:
        raise ValueError(f"need nu > d-1 = {d - 1}, got {nu}")
    draw = stats.invwishart.rvs(df=nu, scale=S, size=size or 1, random_state=rng)
    draw = draw.reshape(size or 1, d, d)
    return draw if size is not None else draw[0]


def sample_trace_restricted(nu: float, S: np.ndarray, target_trace: float, rng, size: int | None = None):
    """Draw from the trace-restricted covariance prior via the working-scale
    construction: an unconstrained inverse-Wishart draw is normalized to the
    target trace, and the removed scale alpha^2 is returned alongside.

    Returns
    -------
    (Sigma, alpha2) with tr(Sigma) = target_trace exactly and alpha2 > 0;
    batched along a leading axis when ``size`` is given.
    """
    if target_trace <= 0:
        raise ValueError("target_trace must be positive")
    raw = sample_invwishart(nu, S, rng, size=size)
    alpha2 = np.trace(raw, axis1=-2, axis2=-1) / float(target_trace)
    sigma = raw / alpha2[..., None, None] if size is not None else raw / alpha2
    return sigma, (alpha2 if size is not None else float(alpha2))
