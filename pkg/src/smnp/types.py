"""Core data types and linear-algebra building blocks for the sMNP model.

Categories are indexed 0..p-1 throughout; human-readable labels live on the
dataset and in persisted metadata.  The central objects are:

- :class:`ChoiceDataset`: one observed choice per agent plus covariates.
- the sum-to-zero machinery: design matrices, coefficient expansion and
  reduction, and the rank-deficient covariance Sigma = R @ R.T assembled
  from a positive-definite (p-1)-dimensional block.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger("smnp")

#: tolerance for checking that sum-to-zero sub-vectors actually sum to zero
SUM_TO_ZERO_TOL = 1e-8


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ChoiceDataset:
    """Observed choices with agent-level and alternative-level covariates.

    Attributes
    ----------
    y : (n,) int array
        Chosen category index for each agent, in 0..p-1.
    x_d : (n, k_d) array
        Covariates that vary by agent (e.g. a buyer's age).
    x_a : (n, p, k_a) array
        Covariates that vary by alternative (e.g. product prices).
    labels : tuple of str
        Category names, length p.
    """

    y: np.ndarray
    x_d: np.ndarray
    x_a: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        x_d = np.asarray(self.x_d, dtype=np.float64)
        x_a = np.asarray(self.x_a, dtype=np.float64)
        p = len(self.labels)
        if p < 2:
            raise ValueError(f"need at least 2 categories, got {p}")
        if y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        n = y.shape[0]
        if x_d.ndim != 2 or x_d.shape[0] != n:
            raise ValueError(f"x_d must have shape (n, k_d), got {x_d.shape}")
        if x_a.ndim != 3 or x_a.shape[:2] != (n, p):
            raise ValueError(f"x_a must have shape (n, p, k_a), got {x_a.shape}")
        if n and (y.min() < 0 or y.max() >= p):
            raise ValueError("y entries must lie in 0..p-1")
        if not (np.isfinite(x_d).all() and np.isfinite(x_a).all()):
            raise ValueError("covariates must be finite")
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "x_d", _freeze(x_d))
        object.__setattr__(self, "x_a", _freeze(x_a))
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return len(self.labels)

    @property
    def k_d(self) -> int:
        return self.x_d.shape[1]

    @property
    def k_a(self) -> int:
        return self.x_a.shape[2]

    @property
    def n_coef_full(self) -> int:
        """Length of the full coefficient vector: p(k_d+1) + k_a."""
        return self.p * (self.k_d + 1) + self.k_a

    @property
    def n_coef_reduced(self) -> int:
        """Length of the reduced coefficient vector: (p-1)(k_d+1) + k_a."""
        return (self.p - 1) * (self.k_d + 1) + self.k_a

    def is_centered(self, tol: float = 1e-12) -> bool:
        """True when every alternative-varying covariate has per-agent mean 0."""
        if self.k_a == 0 or self.n == 0:
            return True
        return bool(np.abs(self.x_a.mean(axis=1)).max() <= tol)

    def permute_categories(self, perm) -> "ChoiceDataset":
        """Relabel categories by ``perm``: new category j is old category perm[j]."""
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.p)):
            raise ValueError("perm must be a permutation of 0..p-1")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.p)
        return ChoiceDataset(
            y=inv[self.y],
            x_d=self.x_d,
            x_a=self.x_a[:, perm, :],
            labels=tuple(self.labels[j] for j in perm),
        )


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings and chain controls.

    ``nu``, ``c`` and ``S`` default per the number of categories when left as
    None: nu = p+1, c = 1/(p-1) and S = default_S(p, c).  ``beta_var`` is the
    coefficient prior covariance; a scalar means that multiple of the
    identity.
    """

    nu: float | None = None
    c: float | None = None
    S: np.ndarray | None = None
    beta_var: float | np.ndarray = 100.0
    iters: int = 20000
    burn: int = 5000
    thin: int = 5
    seed: int = 0
    store_utilities: bool = False

    def __post_init__(self):
        if self.iters <= 0 or self.thin <= 0 or self.burn < 0:
            raise ValueError("need iters > 0, thin > 0, burn >= 0")
        if self.burn >= self.iters:
            raise ValueError("burn must be smaller than iters")
        if self.c is not None and self.c < 0:
            raise ValueError("c must be nonnegative")

    def resolve(self, p: int, n_coef: int) -> "ResolvedHyper":
        """Materialize priors for a model with p categories and n_coef reduced
        coefficients."""
        c = 1.0 / (p - 1) if self.c is None else float(self.c)
        nu = float(p + 1) if self.nu is None else float(self.nu)
        if nu <= p - 2:
            raise ValueError(f"nu must exceed p-2={p - 2} for a proper prior")
        S = default_S(p, c) if self.S is None else np.asarray(self.S, dtype=float)
        if S.shape != (p - 1, p - 1):
            raise ValueError(f"S must be ({p - 1}, {p - 1}), got {S.shape}")
        if np.abs(S - S.T).max() > 1e-12 or np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("S must be symmetric positive definite")
        if np.isscalar(self.beta_var):
            if self.beta_var <= 0:
                raise ValueError("beta_var must be positive")
            A = float(self.beta_var) * np.eye(n_coef)
        else:
            A = np.asarray(self.beta_var, dtype=float)
            if A.shape != (n_coef, n_coef):
                raise ValueError(f"beta_var must be ({n_coef}, {n_coef})")
            if np.abs(A - A.T).max() > 1e-12 or np.linalg.eigvalsh(A).min() <= 0:
                raise ValueError("beta_var must be symmetric positive definite")
        return ResolvedHyper(nu=nu, c=c, S=_freeze(S), A=_freeze(A))

    def n_retained(self) -> int:
        return len(range(self.burn, self.iters, self.thin))


@dataclass(frozen=True)
class ResolvedHyper:
    """Concrete prior matrices for a fixed model dimension."""

    nu: float
    c: float
    S: np.ndarray
    A: np.ndarray


def ts_matrix(p: int) -> np.ndarray:
    """Symmetric centering transform: ones on the diagonal, -1/(p-1) elsewhere.

    Annihilates constant vectors and preserves the argmax, so applying it to a
    utility vector moves it onto the sum-to-zero hyperplane without changing
    the implied choice.
    """
    if p < 2:
        raise ValueError(f"need p >= 2, got {p}")
    t = np.full((p, p), -1.0 / (p - 1))
    np.fill_diagonal(t, 1.0)
    return t


def tbc_matrix(p: int) -> np.ndarray:
    """Base-subtraction transform [-J | I]: row j maps w to w[j+1] - w[0]."""
    if p < 2:
        raise ValueError(f"need p >= 2, got {p}")
    return np.hstack([np.full((p - 1, 1), -1.0), np.eye(p - 1)])


def default_S(p: int, c: float) -> np.ndarray:
    """Default prior scale: diagonal 1, off-diagonal -c, dimension p-1.

    With c = 1/(p-1) this equals the leading (p-1)-block of ts_matrix(p).
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    S = np.full((p - 1, p - 1), -float(c))
    np.fill_diagonal(S, 1.0)
    return S


def build_design(x_d_i: np.ndarray, x_a_i: np.ndarray) -> np.ndarray:
    """Per-agent design matrix with blocks [I_p | x_d^T kron I_p | x_a].

    Row j of the product X_i @ beta is the structural utility of category j:
    intercept_j + x_d . xi_j + x_a[j] . delta.
    """
    x_d_i = np.asarray(x_d_i, dtype=float).reshape(-1)
    x_a_i = np.asarray(x_a_i, dtype=float)
    if x_a_i.ndim != 2:
        raise ValueError("x_a_i must be a p x k_a matrix")
    p = x_a_i.shape[0]
    if p < 2:
        raise ValueError("need at least 2 alternatives")
    blocks = [np.eye(p)]
    for v in x_d_i:
        blocks.append(v * np.eye(p))
    blocks.append(x_a_i)
    return np.hstack(blocks)


def build_design_all(dataset: ChoiceDataset) -> np.ndarray:
    """Stacked designs for every agent, shape (n, p, p(k_d+1) + k_a)."""
    n, p, k_d, k_a = dataset.n, dataset.p, dataset.k_d, dataset.k_a
    X = np.zeros((n, p, dataset.n_coef_full))
    eye = np.eye(p)
    X[:, :, :p] = eye
    for j in range(k_d):
        X[:, :, (j + 1) * p : (j + 2) * p] = dataset.x_d[:, j, None, None] * eye
    if k_a:
        X[:, :, p * (k_d + 1) :] = dataset.x_a
    return X


def reduced_columns(p: int, k_d: int, k_a: int, b: int) -> np.ndarray:
    """Column indices of the full design kept after dropping category b's
    intercept and agent-covariate columns."""
    if not 0 <= b < p:
        raise ValueError(f"b must be in 0..{p - 1}, got {b}")
    keep = [j for blk in range(k_d + 1) for j in range(blk * p, (blk + 1) * p) if j % p != b]
    keep.extend(range(p * (k_d + 1), p * (k_d + 1) + k_a))
    return np.asarray(keep, dtype=np.intp)


def reduce_design(X_i: np.ndarray, b: int, k_a: int) -> np.ndarray:
    """Drop row b and the b-specific columns of a per-agent design matrix.

    ``k_a`` says how many trailing columns belong to alternative-varying
    covariates (those are kept whole).
    """
    X_i = np.asarray(X_i, dtype=float)
    p = X_i.shape[0]
    if (X_i.shape[1] - k_a) % p:
        raise ValueError("column count inconsistent with p and k_a")
    k_d = (X_i.shape[1] - k_a) // p - 1
    rows = [j for j in range(p) if j != b]
    return X_i[np.ix_(rows, reduced_columns(p, k_d, k_a, b))]


def expand_beta(beta_b: np.ndarray, b: int, p: int, k_a: int) -> np.ndarray:
    """Insert the sum-to-zero element at position b of each length-(p-1)
    sub-vector; the trailing k_a alternative-covariate block is copied.

    Inverse of :func:`reduce_beta`.
    """
    beta_b = np.asarray(beta_b, dtype=float).reshape(-1)
    if (beta_b.size - k_a) % (p - 1):
        raise ValueError(
            f"reduced vector of length {beta_b.size} inconsistent with p={p}, k_a={k_a}"
        )
    if not 0 <= b < p:
        raise ValueError(f"b must be in 0..{p - 1}, got {b}")
    n_blocks = (beta_b.size - k_a) // (p - 1)
    full = np.empty(n_blocks * p + k_a)
    for blk in range(n_blocks):
        sub = beta_b[blk * (p - 1) : (blk + 1) * (p - 1)]
        out = np.insert(sub, b, -sub.sum())
        full[blk * p : (blk + 1) * p] = out
    if k_a:
        full[n_blocks * p :] = beta_b[n_blocks * (p - 1) :]
    return full


def reduce_beta(beta_full: np.ndarray, b: int, p: int, k_a: int) -> np.ndarray:
    """Drop position b of each sum-to-zero sub-vector; keep the trailing
    alternative-covariate block.  Errors if sub-vectors do not sum to zero."""
    beta_full = np.asarray(beta_full, dtype=float).reshape(-1)
    if (beta_full.size - k_a) % p:
        raise ValueError(
            f"full vector of length {beta_full.size} inconsistent with p={p}, k_a={k_a}"
        )
    if not 0 <= b < p:
        raise ValueError(f"b must be in 0..{p - 1}, got {b}")
    n_blocks = (beta_full.size - k_a) // p
    for blk in range(n_blocks):
        s = beta_full[blk * p : (blk + 1) * p].sum()
        if abs(s) > SUM_TO_ZERO_TOL:
            raise ValueError(f"sub-vector {blk} sums to {s:.3g}, not 0")
    reduced = np.empty(n_blocks * (p - 1) + k_a)
    for blk in range(n_blocks):
        sub = beta_full[blk * p : (blk + 1) * p]
        reduced[blk * (p - 1) : (blk + 1) * (p - 1)] = np.delete(sub, b)
    if k_a:
        reduced[n_blocks * (p - 1) :] = beta_full[n_blocks * p :]
    return reduced


def construct_R(sigma_b: np.ndarray, b: int) -> np.ndarray:
    """Assemble the p x (p-1) factor R with zero column sums.

    The (p-1)-dimensional factor of ``sigma_b`` (any F with F F^T = sigma_b
    yields the same R R^T; we use the lower Cholesky factor) gets a row equal
    to minus its column sums inserted at position b, making Sigma = R R^T a
    rank-(p-1) covariance whose rows and columns sum to zero.
    """
    sigma_b = np.asarray(sigma_b, dtype=float)
    d = sigma_b.shape[0]
    p = d + 1
    if not 0 <= b < p:
        raise ValueError(f"b must be in 0..{p - 1}, got {b}")
    try:
        Rb = np.linalg.cholesky(sigma_b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sigma_b is not positive definite") from exc
    return np.insert(Rb, b, -Rb.sum(axis=0), axis=0)


def center_alternatives(dataset: ChoiceDataset) -> ChoiceDataset:
    """Center every alternative-varying covariate to per-agent mean zero.

    Idempotent; agent covariates are untouched.  The samplers require this
    standardization and apply it automatically (with a log notice) when given
    uncentered data.
    """
    if dataset.k_a == 0 or dataset.is_centered():
        return dataset
    x_a = dataset.x_a - dataset.x_a.mean(axis=1, keepdims=True)
    return replace(dataset, x_a=x_a)


def ensure_centered(dataset: ChoiceDataset) -> ChoiceDataset:
    if dataset.is_centered():
        return dataset
    logger.info("centering alternative-varying covariates to per-agent mean zero")
    return center_alternatives(dataset)


def argmax_choice(w: np.ndarray, warn_ties: bool = True) -> np.ndarray:
    """Row argmax with deterministic lowest-index tie-breaking.

    Exact ties are probability-zero under the model; when they do occur
    numerically we pick the lowest index and warn.
    """
    w = np.asarray(w)
    idx = w.argmax(axis=-1)
    if warn_ties:
        top = np.take_along_axis(w, idx[..., None], axis=-1)
        if ((w == top).sum(axis=-1) > 1).any():
            warnings.warn("argmax tie broken toward the lowest index", RuntimeWarning)
    return idx
