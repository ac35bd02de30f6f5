"""Container for retained posterior draws, shared by both samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: model kinds stored in DrawStore.kind
KIND_SMNP = "smnp"
KIND_MNP = "mnp"


@dataclass
class DrawStore:
    """Posterior draws, one row per retained iteration.

    For the symmetric model (kind "smnp"), ``beta`` holds the full expanded
    coefficient vector on the identified scale and ``sigma`` the p x p
    rank-deficient utility covariance; ``b`` is the sampled faux-base index.
    For the base-category model (kind "mnp"), ``beta`` holds the reduced
    base-subtracted coefficients, ``sigma`` the (p-1) x (p-1) covariance of
    base-subtracted utilities, and ``b`` is the constant base index.
    """

    kind: str
    labels: tuple[str, ...]
    b: np.ndarray
    alpha2: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    log_kernel: np.ndarray
    meta: dict = field(default_factory=dict)
    utilities: np.ndarray | None = None

    def __post_init__(self):
        m = self.b.shape[0]
        if not (self.alpha2.shape[0] == self.beta.shape[0] == self.sigma.shape[0] == m):
            raise ValueError("draw arrays disagree on retained count")
        if self.kind not in (KIND_SMNP, KIND_MNP):
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def n_draws(self) -> int:
        return self.b.shape[0]

    @property
    def p(self) -> int:
        return len(self.labels)

    def equals(self, other: "DrawStore") -> bool:
        """Bit-exact comparison of draw content (metadata wall time ignored)."""
        if self.kind != other.kind or self.labels != other.labels:
            return False
        for name in ("b", "alpha2", "beta", "sigma", "log_kernel"):
            if not np.array_equal(getattr(self, name), getattr(other, name)):
                return False
        return True
