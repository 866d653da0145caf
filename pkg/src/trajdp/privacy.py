"""Differential-privacy primitives: seeded noise, exponential mechanism, budgets."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ValidationError


def derive_seed(seed: int, label: str) -> int:
    """Stable 64-bit sub-seed for a named stage."""
    digest = hashlib.blake2b(f"{int(seed)}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class NoiseSource:
    """Single-owner stream of uniforms from which all noise is derived.

    ``enabled=False`` is the noise-free test mode: Laplace draws return 0 and
    the exponential mechanism degenerates to argmax (its large-epsilon limit).
    """

    def __init__(self, seed: int, enabled: bool = True):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.enabled = enabled
        self.counter = 0
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, label: str) -> "NoiseSource":
        return NoiseSource(derive_seed(self.seed, label), enabled=self.enabled)

    def uniform(self, size=None):
        """Draws in the open interval (0, 1)."""
        u = self._rng.random(size)
        self.counter += 1 if size is None else int(np.prod(size))
        # zero has probability 2**-53; redraw keeps the log in laplace finite
        while np.any(u == 0.0):
            if size is None:
                u = self._rng.random()
            else:
                zero = u == 0.0
                u[zero] = self._rng.random(int(zero.sum()))
        return u

    def laplace(self, scale: float, size=None):
        """Laplace(0, scale) by inverse CDF of one uniform per draw."""
        if not scale > 0:
            raise ValidationError(f"Laplace scale must be positive, got {scale}")
        if not self.enabled:
            return 0.0 if size is None else np.zeros(size)
        u = self.uniform(size) - 0.5
        return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_scale(sensitivity: float, epsilon: float) -> float:
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if sensitivity <= 0:
        raise ValidationError(f"sensitivity must be positive, got {sensitivity}")
    return sensitivity / epsilon


def laplace(ns: NoiseSource, scale: float) -> float:
    return float(ns.laplace(scale))


def exp_mechanism_probabilities(scores, eps_share: float, sensitivity: float) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    logits = eps_share * s / (2.0 * sensitivity)
    w = np.exp(logits - logits.max())
    return w / w.sum()


def exp_mechanism_select(ns: NoiseSource, scores, eps_share: float, sensitivity: float = 1.0) -> int:
    """Sample an index with probability proportional to exp(eps * score / (2 * sensitivity))."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValidationError("exponential mechanism needs at least one score")
    if sensitivity <= 0:
        raise ValidationError(f"utility sensitivity must be positive, got {sensitivity}")
    if eps_share <= 0:
        raise ValidationError(f"epsilon share must be positive, got {eps_share}")
    if not ns.enabled:
        return int(np.argmax(s))
    cdf = np.cumsum(exp_mechanism_probabilities(s, eps_share, sensitivity))
    u = ns.uniform() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), s.size - 1))


@dataclass(frozen=True)
class PrivacyBudget:
    """Total epsilon split into partition-cost, density, selection and measurement parts."""

    epsilon: float
    eps1: float
    eps2: float
    eps3: float
    eps4: float
    iterations: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        parts = (self.eps1, self.eps2, self.eps3, self.eps4)
        if min(parts) <= 0:
            raise ValidationError(f"every budget part must be positive, got {parts}")
        if not math.isclose(math.fsum(parts), self.epsilon, rel_tol=1e-12):
            raise ValidationError(f"budget parts {parts} do not sum to {self.epsilon}")

    @property
    def select_share(self) -> float:
        return self.eps3 / self.iterations

    @property
    def measure_share(self) -> float:
        return self.eps4 / self.iterations


def split_budget(epsilon: float, iterations: int = 10, fractions=(0.25, 0.25, 0.25, 0.25)) -> PrivacyBudget:
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if len(fractions) != 4 or min(fractions) <= 0 or not math.isclose(sum(fractions), 1.0, rel_tol=1e-12):
        raise ValidationError(f"budget fractions must be four positive numbers summing to 1, got {fractions}")
    e1, e2, e3 = (epsilon * f for f in fractions[:3])
    # last part absorbs rounding so the four parts sum to epsilon
    e4 = epsilon - e1 - e2 - e3
    return PrivacyBudget(epsilon, e1, e2, e3, e4, int(iterations))


@dataclass
class BudgetAccountant:
    """Sequential-composition ledger; refuses spends beyond the total."""

    epsilon: float
    spends: list[tuple[str, float]] = field(default_factory=list)

    @property
    def spent(self) -> float:
        return math.fsum(e for _, e in self.spends)

    @property
    def remaining(self) -> float:
        return self.epsilon - self.spent

    def spend(self, label: str, eps: float) -> None:
        if eps <= 0:
            raise BudgetError(f"spend '{label}' must be positive, got {eps}")
        if self.spent + eps > self.epsilon * (1 + 1e-12):
            raise BudgetError(f"spend '{label}' of {eps} exceeds remaining budget {self.remaining}")
        self.spends.append((label, float(eps)))

    def assert_exhausted(self) -> None:
        if not math.isclose(self.spent, self.epsilon, rel_tol=1e-12):
            raise BudgetError(f"spent {self.spent} of {self.epsilon}")
