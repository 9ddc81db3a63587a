"""Privacy budget arithmetic and Gaussian noise injection.

The noise multiplier kappa(delta, epsilon) = (K + sqrt(K^2 + 2*eps))/(2*eps)
with K the upper-tail standard-normal quantile of delta; Gaussian noise of
standard deviation kappa * (l2 sensitivity) added independently per output
makes a filter release (epsilon, delta)-differentially private.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import InvalidDelta
from .streams import EventStream

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class PrivacySpec:
    """(epsilon, delta) budget plus per-channel adjacency magnitudes k."""

    epsilon: float
    delta: float
    k: tuple

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if not (0.0 < self.delta < 1.0):
            raise InvalidDelta(f"delta must lie in (0, 1), got {self.delta}")
        object.__setattr__(self, "k",
                           tuple(float(v) for v in np.atleast_1d(self.k)))
        if any(v <= 0 for v in self.k):
            raise ValueError("all adjacency magnitudes k_i must be positive")

    @property
    def m(self) -> int:
        return len(self.k)

    def k_vector(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)

    def k_matrix(self) -> np.ndarray:
        return np.diag(self.k_vector())

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta,
                "k": list(self.k)}


def q_function(x):
    """Upper tail of the standard normal: (1/sqrt(2pi)) int_x^inf e^{-u^2/2}."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2) if np.ndim(x) \
        else float(0.5 * erfc(x / _SQRT2))


def _phi(x: float) -> float:
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def q_inverse(delta: float) -> float:
    """Solve q_function(x) = delta by safeguarded Newton iteration.

    Newton steps on the monotone tail function are bracketed by bisection
    so the iteration cannot escape [lo, hi].
    """
    if not (0.0 < delta < 1.0):
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    lo, hi = -1.0, 1.0
    while q_function(lo) < delta:
        lo *= 2.0
    while q_function(hi) > delta:
        hi *= 2.0
    x = 0.0 if lo < 0.0 < hi else 0.5 * (lo + hi)
    for _ in range(200):
        f = q_function(x) - delta
        if f > 0.0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        d = _phi(x)
        step = f / d if d > 0.0 else 0.0
        x_new = x + step
        if not (lo <= x_new <= hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)) or abs(f) <= 1e-16:
            x = x_new
            break
        x = x_new
    return float(x)


def kappa(spec: PrivacySpec) -> float:
    """Gaussian mechanism noise multiplier for the (epsilon, delta) budget."""
    K = q_inverse(spec.delta)
    return float((K + np.sqrt(K * K + 2.0 * spec.epsilon))
                 / (2.0 * spec.epsilon))


def noise_sigma(sensitivity: float, spec: PrivacySpec) -> float:
    if sensitivity < 0:
        raise ValueError("sensitivity must be nonnegative")
    return kappa(spec) * float(sensitivity)


def add_noise(stream: EventStream, sigma: float, seed: int) -> EventStream:
    """Add iid zero-mean Gaussian samples of std sigma to every entry.

    Noise comes from numpy's PCG64 generator (ziggurat normal sampling),
    so outputs are bit-reproducible for a fixed seed within one numpy
    major version.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return stream.with_data(stream.data.copy())
    rng = np.random.default_rng(seed)
    return stream.with_data(stream.data +
                            rng.normal(0.0, sigma, size=stream.data.shape))
