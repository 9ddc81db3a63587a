"""l2 sensitivity of LTI filters under the one-impulse-per-channel
adjacency relation: exact single-input and diagonal formulas, general
bounds, the exact MIMO value via Gramian cross terms, and a small
brute-force oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, HorizonExceeded, NotDiagonal,
                     OracleTooLarge, UnstableSystem)
from .lti import (RationalFilter, StateSpace, TransferMatrix, h2_norm,
                  observability_gramian, realize_state_space)


@dataclass
class SensitivityReport:
    lower: float
    upper: float
    exact: float | None = None
    horizon_used: int | None = None

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper,
                "exact": self.exact, "horizon_used": self.horizon_used}


def _as_tm(G) -> TransferMatrix:
    if isinstance(G, RationalFilter):
        return TransferMatrix([[G]])
    return G


def simo_sensitivity(G, k1: float) -> float:
    """Single-input system: sensitivity is k1 times the H2 norm."""
    G = _as_tm(G)
    if G.shape[1] != 1:
        raise DimensionMismatch(
            f"expected a single-input system, got {G.shape[1]} inputs")
    return float(k1) * h2_norm(G)


def diagonal_sensitivity(G, k) -> float:
    """Diagonal system: sqrt(sum_i ||k_i G_ii||_2^2)."""
    G = _as_tm(G)
    if not G.is_diagonal():
        raise NotDiagonal("prefilter must be square and diagonal")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.size != G.m:
        raise DimensionMismatch("k length must match channel count")
    total = 0.0
    for i, gii in enumerate(G.diagonal_entries()):
        total += (k[i] * h2_norm(gii)) ** 2
    return float(np.sqrt(total))


def mimo_bounds(G, k) -> tuple[float, float]:
    """Sandwich ||GK||_2 <= sensitivity <= |k|_2 ||G||_2."""
    G = _as_tm(G)
    if not G.is_stable():
        raise UnstableSystem("sensitivity bounds require a stable system")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.size != G.shape[1]:
        raise DimensionMismatch("k length must match input count")
    lower_sq = sum((k[j] * h2_norm(G.column(j))) ** 2 for j in range(G.m))
    upper = float(np.linalg.norm(k)) * h2_norm(G)
    return float(np.sqrt(lower_sq)), upper


def _cross_sup(ss: StateSpace, tol: float, max_horizon: int):
    """sup over signed lags of |S_ij^tau| for every input pair, with a
    certified geometric tail cutoff, plus the horizon actually scanned."""
    m = ss.m
    B, D, C, A = ss.B, ss.D, ss.C, ss.A
    P0 = observability_gramian(ss)
    # tau = 0 term for all pairs at once
    S0 = D.T @ D + B.T @ P0 @ B
    sup = np.abs(S0)
    if ss.n == 0:
        return sup, 0
    CtD = C.T @ D
    P0B = P0 @ B
    b_max = max(float(np.linalg.norm(B[:, j])) for j in range(m))
    cd_max = max(float(np.linalg.norm(CtD[:, j])) for j in range(m))
    pb_max = max(float(np.linalg.norm(P0B[:, j])) for j in range(m))
    # Frobenius norms upper-bound the spectral norm, so every inequality
    # below stays a valid certificate at a fraction of the SVD cost
    a_norm = float(np.linalg.norm(A))
    # |S_ij^tau| <= ||A^{tau-1}|| * c for tau >= 1 (and symmetrically for
    # tau <= -1), using ||A^tau|| <= ||A^{tau-1}|| * ||A||.
    c_bound = b_max * (cd_max + a_norm * pb_max)
    Apow = np.eye(ss.n)        # A^{tau-1}
    contraction_at = None      # first r with ||A^r||_F <= 1/2
    running_max = 1.0
    for tau in range(1, max_horizon + 1):
        # S^tau[i, j] = B_i^T (A^{tau-1})^T C^T D_j + B_i^T (A^tau)^T P0 B_j
        BtAp = B.T @ Apow.T
        Spos = BtAp @ CtD + BtAp @ (A.T @ P0B)
        sup = np.maximum(sup, np.abs(Spos))
        Apow = Apow @ A
        s_r = float(np.linalg.norm(Apow))
        running_max = max(running_max, s_r)
        if contraction_at is None and s_r <= 0.5:
            contraction_at = tau
        if contraction_at is not None:
            # submultiplicativity: sup_{r >= tau} ||A^r|| <=
            # running_max * 0.5^{floor(tau / contraction_at)}
            tail = running_max * 0.5 ** (tau // contraction_at)
            if c_bound * tail < tol:
                return np.maximum(sup, sup.T), tau
    raise HorizonExceeded(
        f"cross-term tail bound not certified within {max_horizon} lags")


def mimo_exact(ss, k, tol: float = 1e-10,
               max_horizon: int = 100000) -> SensitivityReport:
    """MIMO sensitivity from the Gramian cross-term expansion.

    Scans signed inter-impulse lags exhaustively until the geometric
    tail certificate falls below tol. Each input pair's worst lag is
    maximized independently, so the value is exact for two inputs (and
    whenever the per-pair optima can be realized by one set of impulse
    times) and otherwise a safe upper bound on the true sensitivity:
    the brute-force oracle confirms gaps up to a few percent on
    three-input systems. Noise calibrated on the returned value always
    suffices for the privacy guarantee.
    """
    if isinstance(ss, (TransferMatrix, RationalFilter)):
        ss = realize_state_space(_as_tm(ss))
    if not ss.is_stable():
        raise UnstableSystem("exact sensitivity requires a stable system")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.size != ss.m:
        raise DimensionMismatch("k length must match input count")
    P0 = observability_gramian(ss)
    col_energy = np.array([
        float(ss.D[:, j] @ ss.D[:, j] + ss.B[:, j] @ P0 @ ss.B[:, j])
        for j in range(ss.m)])
    lower_sq = float(np.sum(k ** 2 * col_energy))
    upper = float(np.linalg.norm(k) * np.sqrt(np.sum(col_energy)))
    sup, horizon = _cross_sup(ss, tol, max_horizon)
    cross = 0.0
    for i in range(ss.m):
        for j in range(ss.m):
            if i != j:
                cross += k[i] * k[j] * sup[i, j]
    exact = float(np.sqrt(lower_sq + cross))
    return SensitivityReport(lower=float(np.sqrt(lower_sq)), upper=upper,
                             exact=exact, horizon_used=horizon)


def brute_force_sensitivity(G, k, T: int) -> float:
    """Enumerate adjacency witnesses for a small FIR system.

    All impulse times in {0..T}^m and sign patterns alpha_i = +/-k_i are
    tried; sign extremality makes this exhaustive for the worst case.
    """
    G = _as_tm(G)
    if not G.is_fir():
        raise OracleTooLarge("oracle supports FIR systems only")
    m = G.shape[1]
    max_lag = max(e.num.size - 1 for row in G.entries for e in row)
    if m > 3 or T > 10:
        raise OracleTooLarge(f"oracle limits exceeded: m={m}, T={T}")
    if max_lag > T:
        raise OracleTooLarge(
            f"FIR support {max_lag} exceeds time horizon {T}")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.size != m:
        raise DimensionMismatch("k length must match input count")
    L = max_lag + 1
    h = G.impulse(L)                    # (L, p, m)
    length = T + L
    best_sq = 0.0
    signs = list(itertools.product((1.0, -1.0), repeat=m - 1)) if m > 1 \
        else [()]
    for times in itertools.product(range(T + 1), repeat=m):
        for sgn in signs:
            alpha = np.concatenate([[k[0]], np.asarray(sgn) * k[1:]]) \
                if m > 1 else np.array([k[0]])
            y = np.zeros((length, G.shape[0]))
            for i in range(m):
                t0 = times[i]
                y[t0: t0 + L, :] += alpha[i] * h[:, :, i]
            best_sq = max(best_sq, float(np.sum(y ** 2)))
    return float(np.sqrt(best_sq))
