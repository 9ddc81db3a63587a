"""Linear mean-square mechanisms: Wiener smoother and causal Wiener
postfilters exploiting public second-order input statistics, and the
convex allocation of prefilter magnitude across channels and
frequencies (waterfilling closed form / projected gradient).

Throughout, tilde quantities absorb the privacy calibration:
Ft = kappa * F * K, Pt = K^-1 P_u K^-1 / kappa^2, and the squared
prefilter magnitudes x_iq integrate (trapezoidally) to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as ssig

from .errors import (ConfigError, DegenerateObjective, DimensionMismatch,
                     NotDiagonal, NotPositiveDefinite, OptimizerStalled)
from .lti import (DEFAULT_GRID, RationalFilter, SpectrumGrid, TransferMatrix,
                  freq_response, grid_omega, trapezoid_mean)
from .privacy import PrivacySpec, kappa
from .sensitivity import diagonal_sensitivity
from .spectral import matrix_canonical_factor, scalar_spectral_factor
from .zfe import DEFAULT_FACTOR_ORDER, MechanismDesign

_ZERO_CHANNEL_TOL = 1e-12


@dataclass
class AllocationProfile:
    """Squared prefilter magnitudes x[q, i] = |g~_ii(e^{j omega_q})|^2."""

    x: np.ndarray               # (N+1, m), nonnegative
    lam: float | None = None    # waterfilling multiplier when applicable
    objective: float | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise DimensionMismatch("profile must have shape (N+1, m)")

    @property
    def n_grid(self) -> int:
        return self.x.shape[0] - 1

    @property
    def m(self) -> int:
        return self.x.shape[1]

    def normalization(self) -> float:
        return float(trapezoid_mean(self.x.sum(axis=1)))

    def validate(self, tol: float = 1e-8) -> None:
        if np.any(self.x < -1e-12):
            raise ValueError("profile has negative entries")
        norm = self.normalization()
        if abs(norm - 1.0) > tol:
            raise ValueError(f"profile normalization is {norm}, expected 1")


def as_grid(obj, N: int, square_side: int | None = None) -> np.ndarray:
    """Coerce a TransferMatrix/SpectrumGrid/array to (N+1, d1, d2) samples."""
    if isinstance(obj, SpectrumGrid):
        if obj.n_grid != N:
            raise ConfigError(f"grid size mismatch: {obj.n_grid} vs {N}")
        return obj.samples
    if isinstance(obj, RationalFilter):
        obj = TransferMatrix([[obj]])
    if isinstance(obj, TransferMatrix):
        return freq_response(obj, N).samples
    arr = np.asarray(obj, dtype=complex)
    if arr.ndim == 1:
        arr = arr[:, None, None]
    if arr.shape[0] != N + 1:
        raise ConfigError("sample count does not match the grid")
    if square_side is not None and arr.shape[1:] != (square_side, square_side):
        raise DimensionMismatch("unexpected grid block shape")
    return arr


def _tilde(Fg: np.ndarray, Pg: np.ndarray, k: np.ndarray, kap: float):
    Ft = kap * Fg * k[None, None, :]
    scale = np.outer(1.0 / k, 1.0 / k) / kap ** 2
    Pt = Pg * scale[None, :, :]
    return Ft, Pt


def _psd_sqrt(P: np.ndarray) -> np.ndarray:
    """Batched Hermitian PSD square root (eigenvalues clipped at zero)."""
    sym = 0.5 * (P + np.conj(np.swapaxes(P, 1, 2)))
    w, V = np.linalg.eigh(sym)
    w = np.sqrt(np.maximum(w, 0.0))
    return np.einsum("qij,qj,qkj->qik", V, w, np.conj(V))


def _bracket_inverse_times(Pt: np.ndarray, C: np.ndarray,
                           B: np.ndarray) -> np.ndarray:
    """(Pt^-1 + C)^-1 @ B without forming Pt^-1.

    Uses the identity (P^-1 + C)^-1 = R (I + R C R)^-1 R with R = P^{1/2},
    which stays exact (zero in the null directions) when Pt is singular
    on part of the grid; direct inversion of a near-singular Pt loses all
    precision in the finite directions.
    """
    R = _psd_sqrt(Pt)
    m = Pt.shape[1]
    inner = np.eye(m)[None, :, :] + R @ C @ R
    return R @ np.linalg.solve(inner, R @ B)


def wiener_smoother(F, P_u, G, sigma: float,
                    N: int | None = None) -> SpectrumGrid:
    """Non-causal linear MMSE postfilter H = F P_u G* (G P_u G* + s^2 I)^-1."""
    if N is None:
        N = P_u.n_grid if isinstance(P_u, SpectrumGrid) else DEFAULT_GRID
    Pg = as_grid(P_u, N)
    m = Pg.shape[1]
    Fg = as_grid(F, N)
    Gg = as_grid(G, N, square_side=m)
    Pyv = Fg @ Pg @ np.conj(np.swapaxes(Gg, 1, 2))
    Pv = Gg @ Pg @ np.conj(np.swapaxes(Gg, 1, 2)) \
        + sigma ** 2 * np.eye(m)[None, :, :]
    if sigma == 0.0:
        eig = np.linalg.eigvalsh(0.5 * (Pv + np.conj(np.swapaxes(Pv, 1, 2))))
        if np.min(eig) <= 1e-13 * max(float(np.max(np.abs(Pv))), 1e-300):
            raise NotPositiveDefinite(
                "noise-free observation spectrum is singular on the grid")
    try:
        H = np.conj(np.swapaxes(
            np.linalg.solve(Pv, np.conj(np.swapaxes(Pyv, 1, 2))), 1, 2))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"observation spectrum singular on the grid: {exc}") from exc
    return SpectrumGrid(H)


def lms_objective(F, P_u, k, privacy: PrivacySpec, profile,
                  N: int | None = None) -> float:
    """Smoother-postfilter MSE for a feasible allocation profile."""
    x = profile.x if isinstance(profile, AllocationProfile) \
        else np.asarray(profile, dtype=float)
    if N is None:
        N = x.shape[0] - 1
    k = np.atleast_1d(np.asarray(k, dtype=float))
    kap = kappa(privacy)
    Pg = as_grid(P_u, N)
    Fg = as_grid(F, N)
    Ft, Pt = _tilde(Fg, Pg, k, kap)
    m = x.shape[1]
    X = np.zeros((x.shape[0], m, m))
    idx = np.arange(m)
    X[:, idx, idx] = x
    Y = _bracket_inverse_times(Pt, X, np.conj(np.swapaxes(Ft, 1, 2)))
    integrand = np.einsum("qij,qji->q", Ft, Y).real
    return float(trapezoid_mean(integrand))


def _column_tilde_sq(Fg: np.ndarray, k: np.ndarray, kap: float) -> np.ndarray:
    """|Ft_i(omega)|_2^2 per column, shape (N+1, m)."""
    return (kap ** 2) * (np.linalg.norm(Fg, axis=1) ** 2) * (k ** 2)[None, :]


def waterfill_diagonal(F, P_u, k, privacy: PrivacySpec,
                       N: int | None = None) -> AllocationProfile:
    """Closed-form allocation for uncorrelated (diagonal-spectrum) inputs.

    x_i(omega) = max(0, |Ft_i(omega)|_2 / sqrt(lam) - 1/pt_i(omega)), with
    the multiplier lam bisected until the profile integrates to one.
    """
    if N is None:
        N = P_u.n_grid if isinstance(P_u, SpectrumGrid) else DEFAULT_GRID
    Pg = as_grid(P_u, N)
    m = Pg.shape[1]
    off = Pg.copy()
    idx = np.arange(m)
    off[:, idx, idx] = 0.0
    if np.max(np.abs(off)) > 1e-10 * max(float(np.max(np.abs(Pg))), 1e-300):
        raise NotDiagonal("waterfilling requires a diagonal input spectrum")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    kap = kappa(privacy)
    Fg = as_grid(F, N)
    Ft_sq = _column_tilde_sq(Fg, k, kap)
    if float(Ft_sq.max(initial=0.0)) <= 0.0:
        raise DegenerateObjective("target filter is identically zero")
    p_diag = np.real(Pg[:, idx, idx])
    if np.any(p_diag <= 0):
        raise NotPositiveDefinite("input spectrum must be positive")
    pt = p_diag / (kap ** 2 * (k ** 2)[None, :])
    amp = np.sqrt(Ft_sq)

    def level(lam: float) -> np.ndarray:
        return np.maximum(0.0, amp / np.sqrt(lam) - 1.0 / pt)

    lo = hi = 1.0
    while trapezoid_mean(level(hi).sum(axis=1)) > 1.0:
        hi *= 4.0
    while trapezoid_mean(level(lo).sum(axis=1)) < 1.0:
        lo /= 4.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if trapezoid_mean(level(mid).sum(axis=1)) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    lam = 0.5 * (lo + hi)
    x = level(lam)
    x /= trapezoid_mean(x.sum(axis=1))
    prof = AllocationProfile(x=x, lam=float(lam))
    prof.objective = lms_objective(F, P_u, k, privacy, prof, N)
    return prof


def _project_profile(y: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(weights * x) = 1}."""
    a = weights.ravel()
    yf = y.ravel()

    def excess(mu: float) -> float:
        return float(a @ np.maximum(0.0, yf - mu * a) - 1.0)

    lo, hi = -1.0, 1.0
    while excess(lo) < 0.0:
        lo *= 4.0
    while excess(hi) > 0.0:
        hi *= 4.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    mu = 0.5 * (lo + hi)
    return np.maximum(0.0, yf - mu * a).reshape(y.shape)


def optimize_prefilter_general(F, P_u, k, privacy: PrivacySpec,
                               N: int | None = None, tol: float = 1e-12,
                               max_iter: int = 2000) -> AllocationProfile:
    """Minimize the smoother MSE over feasible diagonal allocations.

    Projected gradient with Armijo backtracking on the discretized convex
    objective; the closed-form gradient is the negated diagonal of
    (Pt^-1 + X)^-1 Ft* Ft (Pt^-1 + X)^-1 weighted by the trapezoid rule.
    """
    if N is None:
        N = P_u.n_grid if isinstance(P_u, SpectrumGrid) else DEFAULT_GRID
    Pg = as_grid(P_u, N)
    m = Pg.shape[1]
    k = np.atleast_1d(np.asarray(k, dtype=float))
    kap = kappa(privacy)
    Fg = as_grid(F, N)
    Ft, Pt = _tilde(Fg, Pg, k, kap)
    if float(np.max(np.abs(Ft))) <= 0.0:
        raise DegenerateObjective("target filter is identically zero")
    R = _psd_sqrt(Pt)
    eye = np.eye(m)[None, :, :]
    idx = np.arange(m)
    w_q = np.ones(N + 1)
    w_q[0] = w_q[-1] = 0.5
    w_q /= N
    weights = np.repeat(w_q[:, None], m, axis=1)
    RFtH = R @ np.conj(np.swapaxes(Ft, 1, 2))

    def value_grad(x: np.ndarray):
        RXR = (R * x[:, None, :]) @ R       # R diag(x) R
        Y = R @ np.linalg.solve(eye + RXR, RFtH)        # (N+1, m, p)
        val = float(np.einsum("qij,qji->", Ft * w_q[:, None, None], Y).real)
        grad = -w_q[:, None] * np.einsum("qir,qir->qi",
                                         np.conj(Y), Y).real
        return val, grad

    # warm start from waterfilling on the diagonal part of the spectrum
    p_diag = np.maximum(np.real(Pg[:, idx, idx]), 1e-300)
    pt = p_diag / (kap ** 2 * (k ** 2)[None, :])
    amp = np.sqrt(_column_tilde_sq(Fg, k, kap))

    def wf_level(lam):
        return np.maximum(0.0, amp / np.sqrt(lam) - 1.0 / pt)

    lo, hi = 1.0, 1.0
    while trapezoid_mean(wf_level(hi).sum(axis=1)) > 1.0:
        hi *= 4.0
    while trapezoid_mean(wf_level(lo).sum(axis=1)) < 1.0:
        lo /= 4.0
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if trapezoid_mean(wf_level(mid).sum(axis=1)) > 1.0:
            lo = mid
        else:
            hi = mid
    x = wf_level(0.5 * (lo + hi))
    x = _project_profile(x, weights)

    val, grad = value_grad(x)
    step = 1.0 / max(float(np.max(np.abs(grad))) * N, 1e-12)
    stall = 0
    rel_impr = np.inf
    for _ in range(max_iter):
        accepted = False
        for _ in range(60):
            xn = _project_profile(x - step * grad, weights)
            vn, gn = value_grad(xn)
            d = xn - x
            if vn <= val + float((grad * d).sum()) \
                    + 0.5 / step * float((d * d).sum()) + 1e-15:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        rel_impr = (val - vn) / max(abs(val), 1e-300)
        x, val, grad = xn, vn, gn
        step *= 1.3
        if rel_impr < tol:
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
    else:
        if rel_impr > 1e-7:
            best = AllocationProfile(x=x, objective=val)
            raise OptimizerStalled(
                f"projected gradient stalled at objective {val}", best)
    prof = AllocationProfile(x=x, objective=val)
    return prof


@dataclass
class SmootherFilter:
    """Two-sided FIR realization of a Wiener smoother grid."""

    taps: np.ndarray            # (2K+1, p, m), lag range [-K, K]
    half: int                   # K

    @classmethod
    def from_grid(cls, H: SpectrumGrid, tail_tol: float = 1e-10
                  ) -> "SmootherFilter":
        N = H.n_grid
        full = np.concatenate([H.samples, np.conj(H.samples[-2:0:-1])],
                              axis=0)
        h = np.fft.ifft(full, axis=0).real      # lags 0..N-1, -N..-1
        mags = np.abs(h).reshape(h.shape[0], -1).max(axis=1)
        peak = max(float(mags.max()), 1e-300)
        K = 1
        for lag in range(1, N):
            if mags[lag] > tail_tol * peak or mags[2 * N - lag] > tail_tol * peak:
                K = lag
        taps = np.concatenate([h[-K:], h[: K + 1]], axis=0)
        return cls(taps=taps, half=K)

    def apply(self, v: np.ndarray) -> np.ndarray:
        T, m = v.shape
        p = self.taps.shape[1]
        y = np.zeros((T, p))
        for i in range(p):
            for j in range(m):
                full = ssig.fftconvolve(v[:, j], self.taps[:, i, j])
                y[:, i] += full[self.half: self.half + T]
        return y

    def grid(self, N: int) -> np.ndarray:
        lags = np.arange(-self.half, self.half + 1)
        z = np.exp(-1j * np.outer(grid_omega(N), lags))
        return np.einsum("ql,lij->qij", z, self.taps)


def monic_inverse_filter(coeffs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve L e = v recursively for a monic FIR matrix polynomial L.

    One sliding-window contraction per step; the recursion itself is
    inherently sequential.
    """
    T, m = v.shape
    K = coeffs.shape[0] - 1
    e = np.zeros((T, m))
    if K == 0:
        e[:] = v
        return e
    rev = coeffs[1:][::-1]          # rev[j] = L_{K-j}, oldest lag first
    for t in range(T):
        lo = max(t - K, 0)
        window = e[lo:t]
        if window.shape[0]:
            e[t] = v[t] - np.einsum("kij,kj->i",
                                    rev[K - window.shape[0]:], window)
        else:
            e[t] = v[t]
    return e


@dataclass
class CausalWienerFilter:
    """Causal Wiener postfilter [P_yv L^-*]_+ Pe^-1 L^-1 in operational form.

    l_coeffs holds the monic canonical factor of the observation spectrum,
    mc the causal part of the whitened cross filter.
    """

    l_coeffs: np.ndarray        # (KL+1, m, m), l_coeffs[0] = I
    pe: np.ndarray              # (m, m)
    mc: np.ndarray              # (Tc, p, m) causal taps
    anticausal_tail: float = 0.0

    def apply(self, v: np.ndarray) -> np.ndarray:
        T, m = v.shape
        e = monic_inverse_filter(self.l_coeffs, v)
        d = e @ np.linalg.inv(self.pe).T
        p = self.mc.shape[1]
        y = np.zeros((T, p))
        for i in range(p):
            for j in range(m):
                full = ssig.fftconvolve(d[:, j], self.mc[:, i, j])
                y[:, i] += full[:T]
        return y

    def grid(self, N: int) -> np.ndarray:
        omega = grid_omega(N)
        zl = np.exp(-1j * np.outer(omega, np.arange(self.l_coeffs.shape[0])))
        Lg = np.einsum("qk,kij->qij", zl, self.l_coeffs)
        zm = np.exp(-1j * np.outer(omega, np.arange(self.mc.shape[0])))
        Mg = np.einsum("qk,kij->qij", zm, self.mc)
        pe_inv = np.linalg.inv(self.pe)
        return Mg @ pe_inv[None, :, :] @ np.linalg.inv(Lg)


def causal_wiener(F, P_u, G, sigma: float,
                  N: int | None = None) -> CausalWienerFilter:
    """Causal Wiener postfilter via canonical factorization of P_v."""
    if N is None:
        N = P_u.n_grid if isinstance(P_u, SpectrumGrid) else DEFAULT_GRID
    Pg = as_grid(P_u, N)
    m = Pg.shape[1]
    Fg = as_grid(F, N)
    Gg = as_grid(G, N, square_side=m)
    GgH = np.conj(np.swapaxes(Gg, 1, 2))
    Pv = Gg @ Pg @ GgH + sigma ** 2 * np.eye(m)[None, :, :]
    fact = matrix_canonical_factor(SpectrumGrid(Pv))
    Lg = fact.eval_grid(grid_omega(N))
    Pyv = Fg @ Pg @ GgH
    # M(z) = P_yv(z) L(z^-1)^-T; on the circle L(z^-1)^T is L(omega)^H
    Mg = np.conj(np.swapaxes(
        np.linalg.solve(Lg, np.conj(np.swapaxes(Pyv, 1, 2))), 1, 2))
    full = np.concatenate([Mg, np.conj(Mg[-2:0:-1])], axis=0)
    h = np.fft.ifft(full, axis=0).real
    causal = h[:N]
    anti = h[N:]
    peak = max(float(np.max(np.abs(h))), 1e-300)
    tail = float(np.max(np.abs(anti)) / peak) if anti.size else 0.0
    mags = np.abs(causal).reshape(causal.shape[0], -1).max(axis=1)
    keep = np.nonzero(mags > 1e-12 * peak)[0]
    stop = int(keep[-1]) + 1 if keep.size else 1
    return CausalWienerFilter(l_coeffs=fact.coeffs, pe=fact.pe,
                              mc=causal[:stop], anticausal_tail=tail)


def postfilter_mse(F, P_u, G, sigma: float, H_grid,
                   N: int | None = None) -> float:
    """MSE of an arbitrary postfilter grid against the desired output."""
    if N is None:
        N = P_u.n_grid if isinstance(P_u, SpectrumGrid) else DEFAULT_GRID
    Pg = as_grid(P_u, N)
    m = Pg.shape[1]
    Fg = as_grid(F, N)
    Gg = as_grid(G, N, square_side=m)
    Hg = as_grid(H_grid, N)
    GgH = np.conj(np.swapaxes(Gg, 1, 2))
    HgH = np.conj(np.swapaxes(Hg, 1, 2))
    FgH = np.conj(np.swapaxes(Fg, 1, 2))
    Pv = Gg @ Pg @ GgH + sigma ** 2 * np.eye(m)[None, :, :]
    Pyv = Fg @ Pg @ GgH
    integrand = (np.einsum("qij,qji->q", Fg @ Pg, FgH)
                 - np.einsum("qij,qji->q", Hg, np.conj(np.swapaxes(Pyv, 1, 2)))
                 - np.einsum("qij,qji->q", Pyv, HgH)
                 + np.einsum("qij,qji->q", Hg @ Pv, HgH)).real
    return float(max(trapezoid_mean(integrand), 0.0))


def assemble_lms(F: TransferMatrix, P_u: SpectrumGrid, privacy: PrivacySpec,
                 mode: str = "smoother", N: int | None = None,
                 order: int = DEFAULT_FACTOR_ORDER,
                 input_mean=None) -> MechanismDesign:
    """Design the LMS mechanism: optimize the allocation profile, realize
    the prefilter by scalar factorization, recalibrate noise from the
    realized filter, and attach the smoother or causal postfilter.

    The reported theory_mse (smoother mode) evaluates the objective at
    the profile actually achieved by the FIR prefilter, so Monte Carlo
    estimates are directly comparable.
    """
    if mode not in ("smoother", "causal"):
        raise ConfigError(f"unknown LMS mode: {mode}")
    if N is None:
        N = P_u.n_grid
    if P_u.n_grid != N:
        raise ConfigError("input spectrum grid does not match design grid")
    k = privacy.k_vector()
    if k.size != F.shape[1]:
        raise DimensionMismatch("privacy k length must match F inputs")
    kap = kappa(privacy)
    profile = optimize_prefilter_general(F, P_u, k, privacy, N)

    entries = []
    fit_errors = []
    for i in range(k.size):
        target = profile.x[:, i] / k[i] ** 2
        if trapezoid_mean(target) < _ZERO_CHANNEL_TOL:
            entries.append(RationalFilter([0.0]))
            fit_errors.append(0.0)
            continue
        g, err = scalar_spectral_factor(target, order, enforce_pw=False)
        entries.append(g)
        fit_errors.append(err)
    G = TransferMatrix.diagonal(entries)

    sens = diagonal_sensitivity(G, k)
    sigma = kap * sens
    omega = grid_omega(N)
    gmag2 = np.stack([np.abs(g.freq(omega)) ** 2
                      for g in G.diagonal_entries()], axis=1)
    achieved = gmag2 * (k ** 2)[None, :]
    achieved /= trapezoid_mean(achieved.sum(axis=1))
    achieved_profile = AllocationProfile(x=achieved)
    achieved_profile.objective = lms_objective(
        F, P_u, k, privacy, achieved_profile, N)

    info = {
        "grid_n": N,
        "optimal_objective": profile.objective,
        "achieved_objective": achieved_profile.objective,
        "prefilter_fit_errors": fit_errors,
        "sensitivity": sens,
        "factor_order": order,
    }
    Fg = freq_response(F, N)
    if mode == "smoother":
        H = wiener_smoother(Fg, P_u, G, sigma, N)
        postfilter = SmootherFilter.from_grid(H)
        theory = achieved_profile.objective
    else:
        postfilter = causal_wiener(Fg, P_u, G, sigma, N)
        info["smoother_mse"] = achieved_profile.objective
        info["causal_mse_quadrature"] = postfilter_mse(
            Fg, P_u, G, sigma, postfilter.grid(N), N)
        info["anticausal_tail"] = postfilter.anticausal_tail
        theory = None
    design = MechanismDesign(
        kind="wiener_smoother" if mode == "smoother" else "wiener_causal",
        target=F, prefilter=G, noise_sigma=float(sigma), privacy=privacy,
        postfilter=postfilter, theory_mse=theory,
        input_mean=None if input_mean is None
        else np.asarray(input_mean, dtype=float),
        info=info)
    design.info["profile"] = achieved_profile
    design.info["optimal_profile"] = profile
    return design
