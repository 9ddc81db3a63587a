"""Spectral factorization kernels.

Scalar targets are factored by the cepstral (Kolmogorov) construction:
FFT of the log spectrum, causal folding of the cepstrum, exponentiation.
Matrix spectra use Bauer's method, reading the factor off the bottom
block row of a Cholesky of the truncated block-Toeplitz covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import (FactorizationStalled, FitFailed, NotFactorizable,
                     NotPositiveDefinite)
from .lti import (STABILITY_TOL, RationalFilter, SpectrumGrid, TransferMatrix,
                  grid_omega)

LOG_FLOOR_FRAC = 1e-12


def _two_sided(values: np.ndarray) -> np.ndarray:
    """Extend samples on [0, pi] to the full circle by conjugate symmetry."""
    if values.ndim == 1:
        return np.concatenate([values, values[-2:0:-1].conj()])
    return np.concatenate([values, np.conj(values[-2:0:-1])], axis=0)


def paley_wiener_check(s, floor_frac: float = LOG_FLOOR_FRAC,
                       max_zero_frac: float = 0.01) -> bool:
    """Operational log-integrability test on the grid.

    Fails when the spectrum is identically zero or vanishes (below the
    relative floor) on more than max_zero_frac of the grid.
    """
    s = np.asarray(s, dtype=float)
    peak = float(s.max(initial=0.0))
    if peak <= 0.0 or not np.all(np.isfinite(s)):
        return False
    floor = floor_frac * peak
    frac_below = float(np.mean(s < floor))
    if frac_below >= max_zero_frac:
        return False
    return bool(np.isfinite(np.sum(np.log(np.maximum(s, floor)))))


def _cepstral_impulse(s: np.ndarray, floor_frac: float) -> np.ndarray:
    """Full-length minimum-phase impulse response with |g|^2 = s on the grid."""
    floor = floor_frac * float(s.max())
    logs = np.log(np.maximum(s, floor))
    full = _two_sided(logs).real
    L = full.size
    cep = np.fft.ifft(full / 2.0).real
    fold = np.zeros(L)
    fold[0] = 1.0
    fold[1: L // 2] = 2.0
    fold[L // 2] = 1.0
    gw = np.exp(np.fft.fft(cep * fold))
    return np.fft.ifft(gw).real


def _project_min_phase(h: np.ndarray) -> np.ndarray:
    """Reflect unit-circle-or-outside zeros inside, preserving magnitude."""
    lead = np.nonzero(h)[0]
    if lead.size == 0 or h.size - lead[0] <= 1:
        return h
    prefix, core = h[: lead[0]], h[lead[0]:]
    roots = np.roots(core)
    bad = np.abs(roots) >= 1.0 - STABILITY_TOL
    if not np.any(bad):
        return h
    gain = core[0]
    fixed = roots.copy()
    for idx in np.nonzero(bad)[0]:
        r = roots[idx]
        mag = abs(r)
        if mag >= 1.0:
            fixed[idx] = 1.0 / np.conj(r)
            gain *= mag
        else:
            fixed[idx] = r * (1.0 - 2 * STABILITY_TOL) / mag
    poly = gain * np.poly(fixed)
    out = np.concatenate([prefix, poly.real])
    return out


def factor_grid_error(s, filt: RationalFilter) -> float:
    """Relative L-infinity error of |filt|^2 against the target grid."""
    s = np.asarray(s, dtype=float)
    N = s.size - 1
    mag2 = np.abs(filt.freq(grid_omega(N))) ** 2
    return float(np.max(np.abs(mag2 - s)) / max(s.max(), 1e-300))


def scalar_spectral_factor(s, order: int, *, enforce_pw: bool = True,
                           floor_frac: float = LOG_FLOOR_FRAC
                           ) -> tuple[RationalFilter, float]:
    """Minimum-phase FIR factor g of a nonnegative grid spectrum.

    Returns (g, relative L-infinity grid error of |g|^2 vs s). The
    impulse response of the exact cepstral factor is truncated to
    order+1 taps; any zeros pushed onto or outside the circle by the
    truncation are reflected back inside.
    """
    s = np.asarray(s, dtype=float)
    if order < 1:
        raise ValueError("order must be at least 1")
    if np.any(s < 0):
        raise NotFactorizable("spectrum has negative samples")
    if enforce_pw and not paley_wiener_check(s, floor_frac):
        raise NotFactorizable(
            "spectrum violates the log-integrability condition")
    if float(s.max(initial=0.0)) <= 0.0:
        raise NotFactorizable("spectrum is identically zero")
    h = _cepstral_impulse(s, floor_frac)
    taps = _project_min_phase(h[: order + 1])
    g = RationalFilter(taps)
    return g, factor_grid_error(s, g)


def fit_rational_magnitude(s, order: int) -> tuple[RationalFilter, float]:
    """All-pole (Yule-Walker) fit of a strictly positive grid spectrum.

    Solves the Toeplitz normal equations on the autocovariances of s and
    returns (filter, relative L2 residual of the magnitude-squared fit).
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise FitFailed("spectrum must be strictly positive for the fit")
    r = np.fft.ifft(_two_sided(s)).real
    if order >= s.size:
        raise FitFailed("fit order too large for the grid")
    try:
        a = sla.solve_toeplitz((r[:order], r[:order]), -r[1: order + 1])
    except np.linalg.LinAlgError as exc:
        raise FitFailed(f"Yule-Walker system is singular: {exc}") from exc
    den = np.concatenate([[1.0], a])
    var = float(r[0] + r[1: order + 1] @ a)
    if not np.isfinite(var) or var <= 0:
        raise FitFailed(f"nonpositive prediction variance {var}; "
                        "fit is ill conditioned")
    filt = RationalFilter([np.sqrt(var)], den)
    if not filt.is_stable():
        raise FitFailed("fitted poles are not strictly inside the circle")
    mag2 = np.abs(filt.freq(grid_omega(s.size - 1))) ** 2
    residual = float(np.linalg.norm(mag2 - s) / np.linalg.norm(s))
    return filt, residual


@dataclass
class MatrixFactorization:
    """Canonical factor P(z) = L(z) Pe L(z^-1)^T with L causal, L(inf) = I."""

    coeffs: np.ndarray          # (K+1, m, m), coeffs[0] = I
    pe: np.ndarray              # (m, m) symmetric positive definite
    grid_error: float = 0.0
    causally_invertible: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.pe.shape[0]

    def eval_grid(self, omega: np.ndarray) -> np.ndarray:
        K = self.coeffs.shape[0] - 1
        z = np.exp(-1j * np.outer(omega, np.arange(K + 1)))
        return np.einsum("qk,kij->qij", z, self.coeffs)

    def reconstruct(self, omega: np.ndarray) -> np.ndarray:
        Lg = self.eval_grid(omega)
        return np.einsum("qij,jk,qlk->qil", Lg, self.pe, np.conj(Lg))

    def as_transfer_matrix(self) -> TransferMatrix:
        m = self.m
        rows = []
        for i in range(m):
            rows.append([RationalFilter(self.coeffs[:, i, j])
                         for j in range(m)])
        return TransferMatrix(rows)


def _det_winding(Lg: np.ndarray) -> int:
    det = np.linalg.det(Lg)
    det_full = _two_sided(det[:, None, None])[:, 0, 0]
    ang = np.unwrap(np.angle(np.concatenate([det_full, det_full[:1]])))
    return int(np.round((ang[-1] - ang[0]) / (2 * np.pi)))


def _truncate_tail(h: np.ndarray, tol: float) -> np.ndarray:
    mags = np.abs(h).reshape(h.shape[0], -1).max(axis=1)
    peak = mags.max()
    keep = np.nonzero(mags > tol * peak)[0]
    stop = int(keep[-1]) + 1 if keep.size else 1
    return h[:stop]


def _diagonal_factor(P: SpectrumGrid, floor_frac: float
                     ) -> MatrixFactorization:
    """Per-entry cepstral factorization for (block-free) diagonal spectra."""
    m = P.shape[0]
    N = P.n_grid
    diag = np.real(np.stack([P.samples[:, i, i] for i in range(m)], axis=1))
    max_len = 1
    taps = []
    gains = np.zeros(m)
    for i in range(m):
        h = _cepstral_impulse(diag[:, i], floor_frac)
        h = _truncate_tail(h[: N], 1e-12)
        gains[i] = h[0]
        taps.append(h / h[0])
        max_len = max(max_len, h.size)
    coeffs = np.zeros((max_len, m, m))
    for i in range(m):
        coeffs[: taps[i].size, i, i] = taps[i]
    fact = MatrixFactorization(coeffs=coeffs, pe=np.diag(gains ** 2))
    recon = fact.reconstruct(P.omega)
    fact.grid_error = float(np.max(np.abs(recon - P.samples))
                            / max(np.max(np.abs(P.samples)), 1e-300))
    return fact


def matrix_canonical_factor(P: SpectrumGrid, tol: float = 1e-6,
                            tail_tol: float = 1e-10,
                            max_blocks: int = 4096) -> MatrixFactorization:
    """Canonical spectral factorization of a Hermitian PD grid spectrum.

    Diagonal spectra are dispatched to the scalar cepstral kernel; the
    general case runs Bauer's block-Toeplitz Cholesky with the bandwidth
    chosen so the discarded autocovariance tail is below tail_tol.
    """
    samples = P.samples
    m = P.shape[0]
    if P.shape[0] != P.shape[1]:
        raise NotPositiveDefinite("spectrum must be square matrix-valued")
    if P.hermitian_error() > 1e-8 * max(np.max(np.abs(samples)), 1e-300):
        raise NotPositiveDefinite("spectrum samples are not Hermitian")
    scale = float(np.max(np.abs(samples)))
    if P.min_eigenvalue() <= 1e-13 * scale:
        raise NotPositiveDefinite(
            "spectrum has a (numerically) singular sample on the grid")
    off = samples.copy()
    idx = np.arange(m)
    off[:, idx, idx] = 0.0
    if m == 1 or np.max(np.abs(off)) <= 1e-14 * scale:
        return _diagonal_factor(P, LOG_FLOOR_FRAC)

    N = P.n_grid
    R = np.fft.ifft(_two_sided(samples), axis=0).real
    norms = np.linalg.norm(R, axis=(1, 2))
    above = np.nonzero(norms > tail_tol * norms[0])[0]
    band = int(min(above[above < N].max(initial=0) + 1, N))
    n_blocks = min(max(4 * band + 16, 32), max_blocks)
    last_row = None
    while True:
        n = n_blocks
        T = np.zeros((n * m, n * m))
        for d in range(min(band + 1, n)):
            blk = R[d]
            for i in range(d, n):
                T[i * m:(i + 1) * m, (i - d) * m:(i - d + 1) * m] = blk
                if d:
                    T[(i - d) * m:(i - d + 1) * m, i * m:(i + 1) * m] = blk.T
        try:
            Lc = sla.cholesky(T, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise FactorizationStalled(
                f"block-Toeplitz Cholesky failed at {n} blocks: {exc}"
            ) from exc
        depth = min(band + 1, n)
        row = np.stack([Lc[(n - 1) * m: n * m, (n - 1 - k) * m:(n - k) * m]
                        for k in range(depth)])
        prev = np.stack([Lc[(n - 2) * m:(n - 1) * m,
                            (n - 2 - k) * m:(n - 1 - k) * m]
                         for k in range(min(depth, n - 1))])
        drift = float(np.max(np.abs(row[: prev.shape[0]] - prev)))
        W0 = row[0]
        coeffs = np.einsum("kij,jl->kil", row, np.linalg.inv(W0))
        fact = MatrixFactorization(coeffs=_truncate_tail(coeffs, 1e-13),
                                   pe=W0 @ W0.T,
                                   meta={"blocks": n, "bandwidth": band})
        recon = fact.reconstruct(P.omega)
        err = float(np.max(np.abs(recon - samples)) / scale)
        fact.grid_error = err
        if err <= tol and drift <= 10 * tol:
            break
        if n_blocks >= max_blocks:
            raise FactorizationStalled(
                f"Bauer iteration stalled at {n} blocks "
                f"(grid error {err:.2e}, row drift {drift:.2e})")
        n_blocks = min(2 * n_blocks, max_blocks)
    Lg = fact.eval_grid(P.omega)
    fact.causally_invertible = (_det_winding(Lg) == 0 and
                                float(np.min(np.abs(np.linalg.det(Lg)))) > 0)
    return fact


def conjugate_factorization(P: SpectrumGrid, **kwargs
                            ) -> tuple[MatrixFactorization, np.ndarray]:
    """Factor P as S(z^-1)^T T S(z) with S monic causal.

    Obtained from the canonical factorization of the transposed spectrum;
    returns (factorization holding the coefficients of S, T).
    """
    Pt = SpectrumGrid(np.swapaxes(P.samples, 1, 2))
    fact = matrix_canonical_factor(Pt, **kwargs)
    S_coeffs = np.swapaxes(fact.coeffs, 1, 2)
    out = MatrixFactorization(coeffs=S_coeffs, pe=fact.pe,
                              grid_error=fact.grid_error,
                              causally_invertible=fact.causally_invertible,
                              meta=dict(fact.meta))
    return out, fact.pe
