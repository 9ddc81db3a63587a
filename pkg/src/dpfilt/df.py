"""Decision-feedback mechanisms: forward/feedback filter synthesis under
the correct-past-decisions assumption, the monic-feedback optimum
B = S^-1 Q^-1, the closed-form assumed-correct MSE kappa^2 Tr(T R),
a nonlinear decision device, and the closed-loop simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as ssig

from .errors import ConfigError, DimensionMismatch, UnstableInverse
from .lms import _bracket_inverse_times, as_grid
from .lti import (SpectrumGrid, TransferMatrix, grid_omega,
                  simulate as lti_simulate, trapezoid_mean)
from .privacy import PrivacySpec, kappa
from .spectral import (MatrixFactorization, conjugate_factorization,
                       matrix_canonical_factor)
from .streams import EventStream
from .zfe import MechanismDesign

DECISION_DOMAINS = ("nonneg_integers", "sign", "reals")


@dataclass
class MonicFeedback:
    """B = P^-1 for a monic minimum-phase FIR matrix polynomial P.

    Running y = B u means solving P y = u by the monic recursion; the
    strictly causal feedback H2 = B - I never touches the current sample.
    """

    p_coeffs: np.ndarray        # (K+1, m, m), p_coeffs[0] = I

    @property
    def m(self) -> int:
        return self.p_coeffs.shape[1]

    def impulse(self, n: int) -> np.ndarray:
        m = self.m
        out = np.zeros((n, m, m))
        K = self.p_coeffs.shape[0] - 1
        rev = self.p_coeffs[1:][::-1] if K else np.zeros((0, m, m))
        for t in range(n):
            acc = np.eye(m) if t == 0 else np.zeros((m, m))
            window = out[max(t - K, 0): t]
            if window.shape[0]:
                acc = acc - np.einsum("kij,kjl->il",
                                      rev[K - window.shape[0]:], window)
            out[t] = acc
        return out

    def grid(self, N: int) -> np.ndarray:
        z = np.exp(-1j * np.outer(grid_omega(N),
                                  np.arange(self.p_coeffs.shape[0])))
        Pg = np.einsum("qk,kij->qij", z, self.p_coeffs)
        return np.linalg.inv(Pg)


@dataclass
class DfDesign:
    """Forward filter taps (with lookahead), monic feedback, and the
    factorization artifacts behind the assumed-correct MSE."""

    h1_taps: np.ndarray         # (T1, m, m); tap j acts on v_{t + d - j}
    lookahead: int              # d >= 0
    feedback: MonicFeedback
    Q: MatrixFactorization
    R: np.ndarray
    S: MatrixFactorization
    T: np.ndarray
    theory_mse: float
    decision_domain: str = "nonneg_integers"
    meta: dict = field(default_factory=dict)


def df_factorizations(F, P_u, G, k, privacy: PrivacySpec,
                      N: int | None = None):
    """Spectral factorization pair behind the DF design.

    K (Pt^-1 + Gt* Gt)^-1 K = Q R Q* and F* F = S* T S, with Q, S monic
    causal and R, T positive definite.
    """
    if N is None:
        N = P_u.n_grid if isinstance(P_u, SpectrumGrid) else 1024
    Pg = as_grid(P_u, N)
    m = Pg.shape[1]
    k = np.atleast_1d(np.asarray(k, dtype=float))
    kap = kappa(privacy)
    Fg = as_grid(F, N)
    Gg = as_grid(G, N, square_side=m)
    Km = np.diag(k)
    gk_sq = trapezoid_mean(
        np.einsum("qij,qij->q", np.conj(Gg @ Km), Gg @ Km).real)
    Gt = (Gg @ Km) / np.sqrt(gk_sq)
    Pt = Pg * (np.outer(1.0 / k, 1.0 / k) / kap ** 2)[None, :, :]
    eye = np.eye(m)[None, :, :].astype(complex)
    bracket = _bracket_inverse_times(
        Pt, np.conj(np.swapaxes(Gt, 1, 2)) @ Gt, eye)
    spec_g = Km[None, :, :] @ bracket @ Km[None, :, :]
    Qf = matrix_canonical_factor(SpectrumGrid(spec_g))
    FHF = np.conj(np.swapaxes(Fg, 1, 2)) @ Fg
    Sf, T = conjugate_factorization(SpectrumGrid(FHF))
    return Qf, Qf.pe, Sf, T


def optimal_feedback(Q: MatrixFactorization,
                     S: MatrixFactorization) -> MonicFeedback:
    """Monic feedback-defining filter B = S^-1 Q^-1 = (Q S)^-1."""
    if not (Q.causally_invertible and S.causally_invertible):
        raise UnstableInverse("Q and S must be causally invertible")
    qc, sc = Q.coeffs, S.coeffs
    K = qc.shape[0] + sc.shape[0] - 2
    m = qc.shape[1]
    prod = np.zeros((K + 1, m, m))
    for a in range(qc.shape[0]):
        for b in range(sc.shape[0]):
            prod[a + b] += qc[a] @ sc[b]
    if np.max(np.abs(prod[0] - np.eye(m))) > 1e-8:
        raise UnstableInverse("product Q S is not monic")
    prod[0] = np.eye(m)
    return MonicFeedback(p_coeffs=prod)


def df_theory_mse(T: np.ndarray, R: np.ndarray,
                  privacy: PrivacySpec) -> float:
    """Assumed-correct-decision MSE kappa^2 Tr(T R)."""
    return float(kappa(privacy) ** 2 * np.trace(np.asarray(T) @ np.asarray(R)))


def decision_device(x, domain: str):
    """Map raw estimates onto the admissible input domain."""
    x = np.asarray(x, dtype=float)
    if domain == "nonneg_integers":
        return np.maximum(np.rint(x), 0.0)
    if domain == "sign":
        return np.where(x >= 0.0, 1.0, -1.0)
    if domain == "reals":
        return x
    raise ConfigError(f"unknown decision domain: {domain};"
                      f" expected one of {DECISION_DOMAINS}")


def design_df(F: TransferMatrix, P_u: SpectrumGrid, privacy: PrivacySpec,
              G: TransferMatrix, sigma: float, lookahead: int = 2,
              decision_domain: str = "nonneg_integers",
              N: int | None = None, input_mean=None) -> MechanismDesign:
    """Assemble a DF mechanism around an existing (LMS-designed) prefilter.

    The forward filter is the Wiener smoother for B u truncated to
    lookahead d; theory_mse reports the assumed-correct-decision value.
    """
    if decision_domain not in DECISION_DOMAINS:
        raise ConfigError(f"unknown decision domain: {decision_domain}")
    if lookahead < 0:
        raise ConfigError("lookahead must be nonnegative")
    if N is None:
        N = P_u.n_grid
    k = privacy.k_vector()
    if k.size != F.shape[1]:
        raise DimensionMismatch("privacy k length must match F inputs")
    Qf, R, Sf, T = df_factorizations(F, P_u, G, k, privacy, N)
    fb = optimal_feedback(Qf, Sf)
    theory = df_theory_mse(T, R, privacy)

    Pg = P_u.samples
    m = Pg.shape[1]
    Gg = as_grid(G, N, square_side=m)
    GgH = np.conj(np.swapaxes(Gg, 1, 2))
    Bg = fb.grid(N)
    Pv = Gg @ Pg @ GgH + sigma ** 2 * np.eye(m)[None, :, :]
    H1g = np.conj(np.swapaxes(
        np.linalg.solve(np.conj(np.swapaxes(Pv, 1, 2)),
                        np.conj(np.swapaxes(Bg @ Pg @ GgH, 1, 2))), 1, 2))
    full = np.concatenate([H1g, np.conj(H1g[-2:0:-1])], axis=0)
    h = np.fft.ifft(full, axis=0).real
    causal = h[:N]
    anti = h[N:][::-1]           # lags -1, -2, ...
    d = int(lookahead)
    taps = np.concatenate([anti[:d][::-1], causal], axis=0)
    mags = np.abs(taps).reshape(taps.shape[0], -1).max(axis=1)
    peak = max(float(mags.max()), 1e-300)
    keep = np.nonzero(mags > 1e-12 * peak)[0]
    taps = taps[: (int(keep[-1]) + 1 if keep.size else 1)]
    dropped = float(np.max(np.abs(anti[d:])) / peak) if anti.shape[0] > d \
        else 0.0

    design_obj = DfDesign(
        h1_taps=taps, lookahead=d, feedback=fb, Q=Qf, R=R, S=Sf, T=T,
        theory_mse=theory, decision_domain=decision_domain,
        meta={"dropped_anticausal": dropped,
              "q_grid_error": Qf.grid_error, "s_grid_error": Sf.grid_error})
    return MechanismDesign(
        kind="decision_feedback", target=F, prefilter=G,
        noise_sigma=float(sigma), privacy=privacy, postfilter=design_obj,
        theory_mse=theory, lookahead=d,
        input_mean=None if input_mean is None
        else np.asarray(input_mean, dtype=float),
        info={"grid_n": N, "decision_domain": decision_domain,
              "assumed_correct_mse": theory})


def run_df_mechanism(design: MechanismDesign, stream, seed: int,
                     lookahead: int | None = None,
                     oracle_feedback: bool = False):
    """Closed-loop DF simulation with actual (possibly erroneous)
    decisions fed back.

    Returns (stream of estimates of y_t aligned at index t, diagnostics
    including the pre-decision input estimates). Publication of the
    estimate of y_t happens d steps later; alignment keeps MSE
    bookkeeping uniform across mechanisms.

    oracle_feedback replaces fed-back decisions by the true inputs,
    reproducing the correct-past-decisions assumption behind the
    closed-form MSE; useful only for validation, never for release.
    """
    df: DfDesign = design.postfilter
    d = design.lookahead if lookahead is None else int(lookahead)
    u = stream.data if hasattr(stream, "data") else np.atleast_2d(stream)
    T, m = u.shape
    if m != design.prefilter.shape[1]:
        raise DimensionMismatch("stream channels do not match the prefilter")
    mu = design.input_mean if design.input_mean is not None else np.zeros(m)
    uc = u - mu[None, :]
    v = lti_simulate(design.prefilter, uc)
    if design.noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        v = v + rng.normal(0.0, design.noise_sigma, size=v.shape)

    # forward filter with lookahead: (H1 v)_t = sum_j taps[j] v_{t+d-j}
    taps = df.h1_taps
    fwd = np.zeros((T, m))
    for i in range(m):
        for j in range(m):
            full = ssig.fftconvolve(v[:, j], taps[:, i, j])
            seg = full[d: d + T]
            fwd[: seg.shape[0], i] += seg

    P = df.feedback.p_coeffs
    K = P.shape[0] - 1
    Prev = P[1:][::-1] if K else np.zeros((0, m, m))
    u_hat = np.zeros((T, m))
    u_tilde = np.zeros((T, m))
    r = np.zeros((T, m))
    for t in range(T):
        window = r[max(t - K, 0): t]
        if window.shape[0]:
            fb_term = np.einsum("kij,kj->i",
                                Prev[K - window.shape[0]:], window)
        else:
            fb_term = np.zeros(m)
        u_tilde[t] = fwd[t] + fb_term
        u_hat[t] = decision_device(u_tilde[t] + mu, df.decision_domain) - mu
        fed_back = uc[t] if oracle_feedback else u_hat[t]
        r[t] = fed_back - fb_term
    mean_shift = design.target.dc_gain() @ mu
    y_hat = lti_simulate(design.target, u_hat) + mean_shift
    label = stream.dt_label if hasattr(stream, "dt_label") else ""
    out = EventStream(y_hat,
                      [f"y{i + 1}" for i in range(y_hat.shape[1])], label)
    diagnostics = {
        "lookahead": d,
        "u_tilde": u_tilde + mu[None, :],
        "u_hat": u_hat + mu[None, :],
        "decision_disagreement": float(np.mean(
            np.any(np.abs(u_hat - u_tilde) > 1e-12, axis=1))),
    }
    return out, diagnostics
