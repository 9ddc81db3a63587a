import numpy as np
import pytest

from dpfilt import (AllocationProfile, PrivacySpec,
                    RationalFilter, SpectrumGrid, TransferMatrix,
                    assemble_lms, assemble_zfe, causal_wiener, chain_spectrum,
                    demo_filter, design_diag_prefilter, freq_response,
                    grid_omega, kappa, lms_objective,
                    optimize_prefilter_general, postfilter_mse,
                    server_example, simulate, trapezoid_mean,
                    waterfill_diagonal, wiener_smoother)
from dpfilt.errors import DegenerateObjective, NotDiagonal
from dpfilt.sensitivity import diagonal_sensitivity

N = 256
OMEGA = grid_omega(N)


def priv(k, eps=1.0, delta=0.1):
    return PrivacySpec(epsilon=eps, delta=delta, k=tuple(np.atleast_1d(k)))


def diag_spectrum(entries):
    m = len(entries)
    P = np.zeros((len(entries[0]), m, m), dtype=complex)
    for i, e in enumerate(entries):
        P[:, i, i] = e
    return SpectrumGrid(P)


def white_spectrum(m, n=N, scale=1.0):
    return SpectrumGrid(np.repeat((scale * np.eye(m, dtype=complex))[None],
                                  n + 1, axis=0))


def zfe_profile(G, k, n=N):
    """Feasible allocation implied by a diagonal prefilter."""
    x = np.stack([np.abs(g.freq(grid_omega(n))) ** 2
                  for g in G.diagonal_entries()], axis=1) \
        * (np.asarray(k, float) ** 2)[None, :]
    x /= trapezoid_mean(x.sum(axis=1))
    return AllocationProfile(x=x)


class TestWienerSmoother:
    def test_large_noise_kills_gain(self, rng):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5]),
                                     RationalFilter([0.7])])
        H = wiener_smoother(F, white_spectrum(2), TransferMatrix.identity(2),
                            sigma=1e6, N=N)
        assert np.max(np.abs(H.samples)) < 1e-3

    def test_zero_noise_zero_forcing_limit(self, rng):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5]),
                                     RationalFilter([0.7, 0.2])])
        G = TransferMatrix.diagonal([RationalFilter([1.0, 0.3]),
                                     RationalFilter([2.0])])
        H = wiener_smoother(F, white_spectrum(2), G, sigma=1e-8, N=N)
        HG = freq_response(F.cascade_diag_inverse(G), N).samples
        assert np.max(np.abs(H.samples - HG)) < 1e-6

    def test_scalar_white_closed_form(self):
        F = TransferMatrix.diagonal([RationalFilter([1.0, -0.4])])
        sigma = 0.8
        H = wiener_smoother(F, white_spectrum(1), TransferMatrix.identity(1),
                            sigma, N=N)
        want = freq_response(F, N).samples / (1.0 + sigma ** 2)
        assert np.max(np.abs(H.samples - want)) < 1e-12


class TestObjective:
    def test_zfe_limit_large_input_power(self, rng):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5]),
                                     RationalFilter([0.6, -0.2])])
        k = (1.0, 2.0)
        pk = priv(k)
        G = design_diag_prefilter(F, k, N=N, order=48)
        design = assemble_zfe(F, G, pk, N)
        prof = zfe_profile(G, k)
        big = SpectrumGrid(white_spectrum(2).samples * 1e8)
        val = lms_objective(F, big, k, pk, prof, N)
        assert val == pytest.approx(design.theory_mse, rel=0.01)

    def test_zero_profile_is_output_power(self):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5]),
                                     RationalFilter([0.6])])
        Pu = diag_spectrum([2.0 + np.cos(OMEGA), 1.5 + np.sin(OMEGA) ** 2])
        k = (1.0, 1.0)
        prof = AllocationProfile(x=np.zeros((N + 1, 2)))
        val = lms_objective(F, Pu, k, priv(k), prof, N)
        Fg = freq_response(F, N).samples
        power = trapezoid_mean(np.einsum(
            "qij,qjl,qil->q", Fg, Pu.samples, np.conj(Fg)).real)
        assert val == pytest.approx(float(power), rel=1e-10)

    def test_quadratic_homogeneity_in_target(self, rng):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5])])
        F2 = TransferMatrix.diagonal([RationalFilter([2.0, 1.0])])
        Pu = diag_spectrum([1.0 + 0.3 * np.cos(OMEGA)])
        prof = AllocationProfile(x=np.ones((N + 1, 1)))
        a = lms_objective(F, Pu, (1.0,), priv((1.0,)), prof, N)
        b = lms_objective(F2, Pu, (1.0,), priv((1.0,)), prof, N)
        assert np.sqrt(b) == pytest.approx(2 * np.sqrt(a), rel=1e-10)


class TestWaterfilling:
    def test_single_channel_constant(self):
        F = TransferMatrix.diagonal([RationalFilter([1.5])])
        Pu = diag_spectrum([np.full(N + 1, 2.0)])
        prof = waterfill_diagonal(F, Pu, (1.0,), priv((1.0,)), N)
        assert np.allclose(prof.x, 1.0, atol=1e-9)
        prof.validate()

    def test_normalization(self, rng):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5]),
                                     RationalFilter([0.4, 0.3])])
        Pu = diag_spectrum([2.0 + np.cos(OMEGA), 1.0 + 0.4 * np.sin(OMEGA)])
        prof = waterfill_diagonal(F, Pu, (1.0, 2.0), priv((1.0, 2.0)), N)
        assert abs(prof.normalization() - 1.0) < 1e-10

    def test_kkt_stationarity(self):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5]),
                                     RationalFilter([0.4, 0.3])])
        Pu = diag_spectrum([2.0 + np.cos(OMEGA), 1.0 + 0.4 * np.sin(OMEGA)])
        k = (1.0, 2.0)
        pk = priv(k)
        prof = waterfill_diagonal(F, Pu, k, pk, N)
        kap = kappa(pk)
        Fg = freq_response(F, N).samples
        Ft2 = kap ** 2 * np.linalg.norm(Fg, axis=1) ** 2 \
            * (np.asarray(k) ** 2)[None, :]
        pt = np.stack([np.real(Pu.samples[:, i, i]) for i in range(2)],
                      axis=1) / (kap ** 2 * (np.asarray(k) ** 2)[None, :])
        mask = prof.x > 1e-10
        resid = np.abs(Ft2[mask] / (1.0 / pt[mask] + prof.x[mask]) ** 2
                       - prof.lam)
        assert np.max(resid) < 1e-6
        # complementary slackness
        slack = prof.x * (Ft2 / (1.0 / pt + prof.x) ** 2 - prof.lam)
        assert np.max(np.abs(slack)) < 1e-6

    def test_zfe_shape_in_high_power_limit(self):
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5]),
                                     RationalFilter([0.4, 0.3])])
        k = (1.0, 2.0)
        Pu = diag_spectrum([np.full(N + 1, 1e8), np.full(N + 1, 1e8)])
        prof = waterfill_diagonal(F, Pu, k, priv(k), N)
        # x_i should be proportional to |Ft_i|_2, the ZFE magnitude rule
        Fg = freq_response(F, N).samples
        shape = np.linalg.norm(Fg, axis=1) * np.asarray(k)[None, :]
        a = prof.x.ravel()
        b = shape.ravel()
        cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        assert cos > 0.999

    def test_non_diagonal_rejected(self):
        P = np.repeat(np.array([[2.0, 0.5], [0.5, 1.0]],
                               dtype=complex)[None], N + 1, axis=0)
        F = TransferMatrix.identity(2)
        with pytest.raises(NotDiagonal):
            waterfill_diagonal(F, SpectrumGrid(P), (1, 1), priv((1, 1)), N)

    def test_zero_target_rejected(self):
        F = TransferMatrix.diagonal([RationalFilter([0.0])])
        Pu = diag_spectrum([np.ones(N + 1)])
        with pytest.raises(DegenerateObjective):
            waterfill_diagonal(F, Pu, (1.0,), priv((1.0,)), N)


class TestGeneralOptimizer:
    def test_matches_waterfilling_on_diagonal(self, rng):
        for trial in range(5):
            d1 = 2.0 + np.cos(OMEGA + trial) + 0.2 * rng.random()
            d2 = 1.0 + 0.5 * np.sin(2 * OMEGA + trial) ** 2
            Pu = diag_spectrum([d1, d2])
            F = TransferMatrix([[RationalFilter(rng.normal(size=3)),
                                 RationalFilter(rng.normal(size=2))],
                                [RationalFilter(rng.normal(size=2)),
                                 RationalFilter(rng.normal(size=3))]])
            k = tuple(rng.uniform(0.5, 2.0, 2))
            pk = priv(k)
            wf = waterfill_diagonal(F, Pu, k, pk, N)
            pg = optimize_prefilter_general(F, Pu, k, pk, N)
            assert pg.objective == pytest.approx(wf.objective, rel=1e-4)

    def test_single_channel_exact(self, rng):
        Pu = diag_spectrum([1.5 + np.cos(OMEGA) ** 2])
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.7, 0.2])])
        pk = priv((1.3,))
        wf = waterfill_diagonal(F, Pu, (1.3,), pk, N)
        pg = optimize_prefilter_general(F, Pu, (1.3,), pk, N)
        assert pg.objective == pytest.approx(wf.objective, rel=1e-6)

    def test_correlated_spectrum_dominates_diag_approx(self):
        src = server_example(0.3, 0.6)
        Pu, _ = chain_spectrum(src, N)
        F = demo_filter()
        k = (1.0, 1.0)
        pk = priv(k)
        pg = optimize_prefilter_general(F, Pu, k, pk, N)
        diag_only = diag_spectrum([np.real(Pu.samples[:, i, i])
                                   for i in range(2)])
        wf = waterfill_diagonal(F, diag_only, k, pk, N)
        # evaluating the diagonal-approximation profile under the true
        # correlated spectrum cannot beat the optimizer
        val_diag_profile = lms_objective(F, Pu, k, pk, wf, N)
        assert pg.objective <= val_diag_profile * (1 + 1e-9)

    def test_profile_feasible(self, rng):
        src = server_example(0.4, 0.5)
        Pu, _ = chain_spectrum(src, N)
        pg = optimize_prefilter_general(demo_filter(), Pu, (1.0, 1.0),
                                        priv((1.0, 1.0)), N)
        pg.validate()


class TestCausalWiener:
    def test_already_causal_no_penalty(self):
        # causal FIR target, white input, identity prefilter: the
        # smoother F/(1+s^2) is itself causal
        F = TransferMatrix.diagonal([RationalFilter([1.0, 0.5, 0.25])])
        sigma = 1.0
        Pu = white_spectrum(1)
        cw = causal_wiener(F, Pu, TransferMatrix.identity(1), sigma, N)
        smoother = wiener_smoother(F, Pu, TransferMatrix.identity(1),
                                   sigma, N)
        mse_c = postfilter_mse(F, Pu, TransferMatrix.identity(1), sigma,
                               cw.grid(N), N)
        mse_s = postfilter_mse(F, Pu, TransferMatrix.identity(1), sigma,
                               smoother, N)
        assert mse_c == pytest.approx(mse_s, rel=1e-6)
        assert cw.anticausal_tail < 1e-10

    def test_pure_predictor_hopeless(self):
        # F = z (one-step prediction of white noise): causal Wiener is 0
        # and the MSE equals the signal power
        Fg = SpectrumGrid(np.exp(1j * OMEGA)[:, None, None])
        Pu = white_spectrum(1)
        sigma = 0.5
        cw = causal_wiener(Fg, Pu, TransferMatrix.identity(1), sigma, N)
        assert np.max(np.abs(cw.grid(N))) < 1e-10
        mse_c = postfilter_mse(Fg, Pu, TransferMatrix.identity(1), sigma,
                               cw.grid(N), N)
        assert mse_c == pytest.approx(1.0, rel=1e-9)

    def test_markov_siso_causal_gap_nonnegative(self):
        src = server_example(0.3, 0.6)
        src_one = type(src)(src.Pi, (1,))
        Pu, _ = chain_spectrum(src_one, N)
        F = TransferMatrix.diagonal([RationalFilter(np.full(6, 1 / 6.0))])
        k = (1.0,)
        pk = priv(k)
        G = TransferMatrix.identity(1)
        sigma = kappa(pk) * diagonal_sensitivity(G, k)
        smoother = wiener_smoother(F, Pu, G, sigma, N)
        cw = causal_wiener(F, Pu, G, sigma, N)
        mse_s = postfilter_mse(F, Pu, G, sigma, smoother, N)
        mse_c = postfilter_mse(F, Pu, G, sigma, cw.grid(N), N)
        assert mse_c >= mse_s - 1e-12


class TestAssemble:
    def setup_method(self):
        self.src = server_example(0.3, 0.6)
        self.Pu, self.mean = chain_spectrum(self.src, N)
        self.F = demo_filter()
        self.k = (1.0, 1.0)
        self.pk = priv(self.k)

    def test_smoother_design_consistent(self):
        d = assemble_lms(self.F, self.Pu, self.pk, mode="smoother", N=N,
                         input_mean=self.mean)
        assert d.kind == "wiener_smoother"
        want_sigma = kappa(self.pk) * diagonal_sensitivity(d.prefilter,
                                                           self.k)
        assert d.noise_sigma == pytest.approx(want_sigma, rel=1e-12)
        assert d.theory_mse == pytest.approx(
            d.info["achieved_objective"], rel=1e-12)
        assert d.info["achieved_objective"] >= \
            d.info["optimal_objective"] - 1e-12

    def test_optimal_leq_zfe_profile_and_zfe_mse(self):
        # MA(8) zeros sit exactly on the N=256 grid and trip the
        # operational log-integrability test, so this comparison uses the
        # MA(6) variant whose zeros fall between grid points
        F6 = demo_filter(6)
        d = assemble_lms(F6, self.Pu, self.pk, mode="smoother", N=N)
        Gz = design_diag_prefilter(F6, self.k, N=N, order=48)
        zfe_design = assemble_zfe(F6, Gz, self.pk, N)
        prof_z = zfe_profile(Gz, self.k)
        val_z = lms_objective(F6, self.Pu, self.k, self.pk, prof_z, N)
        assert d.info["optimal_objective"] <= val_z * (1 + 1e-9)
        assert val_z <= zfe_design.theory_mse * (1 + 1e-9)
        assert d.theory_mse <= zfe_design.theory_mse * (1 + 1e-9)

    def test_zfe_recovered_in_high_power_limit(self):
        F6 = demo_filter(6)
        big = SpectrumGrid(self.Pu.samples * 1e8
                           + 1e2 * np.eye(2)[None, :, :])
        d = assemble_lms(F6, big, self.pk, mode="smoother", N=N)
        Gz = design_diag_prefilter(F6, self.k, N=N)
        zfe_design = assemble_zfe(F6, Gz, self.pk, N)
        ratio = d.theory_mse / zfe_design.theory_mse
        assert 0.99 <= ratio <= 1.0 + 1e-6

    def test_causal_mode(self):
        d = assemble_lms(self.F, self.Pu, self.pk, mode="causal", N=N)
        assert d.kind == "wiener_causal"
        assert d.theory_mse is None
        assert d.info["causal_mse_quadrature"] >= \
            d.info["smoother_mse"] - 1e-12

    def test_determinism(self):
        d1 = assemble_lms(self.F, self.Pu, self.pk, mode="smoother", N=N)
        d2 = assemble_lms(self.F, self.Pu, self.pk, mode="smoother", N=N)
        for g1, g2 in zip(d1.prefilter.diagonal_entries(),
                          d2.prefilter.diagonal_entries()):
            assert np.array_equal(g1.num, g2.num)
        assert d1.noise_sigma == d2.noise_sigma
        assert d1.theory_mse == d2.theory_mse


class TestOrthogonality:
    def test_residual_uncorrelated_with_observation(self):
        src = server_example(0.3, 0.6)
        Pu, mean = chain_spectrum(src, N)
        F = demo_filter()
        pk = priv((1.0, 1.0))
        d = assemble_lms(F, Pu, pk, mode="smoother", N=N, input_mean=mean)
        from dpfilt import sample_chain
        T = 200000
        u = sample_chain(src, T, seed=11)
        rng = np.random.default_rng(12)
        uc = u.data - mean[None, :]
        v = simulate(d.prefilter, uc) \
            + rng.normal(0.0, d.noise_sigma, size=(T, 2))
        yhat = d.postfilter.apply(v)
        y = simulate(F, uc)
        resid = (y - yhat)[500: -500]
        vv = v[500: -500]
        B = 20
        blocks = np.array_split(np.arange(resid.shape[0]), B)
        for lag in range(-10, 11):
            prod = resid[max(lag, 0): resid.shape[0] + min(lag, 0), 0] \
                * vv[max(-lag, 0): vv.shape[0] + min(-lag, 0), 0]
            means = np.array([prod[b[b < prod.shape[0]]].mean()
                              for b in blocks])
            se = means.std(ddof=1) / np.sqrt(B)
            assert abs(prod.mean()) < 3.5 * se + 1e-4


class TestOptimizerErrorPath:
    def test_stall_reported_with_best_iterate(self):
        from dpfilt.errors import OptimizerStalled
        src = server_example(0.3, 0.6)
        Pu, _ = chain_spectrum(src, N)
        pk = priv((1.0, 1.0))
        with pytest.raises(OptimizerStalled) as exc:
            optimize_prefilter_general(demo_filter(6), Pu, (1.0, 1.0), pk, N,
                                       max_iter=0)
        assert exc.value.best_profile is not None
        assert exc.value.best_profile.x.shape == (N + 1, 2)


class TestQuadratureVsSimulation:
    def test_smoother_quadrature_identity(self):
        # two formulas for the same smoother MSE: the profile objective
        # (matrix-inversion-lemma form) and the generic quadratic form
        src = server_example(0.3, 0.6)
        Pu, mean = chain_spectrum(src, N)
        F = demo_filter(6)
        pk = priv((1.0, 1.0))
        d = assemble_lms(F, Pu, pk, mode="smoother", N=N, input_mean=mean)
        H = wiener_smoother(F, Pu, d.prefilter, d.noise_sigma, N)
        quad = postfilter_mse(F, Pu, d.prefilter, d.noise_sigma, H, N)
        assert quad == pytest.approx(d.theory_mse, rel=1e-9)

    def test_causal_empirical_matches_quadrature(self):
        from dpfilt import MarkovStreamSource, empirical_mse
        src = server_example(0.3, 0.6)
        Pu, mean = chain_spectrum(src, N)
        F = demo_filter(6)
        pk = priv((1.0, 1.0))
        d = assemble_lms(F, Pu, pk, mode="causal", N=N, input_mean=mean)
        emp, se = empirical_mse(d, MarkovStreamSource(src), trials=16,
                                T=24000, seed=31)
        assert emp == pytest.approx(d.info["causal_mse_quadrature"],
                                    abs=3 * se)
        assert d.info["causal_mse_quadrature"] >= \
            d.info["smoother_mse"] - 1e-12
