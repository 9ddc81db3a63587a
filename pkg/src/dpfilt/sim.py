"""End-to-end experiment harness: desired filter banks, synthetic input
sources, mechanism runners, empirical MSE estimation and mechanism
comparison reports."""

from __future__ import annotations

import importlib.resources
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .df import run_df_mechanism
from .errors import ConfigError, DimensionMismatch, MissingForecastModel
from .lms import CausalWienerFilter, SmootherFilter
from .lti import (RationalFilter, TransferMatrix, effective_length, simulate)
from .markov import MarkovSource, sample_chain, stationary_mean
from .privacy import PrivacySpec
from .streams import EventStream
from .zfe import MechanismDesign


def _load_data(name: str) -> dict:
    ref = importlib.resources.files("dpfilt").joinpath("data", name)
    return json.loads(ref.read_text())


def moving_average(length: int, delay: int = 1) -> RationalFilter:
    """FIR averaging the previous `length` samples starting at `delay`."""
    taps = np.zeros(delay + length)
    taps[delay:] = 1.0 / length
    return RationalFilter(taps)


def gaussian_fir() -> RationalFilter:
    """Length-20 Gaussian-shaped low-pass with unit DC gain (fixture)."""
    return RationalFilter(_load_data("gaussian_fir.json")["taps"])


def default_forecast_model() -> dict:
    return _load_data("forecast_default.json")


def occupancy_filter_bank(m: int = 15, forecast: dict | None = None
                          ) -> TransferMatrix:
    """The 3-output monitoring bank: a 20-step moving-average row over
    zones 1-5, a Gaussian low-pass row over zones 5-12, and a forecast
    row driven by a shared AR(4) model with inputs at lags 0 and 2.

    The forecast coefficients default to the shipped toolkit-fitted
    values (see data/forecast_default.json); pass a dict with keys
    'a' (4), 'b0' (m) and 'b1' (m) to supply an identified model.
    """
    if m != 15:
        raise ConfigError("the occupancy bank is defined for m = 15 zones")
    if forecast is None:
        forecast = default_forecast_model()
    try:
        a = np.asarray(forecast["a"], dtype=float)
        b0 = np.asarray(forecast["b0"], dtype=float)
        b1 = np.asarray(forecast["b1"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise MissingForecastModel(
            f"forecast model must provide 'a', 'b0', 'b1': {exc}") from exc
    if a.size != 4 or b0.size != m or b1.size != m:
        raise MissingForecastModel(
            f"forecast model sizes must be a:4, b0:{m}, b1:{m}")
    den3 = np.concatenate([[1.0], -a])
    f1 = moving_average(20)
    f2 = gaussian_fir()
    zero = RationalFilter([0.0])
    row1 = [f1 if j < 5 else zero for j in range(m)]
    row2 = [f2 if 4 <= j <= 11 else zero for j in range(m)]
    row3 = [RationalFilter([b0[j], 0.0, b1[j]], den3) for j in range(m)]
    return TransferMatrix([row1, row2, row3])


class StreamSource:
    """Protocol-ish base: a named generator of event streams with an
    optional public mean vector."""

    name = "source"
    mean: np.ndarray | None = None

    def sample(self, T: int, seed: int) -> EventStream:
        raise NotImplementedError


class MarkovStreamSource(StreamSource):
    def __init__(self, src: MarkovSource, name: str = "markov"):
        self.src = src
        self.name = name
        self.mean = stationary_mean(src)

    def sample(self, T: int, seed: int) -> EventStream:
        return sample_chain(self.src, T, seed)


class OccupancySource(StreamSource):
    """Independent Poisson count streams with a daily rate modulation.

    Rates lambda_i(t) = rate_i * (1 + amplitude * sin(2 pi t / period
    + phase_i)); the modulation averages to one so the configured rate
    is the long-run mean.
    """

    def __init__(self, m: int = 15, rates=None, period: int = 480,
                 amplitude: float = 0.6, name: str = "occupancy",
                 phase_seed: int = 7):
        self.m = m
        if rates is None:
            rng = np.random.default_rng(phase_seed)
            rates = rng.uniform(0.4, 2.0, m)
        self.rates = np.atleast_1d(np.asarray(rates, dtype=float))
        if self.rates.size == 1:
            self.rates = np.full(m, float(self.rates[0]))
        if self.rates.size != m:
            raise ConfigError("rates length must match channel count")
        self.period = int(period)
        self.amplitude = float(amplitude)
        if not 0.0 <= self.amplitude < 1.0:
            raise ConfigError("amplitude must lie in [0, 1)")
        rng = np.random.default_rng(phase_seed + 1)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, m)
        self.name = name
        self.mean = self.rates.copy()

    def sample(self, T: int, seed: int) -> EventStream:
        rng = np.random.default_rng(seed)
        t = np.arange(T)[:, None]
        lam = self.rates[None, :] * (
            1.0 + self.amplitude * np.sin(
                2.0 * np.pi * t / self.period + self.phases[None, :]))
        data = rng.poisson(np.maximum(lam, 0.0)).astype(float)
        return EventStream(data, [f"u{i + 1}" for i in range(self.m)],
                           dt_label="3 min")


class FixedStreamSource(StreamSource):
    """Wraps a fixed stream (e.g. loaded from CSV); sampling ignores the
    seed and returns the leading T rows."""

    def __init__(self, stream: EventStream, name: str = "fixed",
                 mean=None):
        self.stream = stream
        self.name = name
        self.mean = None if mean is None else np.asarray(mean, dtype=float)

    def sample(self, T: int, seed: int) -> EventStream:
        if T > self.stream.length:
            raise ConfigError(
                f"fixed stream has {self.stream.length} rows, need {T}")
        return self.stream.with_data(self.stream.data[:T])


def synthetic_occupancy_source(m: int = 15, seed: int = 7, rates=None,
                               period: int = 480, amplitude: float = 0.6
                               ) -> OccupancySource:
    return OccupancySource(m=m, rates=rates, period=period,
                           amplitude=amplitude, phase_seed=seed)


def run_mechanism(design: MechanismDesign, stream: EventStream,
                  seed: int) -> EventStream:
    """Apply a designed mechanism to one input stream."""
    u = stream.data
    m = design.target.shape[1]
    if u.shape[1] != m:
        raise DimensionMismatch(
            f"stream has {u.shape[1]} channels, target expects {m}")
    rng = np.random.default_rng(seed)
    if design.kind == "output_perturbation":
        y = simulate(design.target, u)
        if design.noise_sigma > 0:
            y = y + rng.normal(0.0, design.noise_sigma, size=y.shape)
        return EventStream(y, [f"y{i + 1}" for i in range(y.shape[1])],
                           stream.dt_label)
    if design.kind == "decision_feedback":
        out, _ = run_df_mechanism(design, stream, seed)
        return out
    mu = design.input_mean if design.input_mean is not None \
        else np.zeros(m)
    v = simulate(design.prefilter, u - mu[None, :])
    if design.noise_sigma > 0:
        v = v + rng.normal(0.0, design.noise_sigma, size=v.shape)
    post = design.postfilter
    if design.kind == "zero_forcing":
        y = simulate(post, v)
    elif design.kind == "wiener_smoother":
        assert isinstance(post, SmootherFilter)
        y = post.apply(v)
    elif design.kind == "wiener_causal":
        assert isinstance(post, CausalWienerFilter)
        y = post.apply(v)
    else:
        raise ConfigError(f"unknown mechanism kind: {design.kind}")
    y = y + (design.target.dc_gain() @ mu)[None, :]
    return EventStream(y, [f"y{i + 1}" for i in range(y.shape[1])],
                       stream.dt_label)


def _margins(design: MechanismDesign, T: int) -> tuple[int, int]:
    lead = effective_length(design.target)
    if design.kind in ("zero_forcing", "output_perturbation"):
        lead = max(lead, effective_length(design.postfilter))
        tail = 0
    elif design.kind == "wiener_smoother":
        lead = max(lead, design.postfilter.half)
        tail = design.postfilter.half
    elif design.kind == "wiener_causal":
        lead = max(lead, design.postfilter.mc.shape[0])
        tail = 0
    else:
        lead = max(lead, design.postfilter.h1_taps.shape[0])
        tail = design.lookahead
    # 10x the effective filter memory, capped at a third of the run:
    # near-circle poles make the energy-based length extremely
    # conservative while the residual transient amplitude is negligible
    burn = min(10 * lead, max(T // 3, 1))
    tail = min(max(tail, 1), max(T // 8, 1))
    return burn, tail


def empirical_mse(design: MechanismDesign, source: StreamSource,
                  trials: int, T: int, seed: int) -> tuple[float, float]:
    """Monte Carlo MSE of a mechanism against its target filter.

    Averages |y_t - yhat_t|^2 over time (after burn-in, before the
    smoother margin) and reports (mean, standard error) across trials.
    """
    burn, tail = _margins(design, T)
    if T - burn - tail < 32:
        raise ConfigError(
            f"T={T} leaves no analysis window after burn-in {burn}")
    seeds = np.random.SeedSequence(seed).spawn(trials)
    vals = []
    for i in range(trials):
        child = seeds[i].spawn(2)
        u = source.sample(T, child[0])
        y = simulate(design.target, u.data)
        yhat = run_mechanism(design, u, child[1])
        err = y[burn: T - tail] - yhat.data[burn: T - tail]
        vals.append(float(np.mean(np.sum(err ** 2, axis=1))))
    vals = np.asarray(vals)
    stderr = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return float(vals.mean()), stderr


@dataclass
class ExperimentReport:
    """Comparison of several mechanisms on one target and source."""

    target_shape: tuple
    privacy: dict
    bounds: dict
    mechanisms: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "target_shape": list(self.target_shape),
            "privacy": self.privacy,
            "bounds": self.bounds,
            "mechanisms": self.mechanisms,
            "config": self.config,
        }


def compare_mechanisms(F: TransferMatrix, source: StreamSource,
                       privacy: PrivacySpec, designs: dict,
                       trials: int = 5, T: int = 10000, seed: int = 0,
                       plots_dir=None, timing: bool = False
                       ) -> ExperimentReport:
    """Run every design on the common source and collect theory vs
    Monte Carlo MSE. `designs` maps name -> MechanismDesign; an empty
    dict yields a bounds-only report."""
    from .zfe import zfe_general_lower_bound, zfe_mse_diag_bound
    k = privacy.k_vector()
    report = ExperimentReport(
        target_shape=F.shape, privacy=privacy.to_dict(),
        bounds={
            "zfe_diag_bound": zfe_mse_diag_bound(F, k, privacy),
            "zfe_nuclear_bound": zfe_general_lower_bound(F, k, privacy),
        },
        config={"trials": trials, "steps": T, "seed": seed,
                "source": source.name})
    for idx, (name, design) in enumerate(designs.items()):
        t0 = time.monotonic()
        mean, stderr = empirical_mse(design, source, trials, T,
                                     seed + 1000 * idx)
        elapsed = time.monotonic() - t0
        report.mechanisms[name] = {
            "kind": design.kind,
            "theory_mse": design.theory_mse,
            "empirical_mse": mean,
            "stderr": stderr,
            "noise_sigma": design.noise_sigma,
            "runtime_s": round(elapsed, 3) if timing else None,
        }
        if plots_dir is not None:
            _write_plot_csv(design, source, T, seed, plots_dir, name)
    return report


def _write_plot_csv(design: MechanismDesign, source: StreamSource, T: int,
                    seed: int, plots_dir, name: str) -> None:
    import os
    os.makedirs(plots_dir, exist_ok=True)
    u = source.sample(min(T, 2000), np.random.SeedSequence(seed))
    y = simulate(design.target, u.data)
    yhat = run_mechanism(design, u, seed + 1)
    path = os.path.join(plots_dir, f"{name}_paths.csv")
    p = y.shape[1]
    header = ["t"] + [f"y{i+1}" for i in range(p)] \
        + [f"yhat{i+1}" for i in range(p)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(y.shape[0]):
            row = [str(t)] + [repr(float(v)) for v in y[t]] \
                + [repr(float(v)) for v in yhat.data[t]]
            fh.write(",".join(row) + "\n")
