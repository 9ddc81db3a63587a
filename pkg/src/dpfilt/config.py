"""Config file loading, validation and hashing for the CLI.

Unknown keys are rejected so typos fail loudly; every knob has a
documented default. All randomness downstream flows from the single
top-level seed, expanded per consumer with numpy's SeedSequence.spawn.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .privacy import PrivacySpec

_TOP_KEYS = {"grid_n", "seed", "privacy", "filter", "mechanism", "spectrum",
             "source", "simulate"}
_PRIVACY_KEYS = {"epsilon", "delta", "k"}
_FILTER_KEYS = {"preset", "file", "forecast", "ma_length"}
_MECHANISM_KEYS = {"kind", "factor_order", "lookahead", "decision_domain",
                   "fit_tol"}
_SPECTRUM_KEYS = {"kind", "alpha", "beta", "Pi", "selectors", "lags",
                  "scale", "floor", "mean", "file"}
_SOURCE_KEYS = {"kind", "alpha", "beta", "Pi", "selectors", "csv", "rates",
                "period", "amplitude", "m"}
_SIMULATE_KEYS = {"trials", "steps"}

MECHANISM_KINDS = ("zfe", "lms_smoother", "lms_causal", "df",
                   "output_perturbation")


def _check_keys(block: dict, allowed: set, where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(
            f"unknown {where} keys: {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}")


@dataclass
class Config:
    grid_n: int = 1024
    seed: int = 0
    privacy: dict = field(default_factory=lambda: {
        "epsilon": 1.0, "delta": 0.1, "k": [1.0]})
    filter: dict = field(default_factory=lambda: {"preset": "occupancy_bank"})
    mechanism: dict = field(default_factory=lambda: {"kind": "zfe"})
    spectrum: dict = field(default_factory=lambda: {"kind": "white",
                                                    "scale": 1.0})
    source: dict = field(default_factory=lambda: {"kind": "occupancy"})
    simulate: dict = field(default_factory=lambda: {"trials": 5,
                                                    "steps": 10000})

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        _check_keys(raw, _TOP_KEYS, "config")
        cfg = cls()
        if "grid_n" in raw:
            cfg.grid_n = int(raw["grid_n"])
            if cfg.grid_n < 8:
                raise ConfigError("grid_n must be at least 8")
        if "seed" in raw:
            cfg.seed = int(raw["seed"])
        for name, allowed in (("privacy", _PRIVACY_KEYS),
                              ("filter", _FILTER_KEYS),
                              ("mechanism", _MECHANISM_KEYS),
                              ("spectrum", _SPECTRUM_KEYS),
                              ("source", _SOURCE_KEYS),
                              ("simulate", _SIMULATE_KEYS)):
            if name in raw:
                block = raw[name]
                if not isinstance(block, dict):
                    raise ConfigError(f"{name} block must be a mapping")
                _check_keys(block, allowed, name)
                merged = dict(getattr(cfg, name))
                merged.update(block)
                setattr(cfg, name, merged)
        kind = cfg.mechanism.get("kind", "zfe")
        if kind not in MECHANISM_KINDS:
            raise ConfigError(f"unknown mechanism kind {kind!r}; "
                              f"expected one of {MECHANISM_KINDS}")
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cls.from_dict(raw or {})

    def to_dict(self) -> dict:
        return {
            "grid_n": self.grid_n,
            "seed": self.seed,
            "privacy": self.privacy,
            "filter": self.filter,
            "mechanism": self.mechanism,
            "spectrum": self.spectrum,
            "source": self.source,
            "simulate": self.simulate,
        }

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def privacy_spec(self) -> PrivacySpec:
        block = self.privacy
        missing = _PRIVACY_KEYS - set(block)
        if missing:
            raise ConfigError(f"privacy block missing keys {sorted(missing)}")
        return PrivacySpec(epsilon=float(block["epsilon"]),
                           delta=float(block["delta"]),
                           k=tuple(np.atleast_1d(block["k"]).astype(float)))
