"""File formats: filter definition files, spectrum specs, and
(de)serialization of mechanism designs to JSON documents."""

from __future__ import annotations

import json

import numpy as np
import yaml

from .errors import ConfigError
from .lms import SmootherFilter, causal_wiener, wiener_smoother
from .lti import RationalFilter, SpectrumGrid, TransferMatrix, freq_response
from .markov import MarkovSource, chain_spectrum, server_example
from .privacy import PrivacySpec
from .zfe import MechanismDesign


def transfer_matrix_to_dict(tm: TransferMatrix) -> dict:
    entries = []
    for i in range(tm.p):
        for j in range(tm.m):
            e = tm[i, j]
            if e.is_zero():
                continue
            entries.append({"row": i, "col": j,
                            "num": [float(v) for v in e.num],
                            "den": [float(v) for v in e.den]})
    return {"rows": tm.p, "cols": tm.m, "entries": entries}


def transfer_matrix_from_dict(d: dict) -> TransferMatrix:
    try:
        p, m = int(d["rows"]), int(d["cols"])
        zero = RationalFilter([0.0])
        grid = [[zero for _ in range(m)] for _ in range(p)]
        for e in d["entries"]:
            grid[int(e["row"])][int(e["col"])] = RationalFilter(
                e["num"], e.get("den", [1.0]))
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ConfigError(f"malformed filter definition: {exc}") from exc
    return TransferMatrix(grid)


def load_filter_file(path) -> TransferMatrix:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read filter file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed filter file: {exc}") from exc
    return transfer_matrix_from_dict(raw or {})


def save_filter_file(tm: TransferMatrix, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(transfer_matrix_to_dict(tm), fh, sort_keys=True)


def build_filter(block: dict):
    """Construct the target filter from a config `filter` block."""
    from .markov import demo_filter
    from .sim import occupancy_filter_bank
    if "file" in block and block["file"]:
        return load_filter_file(block["file"])
    preset = block.get("preset", "occupancy_bank")
    if preset == "occupancy_bank":
        return occupancy_filter_bank(forecast=block.get("forecast"))
    if preset == "markov_demo":
        return demo_filter(int(block.get("ma_length", 8)))
    raise ConfigError(f"unknown filter preset {preset!r}")


def spectrum_from_spec(block: dict, N: int, m: int
                       ) -> tuple[SpectrumGrid, np.ndarray]:
    """Build the public input spectrum (and mean) from a config block.

    kinds: 'white' (scale * I), 'markov_server' (alpha/beta example),
    'markov' (explicit Pi + selectors), 'autocovariance' (matrix lags,
    lag 0 first). An optional `floor` adds a white diagonal to keep the
    spectrum positive definite on the grid.
    """
    kind = block.get("kind", "white")
    floor = float(block.get("floor", 0.0))
    declared_mean = block.get("mean")
    if kind == "white":
        scale = float(block.get("scale", 1.0))
        samples = np.repeat((scale * np.eye(m, dtype=complex))[None],
                            N + 1, axis=0)
        mean = np.zeros(m)
    elif kind in ("markov_server", "markov"):
        if kind == "markov_server":
            src = server_example(float(block.get("alpha", 0.3)),
                                 float(block.get("beta", 0.6)))
        else:
            try:
                src = MarkovSource(np.asarray(block["Pi"], dtype=float),
                                   tuple(block["selectors"]))
            except KeyError as exc:
                raise ConfigError(
                    f"markov spectrum needs {exc} in the block") from exc
        grid, mean = chain_spectrum(src, N)
        samples = grid.samples
        if src.n_channels != m:
            raise ConfigError(
                f"spectrum has {src.n_channels} channels, filter expects {m}")
    elif kind == "autocovariance":
        try:
            lags = np.asarray(block["lags"], dtype=float)
        except KeyError as exc:
            raise ConfigError("autocovariance spectrum needs 'lags'") from exc
        if lags.ndim == 1:
            lags = lags[:, None, None]
        if lags.shape[1] != m:
            raise ConfigError("autocovariance dimension mismatch")
        omega = np.arange(N + 1) * np.pi / N
        samples = np.repeat(lags[0][None].astype(complex), N + 1, axis=0)
        for kk in range(1, lags.shape[0]):
            ph = np.exp(-1j * omega * kk)[:, None, None]
            samples = samples + lags[kk][None] * ph \
                + lags[kk].T[None] * np.conj(ph)
        mean = np.zeros(m)
    else:
        raise ConfigError(f"unknown spectrum kind {kind!r}")
    if floor > 0.0:
        samples = samples + floor * np.eye(m)[None, :, :]
    if declared_mean is not None:
        mean = np.atleast_1d(np.asarray(declared_mean, dtype=float))
        if mean.size == 1:
            mean = np.full(m, float(mean[0]))
        if mean.size != m:
            raise ConfigError("spectrum mean length must match channels")
    return SpectrumGrid(samples), np.asarray(mean, dtype=float)


def source_from_spec(block: dict, m: int):
    """Build a stream source from a config `source` block."""
    from .sim import FixedStreamSource, MarkovStreamSource, OccupancySource
    from .streams import EventStream
    kind = block.get("kind", "occupancy")
    if kind == "markov_server":
        src = server_example(float(block.get("alpha", 0.3)),
                             float(block.get("beta", 0.6)))
        out = MarkovStreamSource(src)
    elif kind == "markov":
        src = MarkovSource(np.asarray(block["Pi"], dtype=float),
                           tuple(block["selectors"]))
        out = MarkovStreamSource(src)
    elif kind == "occupancy":
        out = OccupancySource(m=int(block.get("m", m)),
                              rates=block.get("rates"),
                              period=int(block.get("period", 480)),
                              amplitude=float(block.get("amplitude", 0.6)))
    elif kind == "csv":
        try:
            stream = EventStream.load_csv(block["csv"])
        except KeyError as exc:
            raise ConfigError("csv source needs a 'csv' path") from exc
        out = FixedStreamSource(stream, name="csv")
    else:
        raise ConfigError(f"unknown source kind {kind!r}")
    if out.sample(1, 0).n_channels != m:
        raise ConfigError(
            f"source emits {out.sample(1, 0).n_channels} channels, "
            f"filter expects {m}")
    return out


def _mean_to_list(mean):
    return None if mean is None else [float(v) for v in np.atleast_1d(mean)]


def design_to_dict(design: MechanismDesign, config_echo: dict | None = None,
                   config_hash: str | None = None) -> dict:
    from . import __version__
    info = {}
    for key, val in design.info.items():
        if isinstance(val, (int, float, str, bool)) or val is None:
            info[key] = val
        elif isinstance(val, (list, tuple)):
            info[key] = [float(v) for v in val]
    doc = {
        "tool_version": __version__,
        "kind": design.kind,
        "target": transfer_matrix_to_dict(design.target),
        "prefilter": transfer_matrix_to_dict(design.prefilter),
        "noise_sigma": design.noise_sigma,
        "privacy": design.privacy.to_dict(),
        "theory_mse": design.theory_mse,
        "lookahead": design.lookahead,
        "input_mean": _mean_to_list(design.input_mean),
        "info": info,
    }
    if config_echo is not None:
        doc["config"] = config_echo
    if config_hash is not None:
        doc["config_hash"] = config_hash
    return doc


def design_from_dict(doc: dict) -> MechanismDesign:
    """Reconstruct a runnable design from its JSON document.

    Postfilters are re-derived deterministically from the stored
    prefilter, noise scale and spectrum spec (no re-optimization).
    """
    try:
        kind = doc["kind"]
        F = transfer_matrix_from_dict(doc["target"])
        G = transfer_matrix_from_dict(doc["prefilter"])
        sigma = float(doc["noise_sigma"])
        priv = PrivacySpec(**doc["privacy"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed design document: {exc}") from exc
    mean = doc.get("input_mean")
    mean = None if mean is None else np.asarray(mean, dtype=float)
    lookahead = int(doc.get("lookahead", 0))
    info = dict(doc.get("info", {}))
    N = int(info.get("grid_n", 1024))
    design = MechanismDesign(kind=kind, target=F, prefilter=G,
                             noise_sigma=sigma, privacy=priv,
                             theory_mse=doc.get("theory_mse"),
                             input_mean=mean, lookahead=lookahead, info=info)
    if kind in ("zero_forcing",):
        from .errors import UnstableInverse
        for i, gii in enumerate(G.diagonal_entries()):
            if not (gii.is_stable() and gii.is_minimum_phase()):
                raise UnstableInverse(
                    f"stored prefilter entry {i + 1} is not stable "
                    "minimum phase; refusing to invert")
        design.postfilter = F.cascade_diag_inverse(G)
    elif kind == "output_perturbation":
        design.postfilter = TransferMatrix.identity(F.shape[0])
    elif kind in ("wiener_smoother", "wiener_causal", "decision_feedback"):
        spec_block = doc.get("config", {}).get("spectrum")
        if spec_block is None:
            raise ConfigError(
                f"{kind} design needs the spectrum block to rebuild its "
                "postfilter")
        Pu, _ = spectrum_from_spec(spec_block, N, F.shape[1])
        Fg = freq_response(F, N)
        if kind == "wiener_smoother":
            design.postfilter = SmootherFilter.from_grid(
                wiener_smoother(Fg, Pu, G, sigma, N))
        elif kind == "wiener_causal":
            design.postfilter = causal_wiener(Fg, Pu, G, sigma, N)
        else:
            from .df import design_df
            rebuilt = design_df(
                F, Pu, priv, G, sigma, lookahead=lookahead,
                decision_domain=info.get("decision_domain",
                                         "nonneg_integers"),
                N=N, input_mean=mean)
            design.postfilter = rebuilt.postfilter
    else:
        raise ConfigError(f"unknown design kind {kind!r}")
    return design


def save_json(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
