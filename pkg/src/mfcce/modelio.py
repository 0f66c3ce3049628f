"""Flat structured-text model and law files.

Sections in square brackets, `key = value` lines, `#` comments.  Scalars are
plain numbers; vectors and matrices are bracketed row-major lists, nested or
flat.  Parse errors always name the offending key and line.  Supported
sections: [model] (generic coefficients), [abatement] (the emission game's
parameters, which generate the model), [initial], [law], [sim].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .abatement import AbatementParams, LinearFlowLaw, map_to_lq
from .grids import DEFAULT_STEPS, TimeGrid
from .model import InitialLaw, LQModelSpec
from .flows import ScenarioLaw

__all__ = ["ModelFileError", "ParsedModel", "parse_model_file", "parse_law", "load_model"]


class ModelFileError(ValueError):
    """Malformed model/law file; the message names the key and line."""


@dataclass
class _Entry:
    value: str
    line: int


def _tokenize(text: str) -> dict[str, dict[str, _Entry]]:
    sections: dict[str, dict[str, _Entry]] = {}
    current: str | None = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ModelFileError(f"line {ln}: expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise ModelFileError(f"line {ln}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ModelFileError(f"line {ln}: empty key")
        if key in sections[current]:
            raise ModelFileError(f"line {ln}: duplicate key {key!r} in [{current}]")
        sections[current][key] = _Entry(value=value, line=ln)
    return sections


def _parse_number(entry: _Entry, key: str) -> float:
    try:
        return float(entry.value)
    except ValueError:
        raise ModelFileError(
            f"key {key!r} (line {entry.line}): expected a number, got {entry.value!r}"
        ) from None


def _parse_array(entry: _Entry, key: str) -> np.ndarray:
    text = entry.value
    try:
        if "[" not in text:
            return np.array(float(text))
        py = eval(text, {"__builtins__": {}}, {})  # bracketed numeric lists only
        return np.array(py, dtype=float)
    except Exception:
        raise ModelFileError(
            f"key {key!r} (line {entry.line}): expected a number or bracketed list, got {text!r}"
        ) from None


def _parse_string(entry: _Entry) -> str:
    return entry.value.strip().strip("\"'")


def _shape(arr: np.ndarray, shape: tuple, key: str, line: int) -> np.ndarray:
    if arr.shape == ():
        if shape == ():
            return arr
        if len(shape) == 2 and shape[0] == shape[1]:
            return float(arr) * np.eye(shape[0])
        return np.full(shape, float(arr))
    flat = arr.reshape(-1)
    if int(np.prod(shape)) != flat.size:
        raise ModelFileError(
            f"key {key!r} (line {line}): expected {int(np.prod(shape))} entries for shape {shape}, got {flat.size}"
        )
    return flat.reshape(shape)  # row-major


@dataclass
class ParsedModel:
    spec: LQModelSpec
    abatement: AbatementParams | None
    law: ScenarioLaw | None
    linear_law: LinearFlowLaw | None
    sim: dict
    grid_steps: int | None


_MODEL_MATS = ("A", "B", "sigma", "Q", "Q_bar", "Q_tilde", "R", "S", "H", "H_bar", "H_tilde")
_MODEL_VECS = ("L", "q", "r")


def parse_model_file(text: str, grid: TimeGrid | None = None) -> ParsedModel:
    """Parse a model file (with optional [law]/[sim] sections)."""
    sections = _tokenize(text)
    known = {"model", "abatement", "initial", "law", "sim"}
    for name in sections:
        if name not in known:
            raise ModelFileError(f"unknown section [{name}]")

    model_sec = sections.get("model", {})
    abat_sec = sections.get("abatement")
    init_sec = sections.get("initial", {})

    grid_steps = None
    if "grid_n" in model_sec:
        grid_steps = int(_parse_number(model_sec["grid_n"], "grid_n"))

    horizon_entry = model_sec.get("T")
    abatement = None
    if abat_sec is not None:
        if horizon_entry is None and "T" not in abat_sec:
            raise ModelFileError("abatement model needs T in [model] or [abatement]")
        horizon = _parse_number(abat_sec.get("T", horizon_entry), "T")
        nu1 = _parse_number(init_sec["nu1"], "nu1") if "nu1" in init_sec else 0.0
        nu2 = _parse_number(init_sec["nu2"], "nu2") if "nu2" in init_sec else nu1**2
        missing = [k for k in ("a", "b", "eps") if k not in abat_sec]
        if missing:
            raise ModelFileError(f"[abatement] is missing keys {missing}")
        a = _parse_number(abat_sec["a"], "a")
        b = _parse_number(abat_sec["b"], "b")
        eps = _parse_number(abat_sec["eps"], "eps")
        spec = map_to_lq(a, b, eps, nu1, horizon, nu2)
        if eps > 0.0:
            abatement = AbatementParams(a=a, b=b, eps=eps, nu1=nu1, horizon=horizon, nu2=nu2)
    else:
        if horizon_entry is None:
            raise ModelFileError("[model] is missing key 'T'")
        horizon = _parse_number(horizon_entry, "T")
        d = int(_parse_number(model_sec["d"], "d")) if "d" in model_sec else 1
        k = int(_parse_number(model_sec["k"], "k")) if "k" in model_sec else 1
        kind = _parse_string(init_sec["sampler"]) if "sampler" in init_sec else "point-mass"
        nu1 = _shape(_parse_array(init_sec["nu1"], "nu1"), (d,), "nu1", init_sec["nu1"].line) if "nu1" in init_sec else np.zeros(d)
        if "nu2" in init_sec:
            nu2 = _shape(_parse_array(init_sec["nu2"], "nu2"), (d, d), "nu2", init_sec["nu2"].line)
        else:
            nu2 = np.outer(nu1, nu1)
        initial = InitialLaw(nu1, nu2, kind)
        shapes = {
            "A": (d, d), "B": (d, k), "sigma": (d, d), "Q": (d, d), "Q_bar": (d, d),
            "Q_tilde": (d, d), "R": (k, k), "S": (k, d), "H": (d, d), "H_bar": (d, d),
            "H_tilde": (d, d), "L": (d,), "q": (d,), "r": (k,),
        }
        values = {}
        for key in _MODEL_MATS + _MODEL_VECS:
            if key in model_sec:
                entry = model_sec[key]
                values[key] = _shape(_parse_array(entry, key), shapes[key], key, entry.line)
        defaults = dict(R=np.eye(k), B=np.eye(d, k))
        kwargs = {**defaults, **values}
        spec = LQModelSpec.from_constants(horizon, initial, d=d, k=k, **kwargs)

    law = None
    linear_law = None
    if "law" in sections:
        law, linear_law = parse_law(sections["law"], spec, grid or TimeGrid(spec.horizon, grid_steps or DEFAULT_STEPS))

    sim = {}
    if "sim" in sections:
        for key, entry in sections["sim"].items():
            if key == "antithetic":
                sim[key] = _parse_string(entry).lower() in ("1", "true", "yes")
            elif key in ("paths", "seed"):
                sim[key] = int(_parse_number(entry, key))
            else:
                raise ModelFileError(f"key {key!r} (line {entry.line}): unknown [sim] key")

    return ParsedModel(
        spec=spec, abatement=abatement, law=law, linear_law=linear_law, sim=sim,
        grid_steps=grid_steps,
    )


def parse_law(
    sec: dict[str, _Entry], spec: LQModelSpec, grid: TimeGrid
) -> tuple[ScenarioLaw, LinearFlowLaw | None]:
    """Build a scenario law from a [law] section.

    Three forms: `z1`/`sigma_z2` moments (canonical two-point linear-slope
    law), `weights` + `z_support` (slope support points, forcing = -slope),
    or `weights` + per-scenario `delta_<i>` tables (piecewise-constant,
    one value per grid interval or a single constant).
    """
    if "z1" in sec or "sigma_z2" in sec:
        z1 = _parse_number(sec["z1"], "z1") if "z1" in sec else 0.0
        s2 = _parse_number(sec["sigma_z2"], "sigma_z2") if "sigma_z2" in sec else 0.0
        lin = LinearFlowLaw(z1, s2)
        return lin.scenario_law(grid), lin

    if "weights" not in sec:
        raise ModelFileError("[law] needs either z1/sigma_z2 or a 'weights' key")
    wentry = sec["weights"]
    weights = np.atleast_1d(_parse_array(wentry, "weights"))

    if "z_support" in sec:
        entry = sec["z_support"]
        support = np.atleast_1d(_parse_array(entry, "z_support"))
        if support.shape != weights.shape:
            raise ModelFileError(
                f"key 'z_support' (line {entry.line}): {support.size} support points for "
                f"{weights.size} weights"
            )
        law = ScenarioLaw.from_constants(grid, weights, -support, k=spec.k)
        z1 = float(weights @ support)
        s2 = float(weights @ support**2) - z1**2
        return law, LinearFlowLaw(z1, max(s2, 0.0))

    deltas = []
    for s in range(1, weights.size + 1):
        key = f"delta_{s}"
        if key not in sec:
            raise ModelFileError(
                f"[law] (line {wentry.line}): missing {key!r} for weight {s} "
                f"(laws with explicit forcing need one delta table per weight)"
            )
        entry = sec[key]
        arr = np.atleast_1d(_parse_array(entry, key))
        if arr.size == spec.k:
            deltas.append(arr.reshape(spec.k))
        else:
            table = arr.reshape(-1, spec.k) if arr.ndim == 1 and spec.k > 1 else arr
            if table.ndim == 1:
                table = table[:, None]
            if table.shape[0] != grid.steps:
                raise ModelFileError(
                    f"key {key!r} (line {entry.line}): {table.shape[0]} interval values "
                    f"but the grid has {grid.steps} intervals"
                )
            deltas.append(table)
    return ScenarioLaw(grid, weights, deltas, k=spec.k), None


def load_model(path: str, grid: TimeGrid | None = None) -> ParsedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model_file(fh.read(), grid)


def parse_law_file(text: str, spec: LQModelSpec, grid: TimeGrid):
    sections = _tokenize(text)
    if "law" not in sections:
        raise ModelFileError("law file has no [law] section")
    return parse_law(sections["law"], spec, grid)


def load_law(path: str, spec: LQModelSpec, grid: TimeGrid):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_law_file(fh.read(), spec, grid)
