"""Run configuration: TOML schema, defaults, validation and content hash.

Schema (all tables optional except ``[potential]``)::

    [lattice]      dimension = 1, cutoff = 1
    [potential]    preset = "zero" | "constant" | "shell" (scale, radius) or coefficients = [...]
    [observable]   preset = "cos-mode" | "sin-mode" | "identity" (k = [..]) or matrix / matrix_im
    [grids]        N = [...], lambda, x, s: each a list or {start, stop, num}
    [basis]        excitation_cap = 16, mode_cap = 8
    [solver]       tol = 1e-10, expm_tol = 1e-10, dense_limit = 4000, kpm_moments = 1024, max_dim = 500000
    [verify]       N = 4, h_norm = 0.2, s = 0.3, lambda = [...], seed = 0
    [output]       dir = "out"
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .model import build_lattice, build_observable, potential_preset

DEFAULTS = {
    "lattice": {"dimension": 1, "cutoff": 1},
    "observable": {"preset": "cos-mode"},
    "grids": {
        "N": [4, 6, 8, 10, 12],
        "lambda": {"start": 0.0, "stop": 2.0, "num": 41},
        "x": {"start": 0.05, "stop": 0.6, "num": 12},
        "s": [0.0, 0.25, 0.5, 0.75, 1.0],
    },
    "basis": {"excitation_cap": 16, "mode_cap": 8},
    "solver": {"tol": 1e-10, "expm_tol": 1e-10, "dense_limit": 4000, "kpm_moments": 1024, "max_dim": 500000},
    "verify": {"N": 4, "h_norm": 0.2, "s": 0.3, "lambda": [0.05, 0.1, 0.2], "seed": 0},
    "output": {"dir": "out"},
}

KNOWN = {
    "lattice": {"dimension", "cutoff"},
    "potential": {"preset", "scale", "radius", "coefficients"},
    "observable": {"preset", "k", "matrix", "matrix_im"},
    "grids": {"N", "lambda", "x", "s"},
    "basis": {"excitation_cap", "mode_cap"},
    "solver": {"tol", "expm_tol", "dense_limit", "kpm_moments", "max_dim"},
    "verify": {"N", "h_norm", "s", "lambda", "seed"},
    "output": {"dir"},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "grids":
            out[k] = _merge(out[k], v)
        elif k == "grids" and isinstance(v, dict):
            out[k] = {**out.get(k, {}), **v}
        else:
            out[k] = v
    return out


def expand_grid(spec, field: str) -> np.ndarray:
    """A grid given as a list or as ``{start, stop, num}``."""
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise ValidationError(f"{field}: range table needs start, stop and num (missing {exc.args[0]})") from None
    try:
        return np.asarray(spec, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ValidationError(f"{field}: expected a list of numbers or a range table") from None


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    lattice: object
    potential: object
    observable: object
    N_list: list
    lambdas: np.ndarray
    x_grid: np.ndarray
    s_grid: np.ndarray
    excitation_cap: int
    mode_cap: int
    tol: float
    expm_tol: float
    dense_limit: int
    kpm_moments: int
    max_dim: int
    verify: dict
    out_dir: Path

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _positive(value, field, kind=float):
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{field}: expected {kind.__name__}, got {value!r}") from None
    if v <= 0:
        raise ValidationError(f"{field}: must be > 0, got {value!r}")
    return v


def from_dict(data: dict, *, overrides: dict | None = None) -> RunConfig:
    if "potential" not in data:
        raise ValidationError("[potential]: table is missing")
    for section, keys in data.items():
        if section not in KNOWN:
            raise ValidationError(f"[{section}]: unknown table")
        if not isinstance(keys, dict):
            raise ValidationError(f"[{section}]: expected a table")
        extra = set(keys) - KNOWN[section]
        if extra:
            raise ValidationError(f"[{section}]: unknown field(s) {sorted(extra)}")
    raw = _merge(DEFAULTS, data)
    for section, vals in (overrides or {}).items():
        raw[section] = {**raw[section], **{k: v for k, v in vals.items() if v is not None}}

    lat = raw["lattice"]
    try:
        lattice = build_lattice(int(lat["dimension"]), int(lat["cutoff"]))
    except ValidationError as exc:
        raise ValidationError(f"[lattice]: {exc}") from None
    try:
        potential = potential_preset(raw["potential"], lattice)
    except ValidationError as exc:
        raise type(exc)(f"[potential]: {exc}") from None
    obs = dict(raw["observable"])
    try:
        observable = build_observable(obs, lattice)
    except ValidationError as exc:
        raise type(exc)(f"[observable]: {exc}") from None

    g = raw["grids"]
    N_list = [int(n) for n in expand_grid(g["N"], "grids.N")]
    grids = {
        "grids.N": N_list,
        "grids.lambda": expand_grid(g["lambda"], "grids.lambda"),
        "grids.x": expand_grid(g["x"], "grids.x"),
        "grids.s": expand_grid(g["s"], "grids.s"),
    }
    for name, grid in grids.items():
        if len(grid) == 0:
            raise ValidationError(f"{name}: grid must be nonempty")
    if min(N_list) < 2:
        raise ValidationError(f"grids.N: every N must be >= 2, got {N_list}")
    if np.any(grids["grids.lambda"] < 0):
        raise ValidationError("grids.lambda: values must be >= 0")
    s = grids["grids.s"]
    if np.any((s < 0) | (s > 1)):
        raise ValidationError("grids.s: values must lie in [0, 1]")

    b = raw["basis"]
    sv = raw["solver"]
    ver = raw["verify"]
    if int(ver["N"]) < 2:
        raise ValidationError("verify.N: must be >= 2")
    return RunConfig(
        raw=raw,
        lattice=lattice,
        potential=potential,
        observable=observable,
        N_list=sorted(N_list),
        lambdas=grids["grids.lambda"],
        x_grid=grids["grids.x"],
        s_grid=s,
        excitation_cap=_positive(b["excitation_cap"], "basis.excitation_cap", int),
        mode_cap=_positive(b["mode_cap"], "basis.mode_cap", int),
        tol=_positive(sv["tol"], "solver.tol"),
        expm_tol=_positive(sv["expm_tol"], "solver.expm_tol"),
        dense_limit=_positive(sv["dense_limit"], "solver.dense_limit", int),
        kpm_moments=_positive(sv["kpm_moments"], "solver.kpm_moments", int),
        max_dim=_positive(sv["max_dim"], "solver.max_dim", int),
        verify={
            "N": int(ver["N"]),
            "h_norm": _positive(ver["h_norm"], "verify.h_norm"),
            "s": float(ver["s"]),
            "lambda": [float(x) for x in expand_grid(ver["lambda"], "verify.lambda")],
            "seed": int(ver["seed"]),
        },
        out_dir=Path(raw["output"]["dir"]),
    )


def load_config(path, *, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return from_dict(data, overrides=overrides)
