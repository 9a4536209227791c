"""Run configuration, initial conditions, experiment drivers and CSV writers."""

from __future__ import annotations

import copy
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import spectral
from .adaptive import AdaptiveParams
from .models import DEFAULT_M, MODEL_NAMES, make_model
from .spectral import Grid
from .stepper import run
from .tableau import BUILTIN_SCHEMES, resolve_scheme

INITIAL_PRESETS = {
    # amplitude * prod_d sin(k_d x_d)
    "smooth": {"kind": "sines", "amplitude": 0.5, "wavenumbers": [1.0, 1.0]},
    "pfc-sine": {"kind": "sines", "amplitude": 1.0, "wavenumbers": [math.pi / 16, math.pi / 16]},
}

_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "etdrk run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "grid", "scheme", "T", "initial"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "epsilon"],
            "properties": {
                "name": {"enum": list(MODEL_NAMES)},
                "epsilon": _POSITIVE,
                "beta": {"type": ["number", "null"], "minimum": 0},
                "M": {"type": "number", "minimum": 1},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "lengths"],
            "properties": {
                "dims": {"enum": [1, 2]},
                "n": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1, "maxItems": 2},
                "lengths": {"type": "array", "items": _POSITIVE, "minItems": 1, "maxItems": 2},
                "dealias": {"type": "boolean"},
            },
        },
        "scheme": {"type": "string", "minLength": 1},
        "tau": _POSITIVE,
        "T": _POSITIVE,
        "initial": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["preset", "sines", "random", "constant", "file"]},
                "name": {"enum": list(INITIAL_PRESETS)},
                "amplitude": _NUMBER,
                "wavenumbers": {"type": "array", "items": _NUMBER},
                "mean": _NUMBER,
                "seed": {"type": "integer", "minimum": 0},
                "value": _NUMBER,
                "path": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "energy_csv": {"type": "string"},
                "steps_csv": {"type": "string"},
                "report": {"type": "string"},
                "snapshot_dir": {"type": "string"},
                "snapshot_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "adaptive": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "tol": _POSITIVE,
                "r": _POSITIVE,
                "tau_min": _POSITIVE,
                "tau_max": _POSITIVE,
                "norm": {"enum": ["l2", "linf"]},
            },
        },
        "converge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base_tau": _POSITIVE,
                "k_max": {"type": "integer", "minimum": 1},
                "reference_divisor": {"type": "integer", "minimum": 2},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: dict
    base_dir: Path | None = None  # relative file references resolve against this

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "RunConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config {path}: {exc.message}") from None
        cfg = cls(copy.deepcopy(data), None if base_dir is None else Path(base_dir))
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def resolve_path(self, name) -> Path:
        p = Path(name)
        if self.base_dir is not None and not p.is_absolute():
            p = self.base_dir / p
        return p

    def _check(self):
        g = self.data["grid"]
        if len(g["n"]) != len(g["lengths"]) and len(g["lengths"]) != 1:
            raise ConfigError("grid: need one length per dimension")
        if "dims" in g and g["dims"] != len(g["n"]):
            raise ConfigError("grid: dims does not match n")
        try:
            self.grid()
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None
        if self.data["T"] < self.data.get("tau", 0.0):
            raise ConfigError("need T >= tau")
        init = self.data["initial"]
        if init["kind"] == "file":
            p = self.resolve_path(init.get("path", ""))
            if not p.is_file():
                raise ConfigError(f"initial condition file {p} does not exist")
        if init["kind"] == "preset" and "name" not in init:
            raise ConfigError("initial: preset needs a name")
        scheme = self.data["scheme"]
        if scheme not in BUILTIN_SCHEMES and not self.resolve_path(scheme).is_file():
            raise ConfigError(f"tableau file {self.resolve_path(scheme)} does not exist")
        if "adaptive" in self.data:
            try:
                self.adaptive_params()
            except ValueError as exc:
                raise ConfigError(f"adaptive: {exc}") from None

    @property
    def tau(self) -> float:
        if "tau" not in self.data:
            raise ConfigError("config: 'tau' is required for fixed-step runs")
        return float(self.data["tau"])

    def model(self):
        m = self.data["model"]
        return make_model(m["name"], m["epsilon"], m.get("beta"), m.get("M", DEFAULT_M))

    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(tuple(g["n"]), tuple(g["lengths"]), bool(g.get("dealias", False)))

    def tableau(self):
        scheme = self.data["scheme"]
        return resolve_scheme(scheme if scheme in BUILTIN_SCHEMES else self.resolve_path(scheme))

    def initial(self) -> np.ndarray:
        ic = dict(self.data["initial"])
        if ic["kind"] == "file":
            ic["path"] = str(self.resolve_path(ic["path"]))
        return initial_field(ic, self.grid())

    def adaptive_params(self) -> AdaptiveParams:
        return AdaptiveParams(**self.data.get("adaptive", {}))

    @property
    def outputs(self) -> dict:
        return self.data.get("outputs", {})


def initial_field(ic: dict, grid: Grid) -> np.ndarray:
    kind = ic["kind"]
    if kind == "preset":
        ic = {**INITIAL_PRESETS[ic["name"]], **{k: v for k, v in ic.items() if k not in ("kind", "name")}}
        kind = ic["kind"]
    if kind == "sines":
        coords = grid.coords()
        waves = list(ic.get("wavenumbers", [1.0] * grid.dims))[: grid.dims]
        out = np.full(grid.n, float(ic.get("amplitude", 1.0)))
        for x, k in zip(coords, waves):
            out = out * np.sin(k * x)
        return out
    if kind == "random":
        # mean + amplitude * U with U uniform on [-1, 1)
        rng = np.random.Generator(np.random.PCG64(int(ic.get("seed", 0))))
        return float(ic.get("mean", 0.0)) + float(ic.get("amplitude", 1.0)) * (2.0 * rng.random(grid.n) - 1.0)
    if kind == "constant":
        return np.full(grid.n, float(ic.get("value", 0.0)))
    if kind == "file":
        field = spectral.read_snapshot(ic["path"])
        if field.shape != grid.n:
            raise ConfigError(f"initial field has shape {field.shape}, grid is {grid.n}")
        return field
    raise ConfigError(f"unknown initial condition kind {kind!r}")


# CSV ------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.17g}"


def csv_text(header, rows, trailer=()) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    lines += list(trailer)
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


ENERGY_HEADER = ("step", "t", "dt", "energy", "max_norm")
STEPS_HEADER = ("step", "t", "dt", "e_rel", "accepted")


def write_snapshots(directory, snapshots: dict) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for t, field in sorted(snapshots.items()):
        p = directory / f"u_t{t:015.6f}.etdf"
        spectral.write_snapshot(p, field)
        out.append(p)
    return out


# convergence ----------------------------------------------------------------
@dataclass
class ConvergenceTable:
    taus: list
    linf: list
    l2: list

    @staticmethod
    def _rates(errs):
        return [math.nan] + [math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(errs, errs[1:])]

    @property
    def linf_rates(self):
        return self._rates(self.linf)

    @property
    def l2_rates(self):
        return self._rates(self.l2)

    def rows(self):
        return list(zip(self.taus, self.linf, self.linf_rates, self.l2, self.l2_rates))

    def csv(self) -> str:
        return csv_text(("tau", "linf_err", "linf_rate", "l2_err", "l2_rate"), self.rows())


def converge(model, tableau, grid, u0, T, base_tau, k_max, reference_divisor=2, workers=None) -> ConvergenceTable:
    """Self-convergence sweep tau = base/2^k, k = 0..k_max.

    Errors are relative to a run with tau_finest / reference_divisor.
    """
    taus = [base_tau / 2**k for k in range(k_max + 1)]
    all_taus = taus + [taus[-1] / reference_divisor]
    workers = workers or spectral.fft_workers()
    # each run already uses single-threaded FFTs unless ETDRK_THREADS says otherwise
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(all_taus)))) as pool:
        finals = list(pool.map(lambda tau: run(model, tableau, grid, u0, tau, T).final, all_taus))
    ref = finals[-1]
    ref_inf, ref_2 = np.max(np.abs(ref)), np.linalg.norm(ref)
    linf = [float(np.max(np.abs(u - ref)) / ref_inf) for u in finals[:-1]]
    l2 = [float(np.linalg.norm(u - ref) / ref_2) for u in finals[:-1]]
    return ConvergenceTable(taus, linf, l2)
