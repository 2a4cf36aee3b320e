"""YAML experiment configuration with strict key checking.

Every mapping is checked against a fixed schema; unknown keys, missing
required keys and badly typed values raise ``ConfigError`` naming the key
path and the line in the file.  See ``docs/config_schema.md`` for the
schema and ``configs/`` for examples.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import BssError, ConfigError
from .kernels import ExponentialKernel, GammaKernel, Kernel, TabulatedKernel
from .model import BssModel, ConstantSigma, DeterministicSigma, DriftSpec, ExpOUSigma, IntermittencyModel

MANIFEST_VERSION = 1
REQUIRED = object()


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _nums(v):
    return isinstance(v, list) and all(_num(x) for x in v)


def _str(v):
    return isinstance(v, str)


def _bool(v):
    return isinstance(v, bool)


def _opt(check):
    return lambda v: v is None or check(v)


# leaf: (checker, default, description of the expected type)
FLOAT, INT, STR, BOOL, FLOATS = (_num, "a number"), (_int, "an integer"), (_str, "a string"), \
    (_bool, "true/false"), (_nums, "a list of numbers")
OPT_FLOAT, OPT_INT, OPT_STR = (_opt(_num), "a number or null"), (_opt(_int), "an integer or null"), \
    (_opt(_str), "a string or null")
STRS = (lambda v: isinstance(v, list) and all(_str(x) for x in v), "a list of strings")


def leaf(kind, default=REQUIRED):
    return (kind[0], default, kind[1])


KERNEL_FAMILIES = {
    "gamma": {"kappa": leaf(FLOAT), "rho": leaf(FLOAT)},
    "exponential": {"rho": leaf(FLOAT)},
    "tabulated": {"knots": leaf((_opt(_nums), "a list of numbers"), None),
                  "values": leaf((_opt(_nums), "a list of numbers"), None),
                  "csv": leaf(OPT_STR, None)},
}

PROCESS_FAMILIES = {
    "constant": {"value": leaf(FLOAT)},
    "deterministic": {"knots": leaf(FLOATS), "values": leaf(FLOATS)},
    "exp_ou": {"reversion": leaf(FLOAT), "mean_log": leaf(FLOAT, 0.0), "vol_log": leaf(FLOAT, 0.5)},
}
PROCESS_COMMON = {"active_from": leaf(OPT_FLOAT, None)}


@dataclass(frozen=True)
class Family:
    families: dict
    common: dict | None = None
    optional: bool = False


SCHEMA = {
    "model": {
        "mu": leaf(FLOAT, 0.0),
        "kernel": Family(KERNEL_FAMILIES),
        "sigma": Family(PROCESS_FAMILIES, PROCESS_COMMON),
        "drift": {
            "q_kernel": Family(KERNEL_FAMILIES, optional=True),
            "a_process": Family(PROCESS_FAMILIES, PROCESS_COMMON, optional=True),
        },
        "beta": leaf(FLOAT, 0.0),
        "horizon_T": leaf(FLOAT, 1.0),
        "truncation_M": leaf(OPT_FLOAT, None),
        "truncation_tol": leaf(FLOAT, 1e-6),
    },
    "grid": {"t_start": leaf(FLOAT, 0.0), "t_end": leaf(OPT_FLOAT, None), "n_steps": leaf(INT)},
    "seed": leaf(INT, 0),
    "output_dir": leaf(STR, "out"),
    "validate": {"n_probe": leaf(INT, 16)},
    "simulate": {"n_paths": leaf(INT, 1)},
    "covariance": {"t_lower": leaf(FLOAT, 0.0), "times": leaf(FLOATS)},
    "condlaw": {"t_lower": leaf(FLOAT), "times": leaf(FLOATS), "method": leaf(STR, "scheme"),
                "frozen_seed": leaf(OPT_INT, None), "n_samples": leaf(INT, 0)},
    "rkhs": {"n_steps": leaf(INT, 400), "target": leaf(STR, "hat"), "target_csv": leaf(OPT_STR, None),
             "f": leaf(STR, "one"), "ridge": leaf(OPT_FLOAT, None), "deltas": leaf(FLOATS, [])},
    "probe": {"t_lower": leaf(FLOAT, 0.0), "t_upper": leaf(OPT_FLOAT, None), "n_trials": leaf(INT, 100000),
              "epsilon": leaf(OPT_FLOAT, None), "epsilon_scale": leaf(FLOAT, 0.25),
              "targets": leaf(STRS, ["zero", "up", "down", "sine", "zigzag"]),
              "frozen_seed": leaf(OPT_INT, None), "monitor_stride": leaf(INT, 1),
              "write_deviations": leaf(BOOL, False)},
    "counterexample": {"n_trials": leaf(INT, 100000), "n_steps": leaf(INT, 256), "T": leaf(FLOAT, 0.25)},
}

COMMAND_SECTIONS = ("validate", "simulate", "covariance", "condlaw", "rkhs", "probe", "counterexample")


def _line_map(node, path=(), out=None) -> dict:
    """Map key paths to 1-based line numbers using the composed YAML tree."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), out)
    return out


class _Checker:
    def __init__(self, lines: dict, source: str):
        self.lines = lines
        self.source = source

    def fail(self, path, msg):
        line = None
        p = tuple(path)
        while line is None and p:
            line = self.lines.get(p)
            p = p[:-1]
        where = f"{self.source}:{line}" if line else self.source
        name = ".".join(str(x) for x in path) or "<top>"
        raise ConfigError(f"{where}: {name}: {msg}")

    def mapping(self, data, schema: dict, path):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        for key in data:
            if key not in schema:
                self.fail(path + (key,), f"unknown key (allowed: {', '.join(sorted(schema))})")
        out = {}
        for key, spec in schema.items():
            sub = path + (key,)
            if isinstance(spec, dict):
                if path == () and key in COMMAND_SECTIONS and data.get(key) is None:
                    # absent command blocks stay absent; defaults are filled on use
                    out[key] = None
                elif key in data:
                    out[key] = self.mapping(data[key], spec, sub)
                else:
                    out[key] = self.mapping({}, spec, sub)
            elif isinstance(spec, Family):
                out[key] = self.family(data.get(key), spec, sub)
            else:
                check, default, kind = spec
                if key in data:
                    if not check(data[key]):
                        self.fail(sub, f"expected {kind}, got {data[key]!r}")
                    out[key] = data[key]
                elif default is REQUIRED:
                    self.fail(sub, "missing required key")
                else:
                    out[key] = copy.deepcopy(default)
        return out

    def family(self, data, spec: Family, path):
        if data is None:
            if spec.optional:
                return None
            self.fail(path, "missing required mapping with a 'family' key")
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        fam = data.get("family")
        if fam not in spec.families:
            self.fail(path + ("family",), f"expected one of {sorted(spec.families)}, got {fam!r}")
        schema = {**spec.families[fam], **(spec.common or {})}
        rest = {k: v for k, v in data.items() if k != "family"}
        return {"family": fam, **self.mapping(rest, schema, path)}


def _kernel(d: dict, base: Path, fail) -> Kernel:
    fam = d["family"]
    if fam == "gamma":
        return GammaKernel(float(d["kappa"]), float(d["rho"]))
    if fam == "exponential":
        return ExponentialKernel(float(d["rho"]))
    if d["csv"] is not None:
        if d["knots"] is not None or d["values"] is not None:
            fail("give either csv or knots/values, not both")
        return TabulatedKernel.from_csv(base / d["csv"])
    if d["knots"] is None or d["values"] is None:
        fail("tabulated kernel needs knots and values (or csv)")
    return TabulatedKernel(tuple(d["knots"]), tuple(d["values"]))


def _process(d: dict) -> IntermittencyModel:
    fam, af = d["family"], d["active_from"]
    if fam == "constant":
        return ConstantSigma(float(d["value"]), active_from=af)
    if fam == "deterministic":
        return DeterministicSigma(tuple(d["knots"]), tuple(d["values"]), active_from=af)
    return ExpOUSigma(float(d["reversion"]), float(d["mean_log"]), float(d["vol_log"]), active_from=af)


def build_model(m: dict, base: Path = Path("."), source: str = "<config>", lines: dict | None = None) -> BssModel:
    chk = _Checker(lines or {}, source)

    def part(path, make):
        try:
            return make(lambda msg: chk.fail(path, msg))
        except ConfigError:
            raise
        except (BssError, OSError) as exc:
            chk.fail(path, str(exc))

    dr = m["drift"]
    g = part(("model", "kernel"), lambda fail: _kernel(m["kernel"], base, fail))
    sigma = part(("model", "sigma"), lambda fail: _process(m["sigma"]))
    q = part(("model", "drift", "q_kernel"), lambda fail: _kernel(dr["q_kernel"], base, fail)) \
        if dr["q_kernel"] else None
    a = part(("model", "drift", "a_process"), lambda fail: _process(dr["a_process"])) if dr["a_process"] else None
    return part(("model",), lambda fail: BssModel(float(m["mu"]), g, sigma, DriftSpec(q, a), float(m["beta"]),
                                                  float(m["horizon_T"]), m["truncation_M"],
                                                  float(m["truncation_tol"])))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    resolved: dict
    model: BssModel
    source: str
    command: str | None = None

    @property
    def seed(self) -> int:
        return self.resolved["seed"]

    @property
    def output_dir(self) -> str:
        return self.resolved["output_dir"]

    def section(self, name: str) -> dict:
        sec = self.resolved.get(name)
        if sec is None:
            sec = _Checker({}, self.source).mapping({}, SCHEMA[name], (name,))
        return sec

    @property
    def window(self) -> tuple[float, float, int]:
        g = self.resolved["grid"]
        t_end = self.model.horizon_T if g["t_end"] is None else g["t_end"]
        return g["t_start"], t_end, g["n_steps"]

    @property
    def dt(self) -> float:
        t0, t1, n = self.window
        return (t1 - t0) / n

    def with_seed(self, seed: int) -> "ExperimentConfig":
        r = copy.deepcopy(self.resolved)
        r["seed"] = int(seed)
        return ExperimentConfig(r, self.model, self.source, self.command)

    def canonical(self) -> str:
        return json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _check_grid(cfg: ExperimentConfig, chk: _Checker):
    t0, t1, n = cfg.window
    T = cfg.model.horizon_T
    if n < 1:
        chk.fail(("grid", "n_steps"), "must be >= 1")
    if not 0 <= t0 < t1 <= T + 1e-12:
        chk.fail(("grid",), f"window [{t0}, {t1}] must satisfy 0 <= t_start < t_end <= horizon_T={T}")
    k = T / cfg.dt
    if abs(k - round(k)) > 1e-9 * max(1.0, k) or abs(t0 / cfg.dt - round(t0 / cfg.dt)) > 1e-9:
        chk.fail(("grid",), f"step {cfg.dt} must divide horizon_T and t_start")
    if not (math.isfinite(cfg.dt) and cfg.dt > 0):
        chk.fail(("grid",), "bad grid step")


def parse_config(text: str, source: str = "<config>", base: Path = Path(".")) -> ExperimentConfig:
    """Parse config text (or a run manifest) into an ``ExperimentConfig``."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from exc
    if node is None or data is None:
        raise ConfigError(f"{source}: empty config")
    lines = _line_map(node)
    command = None
    if isinstance(data, dict) and "manifest_version" in data:
        # a run manifest: replay its embedded, fully resolved config
        if data.get("manifest_version") != MANIFEST_VERSION or "config" not in data:
            raise ConfigError(f"{source}: unsupported manifest")
        command = data.get("command")
        data = data["config"]
        lines = {p[1:]: ln for p, ln in lines.items() if p[:1] == ("config",)}
    chk = _Checker(lines, source)
    resolved = chk.mapping(data, SCHEMA, ())
    m = resolved["model"]
    for kd in (m["kernel"], m["drift"]["q_kernel"]):
        # pin table files so manifests replay from any directory
        if kd and kd.get("csv"):
            kd["csv"] = str((base / kd["csv"]).resolve())
    if resolved["seed"] < 0:
        chk.fail(("seed",), "must be >= 0")
    for name in ("condlaw", "probe"):
        sec = resolved[name]
        if sec is not None and sec["frozen_seed"] is not None and sec["frozen_seed"] < 0:
            chk.fail((name, "frozen_seed"), "must be >= 0")
    model = build_model(resolved["model"], base, source, lines)
    cfg = ExperimentConfig(resolved, model, source, command)
    _check_grid(cfg, chk)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(path), path.parent)


def manifest_text(cfg: ExperimentConfig, command: str, versions: dict, outputs: list[str]) -> str:
    """Plain-text (YAML) manifest; passing it back as ``--config`` replays the run."""
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256(),
        "versions": versions,
        "outputs": sorted(outputs),
        "config": cfg.resolved,
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=None, width=100)
