"""Run configuration: a strict TOML schema with defaults."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    def __init__(self, msg: str, key: str | None = None, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{msg}{where}")
        self.key = key
        self.line = line


# value kinds: float, int, str, bool, floats (list of numbers),
# intervals (list of [a, b] pairs), coeffs (list of [amplitude, mode] pairs)
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {
        "seed": ("int", 0),
        "threads": ("int", 1),
        "mode": ("str", "recovery"),
    },
    "domain": {
        "kind": ("str", "disk"),
        "radius": ("float", 1.0),
        "axes": ("floats", [1.0, 1.0]),
        "coeffs": ("coeffs", []),
        "n_r": ("int", 48),
        "n_theta": ("int", 512),
    },
    "schedule": {
        "eps": ("floats", [0.1, 0.05, 0.02]),
        "eta_exponent": ("float", 3.0),
        "eta": ("floats", []),
    },
    "optimizer": {
        "max_iters": ("int", 20000),
        "grad_tol": ("float", 1e-5),
        "memory": ("int", 12),
        "armijo": ("float", 1e-4),
        "backtrack": ("float", 0.5),
        "max_backtracks": ("int", 50),
        "precondition": ("bool", True),
    },
    "init": {
        "kind": ("str", "constant"),
        "angles": ("floats", [0.0, math.pi]),
    },
    "dictionary": {
        "kind": ("str", "default"),
        "n_boundary": ("int", 16),
        "n_interior": ("int", 5),
    },
    "sweep": {
        "vortices": ("str", "0:+1,pi:+1"),
        "eps": ("floats", [1e-2, 1e-3, 1e-4]),
        "n_theta": ("int", 256),
        "n_r": ("int", 64),
        "resolution": ("float", 8.0),
        "growth": ("float", 0.05),
        "r_patch_factor": ("float", 10.0),
    },
    "renorm": {
        "vortices": ("str", "0:+1,pi:+1"),
        "rho_schedule": ("floats", [0.1, 0.05, 0.025, 0.0125, 0.00625]),
        "cauchy_tol": ("float", 0.05),
        "n_r": ("int", 64),
        "n_theta": ("int", 256),
        "numeric": ("bool", False),
    },
    "jacobian": {
        "fixture": ("str", "escaping"),
        "field": ("str", ""),
        "eps": ("floats", [0.02, 0.01, 0.005]),
        "refine": ("float", 4.0),
        "expected_multiple": ("float", 1.0),
    },
    "project": {
        "beta": ("float", 0.75),
        "field": ("str", ""),
        "eps": ("float", 0.2),
        "eta": ("floats", [0.04, 0.02, 0.01]),
        "n_r": ("int", 125),
        "n_theta": ("int", 768),
    },
    "oned": {
        "task": ("str", "peierls"),
        "eps": ("floats", [1e-2, 1e-3]),
        "r": ("float", 1.0),
        "resolution": ("float", 4.0),
        "A": ("intervals", [[0.0, 0.25]]),
        "B": ("intervals", [[0.75, 1.0]]),
        "I": ("floats", [0.0, 1.0]),
    },
    "tolerances": {
        "peierls_rel": ("float", 0.01),
        "rearrangement_abs": ("float", 1e-10),
        "jacobian_total_rel": ("float", 1e-10),
        "escaping_mass_rel": ("float", 0.02),
        "dual_norm_halving": ("float", 2.0),
        "renorm_rel": ("float", 0.02),
        "recovery_slope_rel": ("float", 0.03),
        "recovery_intercept_rel": ("float", 0.10),
        "minimize_slope_rel": ("float", 0.10),
        "separation_abs": ("float", 0.05),
        "penalty_ratio": ("float", 3.0),
        "projector_factor": ("float", 2.0),
        "oned_excess_margin": ("float", 0.3),
        "superadditivity_abs": ("float", 1e-8),
    },
    "output": {
        "dir": ("str", ""),
        "snapshots": ("bool", True),
        "plots": ("bool", True),
    },
    "assertions": {
        "enabled": ("bool", True),
        "skip": ("strs", []),
    },
}


def defaults() -> dict:
    return {sec: {k: copy.deepcopy(v) for k, (_, v) in keys.items()} for sec, keys in SCHEMA.items()}


def _key_line(text: str, section: str | None, key: str) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or at top level)."""
    cur = None
    pat = re.compile(r"^\s*(?:\"?)" + re.escape(key) + r"(?:\"?)\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        m = re.match(r"^\s*\[\s*([^\]]+?)\s*\]", line)
        if m:
            cur = m.group(1)
            if section is not None and cur == f"{section}.{key}" or (section is None and cur == key):
                return n
            continue
        if cur == section and pat.match(line):
            return n
    return None


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check(kind: str, v):
    if kind == "float":
        return float(v) if _is_num(v) else None
    if kind == "int":
        return v if isinstance(v, int) and not isinstance(v, bool) else None
    if kind == "str":
        return v if isinstance(v, str) else None
    if kind == "bool":
        return v if isinstance(v, bool) else None
    if kind == "floats":
        return [float(x) for x in v] if isinstance(v, list) and all(_is_num(x) for x in v) else None
    if kind == "strs":
        return list(v) if isinstance(v, list) and all(isinstance(x, str) for x in v) else None
    if kind in ("intervals", "coeffs"):
        ok = isinstance(v, list) and all(isinstance(p, list) and len(p) == 2 and all(_is_num(x) for x in p)
                                         for p in v)
        if not ok:
            return None
        if kind == "coeffs":
            return [[float(a), int(m)] for a, m in v]
        return [[float(a), float(b)] for a, b in v]
    raise AssertionError(kind)


def validate(raw: dict, text: str = "") -> dict:
    """Defaults filled in; unknown sections or keys and wrong types raise ConfigError."""
    out = defaults()
    for sec, body in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section {sec!r}", sec, _key_line(text, None, sec))
        if not isinstance(body, dict):
            raise ConfigError(f"{sec!r} must be a table", sec, _key_line(text, None, sec))
        for key, val in body.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}", f"{sec}.{key}", _key_line(text, sec, key))
            kind = SCHEMA[sec][key][0]
            got = _check(kind, val)
            if got is None:
                raise ConfigError(f"{sec}.{key} must be of type {kind}, got {val!r}", f"{sec}.{key}",
                                  _key_line(text, sec, key))
            out[sec][key] = got
    _semantic(out)
    return out


def _semantic(cfg: dict):
    if cfg["run"]["threads"] < 1:
        raise ConfigError("run.threads must be >= 1", "run.threads")
    if cfg["run"]["mode"] not in ("recovery", "minimize"):
        raise ConfigError("run.mode must be 'recovery' or 'minimize'", "run.mode")
    if cfg["domain"]["kind"] not in ("disk", "ellipse", "fourier"):
        raise ConfigError(f"unknown domain kind {cfg['domain']['kind']!r}", "domain.kind")
    if cfg["init"]["kind"] not in ("constant", "tangent", "random", "two-vortex", "reflected"):
        raise ConfigError(f"unknown init kind {cfg['init']['kind']!r}", "init.kind")
    if cfg["dictionary"]["kind"] != "default":
        raise ConfigError(f"unknown dictionary {cfg['dictionary']['kind']!r}", "dictionary.kind")
    if cfg["jacobian"]["fixture"] not in ("escaping", "identity", "field"):
        raise ConfigError(f"unknown jacobian fixture {cfg['jacobian']['fixture']!r}", "jacobian.fixture")
    if cfg["oned"]["task"] not in ("peierls", "minimize", "rearr"):
        raise ConfigError(f"unknown oned task {cfg['oned']['task']!r}", "oned.task")
    if not 0 < cfg["project"]["beta"] < 1:
        raise ConfigError("project.beta must lie in (0, 1)", "project.beta")
    if any(e <= 0 for e in cfg["schedule"]["eps"] + cfg["sweep"]["eps"]):
        raise ConfigError("eps values must be positive", "schedule.eps")


@dataclass
class RunConfig:
    data: dict = field(default_factory=defaults)
    source: str | None = None

    def __getitem__(self, sec):
        return self.data[sec]

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def copy(self) -> "RunConfig":
        return RunConfig(copy.deepcopy(self.data), self.source)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.canonical_json() == other.canonical_json()


def parse_text(text: str, source: str | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", None, int(m.group(1)) if m else None) from exc
    return RunConfig(validate(raw, text), source)


def parse_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    return parse_text(text, str(p))


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_toml())
