"""Run configuration files.

Line-oriented, sectioned ``key = value`` text::

    # comment
    [run]
    experiment = reduce
    seed = 12345

    [physics]
    a = 1e-5 cm          # physical quantities always carry a unit

Physical quantities are converted to cgs once, at load. Every error names
the offending line.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .mass import PROTON_MASS_G

EXPERIMENTS = ("reduce", "mass-sim", "stuff-map", "shatter", "ts-check", "oracle-check")

# unit tables: factor to cgs
UNITS = {
    "length": {"cm": 1.0, "m": 100.0, "mm": 0.1, "um": 1e-4, "nm": 1e-7},
    "mass": {"g": 1.0, "kg": 1000.0},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6},
    "volume_rate": {"cm^3/s": 1.0, "cm3/s": 1.0, "m^3/s": 1e6, "m3/s": 1e6},
}

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, str, bool, floats, ints, particles
    default: object = REQUIRED
    dim: str | None = None
    choices: tuple | None = None


_RUN = {
    "experiment": Key("str", REQUIRED, choices=EXPERIMENTS),
    "seed": Key("int", 0),
    "out": Key("str", "out"),
    "threads": Key("int", 1),
}

_PHYSICS = {
    "a": Key("float", 1e-5, "length"),
    "g0_sq": Key("float", 1e-30, "volume_rate"),
    "m0": Key("float", PROTON_MASS_G, "mass"),
}

SCHEMA = {
    "reduce": {
        "reduce": {
            "weights": Key("floats"),
            "phases": Key("floats", None),
            "eigenvalues": Key("floats", None),
            "coupling": Key("float", 1.0),
            "hopping": Key("float", 0.0),
            "dt": Key("float", 1e-3),
            "horizon": Key("float", 50.0),
            "n_traj": Key("int", 10_000),
            "record_every": Key("int", 1000),
            "threshold": Key("float", 0.999),
            "max_doublings": Key("int", 4),
        },
    },
    "oracle-check": {
        "oracle": {
            "weights": Key("floats", (0.1, 0.2, 0.3, 0.4)),
            "diag1": Key("floats", (1.0, 1.0, -1.0, -1.0)),
            "diag2": Key("floats", (1.0, -1.0, 1.0, -1.0)),
            "couplings": Key("floats", (0.7, 0.5)),
            "hopping": Key("float", 0.6),
            "dt": Key("float", 1e-3),
            "horizon": Key("float", 2.0),
            "n_traj": Key("int", 4000),
            "record_every": Key("int", 100),
        },
    },
    "mass-sim": {
        "physics": _PHYSICS,
        "lattice": {
            "n_cells": Key("int", 32),
            "cell_size": Key("float", 0.5e-5, "length"),
        },
        "mass": {
            "separation": Key("float", 1e-4, "length"),
            "n_particles": Key("int", 1),
            "form": Key("str", "mass", choices=("mass", "density")),
            "kernel": Key("str", "gaussian", choices=("gaussian", "square")),
            "n_traj": Key("int", 10_000),
            "n_steps": Key("int", 400),
            "horizon_gamma": Key("float", 1.0),
            "table_particles": Key("ints", (1, 2, 4, 8)),
            "table_separations": Key("floats", (2e-5, 4e-5, 6e-5, 1e-4), "length"),
        },
    },
    "stuff-map": {
        "stuff": {
            "a": Key("float", 1.0),
            "particles": Key("particles"),
            "t": Key("float", 0.0),
            "x_min": Key("float", -10.0),
            "x_max": Key("float", 10.0),
            "n_x": Key("int", 41),
            "y": Key("float", 0.0),
            "z": Key("float", 0.0),
        },
    },
    "shatter": {
        "shatter": {
            "amount": Key("float", 1.0),
            "a": Key("float", 1.0),
            "l": Key("float", 100.0),
            "speeds": Key("floats", (0.0, 0.3, 0.6)),
            "alphas": Key("ints", (1, 2)),
            "n_directions": Key("int", 100_000),
            "geometry": Key("str", "planar", choices=("planar", "spherical")),
        },
    },
    "ts-check": {
        "ts": {
            "n_cells": Key("int", 6),
            "coupling": Key("float", 1.0),
            "omega": Key("float", 0.8),
            "weights": Key("floats", (0.3, 0.7)),
            "horizon": Key("float", 0.64),
            "dts": Key("floats", (0.08, 0.04, 0.02, 0.01)),
            "n_samples": Key("int", 128),
            "scheme": Key("str", "nonlinear", choices=("nonlinear", "linear")),
        },
    },
}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QTY = re.compile(rf"^({_NUM})\s*(\S+)?$")


@dataclass
class RunConfig:
    experiment: str
    seed: int
    out: str
    threads: int
    sections: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "sections": self.sections}

    def hash(self) -> str:
        """sha256 of the parsed values; output path and thread count excluded."""
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]


def _strip(line: str) -> str:
    i = line.find("#")
    return (line if i < 0 else line[:i]).strip()


def _number(text: str, kind: str, key: str, lineno: int):
    try:
        if kind == "int":
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {text!r}", lineno, key) from None


def _quantity(text: str, spec: Key, key: str, lineno: int):
    """Parse ``number [unit]`` and convert to cgs."""
    m = _QTY.match(text.strip())
    if not m:
        raise ConfigError(f"{key}: cannot parse {text!r}", lineno, key)
    value = _number(m.group(1), "int" if spec.kind in ("int", "ints") else "float", key, lineno)
    unit = m.group(2)
    if spec.dim is None:
        if unit is not None:
            raise ConfigError(f"{key}: unit mismatch, {key} is dimensionless but got unit {unit!r}", lineno, key)
        return value
    table = UNITS[spec.dim]
    if unit is None:
        raise ConfigError(f"{key}: unit mismatch, missing {spec.dim} unit (one of {', '.join(table)})", lineno, key)
    if unit not in table:
        raise ConfigError(f"{key}: unit mismatch, {unit!r} is not a {spec.dim} unit (one of {', '.join(table)})",
                          lineno, key)
    return value * table[unit]


def _value(text: str, spec: Key, key: str, lineno: int):
    text = text.strip()
    if text == "":
        raise ConfigError(f"{key}: empty value", lineno, key)
    if spec.kind == "str":
        if spec.choices and text not in spec.choices:
            raise ConfigError(f"{key}: {text!r} is not one of {', '.join(spec.choices)}", lineno, key)
        return text
    if spec.kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {text!r}", lineno, key)
    if spec.kind in ("int", "float"):
        return _quantity(text, spec, key, lineno)
    if spec.kind in ("floats", "ints"):
        return tuple(_quantity(p, spec, key, lineno) for p in text.split(","))
    if spec.kind == "particles":
        # m x y z vx vy vz; particles separated by ';'
        out = []
        for chunk in text.split(";"):
            nums = chunk.split()
            if len(nums) != 7:
                raise ConfigError(f"{key}: each particle needs 7 numbers (m x y z vx vy vz), got {chunk.strip()!r}",
                                  lineno, key)
            out.append(tuple(_number(n, "float", key, lineno) for n in nums))
        return tuple(out)
    raise AssertionError(spec.kind)


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text; see the module docstring for the format."""
    raw = {}  # section -> key -> (value text, line)
    headers = {}
    section = None
    last = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        last = lineno
        s = _strip(line)
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"malformed section header {s!r}", lineno)
            section = s[1:-1].strip()
            if section in headers:
                raise ConfigError(f"duplicate section [{section}]", lineno)
            headers[section] = lineno
            raw[section] = {}
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, val = (p.strip() for p in s.split("=", 1))
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r}", lineno, key)
        raw[section][key] = (val, lineno)

    if "run" not in raw:
        raise ConfigError("missing [run] section", last)
    run = _section(raw["run"], _RUN, "run", headers["run"])
    schema = SCHEMA[run["experiment"]]
    for name, line in headers.items():
        if name != "run" and name not in schema:
            raise ConfigError(f"unknown section [{name}] for experiment {run['experiment']!r}", line)
    sections = {name: _section(raw.get(name, {}), keys, name, headers.get(name, last))
                for name, keys in schema.items()}
    return RunConfig(run["experiment"], run["seed"], run["out"], run["threads"], sections)


def _section(entries: dict, keys: dict, name: str, header_line: int) -> dict:
    out = {}
    for key, (val, lineno) in entries.items():
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in [{name}]", lineno, key)
        out[key] = _value(val, keys[key], key, lineno)
    for key, spec in keys.items():
        if key in out:
            continue
        if spec.default is REQUIRED:
            raise ConfigError(f"missing required key {key!r} in [{name}]", header_line, key)
        out[key] = spec.default
    return out


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
