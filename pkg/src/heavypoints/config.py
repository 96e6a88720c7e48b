"""Flat key=value experiment configuration.

The format is deliberately dumb: a `version=1` line followed by
`key=value` pairs, one per line, `#` comments allowed.  Every field of
ExperimentConfig has a default, serialization writes all fields in
declaration order, and parsing rejects unknown keys, so
parse(serialize(cfg)) == cfg exactly (floats round-trip via repr).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

from .errors import ConfigError

CONFIG_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "simple"        # "simple" or path to a model file
    dim: int = 3
    steps: int = 1000000
    horizon_factor: float = 10.0
    seeds: int = 1               # replica count (streams 0..seeds-1)
    seed: int = 0                # base RNG seed
    green_tol: float = 1e-08
    delta: float = 0.0
    radius: float = 2.0
    eps: float = 0.25
    # subcommand-specific knobs, carried so an archived config replays
    # jointlaw / thm13 / estimate runs too
    site: str = "1,0,0"
    kmax: int = 15
    jmax: int = 40
    c: float = 1.0
    outdir: str = ""

    def to_text(self) -> str:
        lines = [f"version={CONFIG_VERSION}"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={v!r}" if isinstance(v, str)
                         else f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    ftype = _FIELD_TYPES[name]
    try:
        if ftype == "int":
            if "." in raw or "e" in raw.lower():
                raise ValueError("not an integer literal")
            return int(raw)
        if ftype == "float":
            return float(raw)
        # str: accept repr-quoted or bare
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
            return raw[1:-1]
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r} ({exc})") from exc


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    saw_version = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected key=value, got {s!r}")
        key, _, raw = s.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not saw_version:
            if key != "version":
                raise ConfigError("first entry must be version=1")
            if raw != str(CONFIG_VERSION):
                raise ConfigError(f"unsupported config version {raw!r}")
            saw_version = True
            continue
        if key == "version":
            raise ConfigError("duplicate version line")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    if not saw_version:
        raise ConfigError("missing version=1 header")
    return ExperimentConfig(**values)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text)


def save_config(cfg: ExperimentConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(cfg.to_text())
