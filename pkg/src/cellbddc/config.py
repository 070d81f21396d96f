"""Plain-text ``key = value`` configuration files.

Blank lines and text after ``#`` are ignored.  Keys not listed in
:data:`RUN_KEYS` or :data:`OPTION_KEYS` are rejected, so typos do not pass
silently.  List-valued options take whitespace or comma separated values.
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from .ionic import IonicParams
from .mesh import GeometryConfig
from .simulation import RunConfig

__all__ = ["parse_config", "load_config", "RUN_KEYS", "OPTION_KEYS", "ConfigError"]


class ConfigError(ValueError):
    pass


_GEOMETRY = {f.name: f for f in fields(GeometryConfig)}
_IONIC = {f.name: f for f in fields(IonicParams)}
_RUN = {f.name: f for f in fields(RunConfig) if f.name not in ("geometry", "ionic")}
RUN_KEYS = tuple(_GEOMETRY) + tuple(_IONIC) + tuple(_RUN)

# options used by the command line experiments, not by the simulation itself
OPTION_KEYS = {
    "steps": int,          # time steps per benchmark row (default: t_end / tau)
    "cells": list,         # weak-scaling lattice sizes
    "lcy": list,           # optimality refinement levels
    "taus": list,          # time-step sweep
    "samples": int,        # random samples per bound configuration
    "seed": int,
    "bound_lcy": list,     # H/h = 6 Lcy for the bound check
    "bound_taus": list,
    "record_every": int,
    "figures": bool,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _as_bool(s: str) -> bool:
    t = s.lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _convert(key: str, text: str, kind):
    if kind is bool or kind == "bool":
        return _as_bool(text)
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    if kind is list:
        return [float(t) if any(c in t for c in ".eE") else int(t) for t in text.replace(",", " ").split()]
    if kind is tuple or "tuple" in str(kind):
        return tuple(int(t) for t in text.replace(",", " ").split())
    if "None" in str(kind) and text.lower() == "none":
        return None
    if "int" in str(kind):
        return int(text)
    if "float" in str(kind):
        return float(text)
    return text


def parse_config(text: str, base: RunConfig | None = None) -> tuple[RunConfig, dict]:
    """Parse configuration text into a :class:`RunConfig` and a dict of experiment options."""
    geo, ion, run, opts = {}, {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key in _GEOMETRY:
                geo[key] = _convert(key, val, _GEOMETRY[key].type)
            elif key in _IONIC:
                ion[key] = _convert(key, val, _IONIC[key].type)
            elif key in _RUN:
                run[key] = _convert(key, val, _RUN[key].type)
            elif key == "out":
                run["out_dir"] = val
            elif key in OPTION_KEYS:
                opts[key] = _convert(key, val, OPTION_KEYS[key])
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    base = base or RunConfig()
    try:
        cfg = replace(base, geometry=replace(base.geometry, **geo), ionic=replace(base.ionic, **ion), **run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, opts


def load_config(path, base: RunConfig | None = None) -> tuple[RunConfig, dict]:
    return parse_config(Path(path).read_text(), base)
