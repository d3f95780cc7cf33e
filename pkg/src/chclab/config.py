"""Experiment config files: a small versioned JSON schema.

Unknown keys anywhere in the file are hard errors, and validation collects
every violation before raising so a config with three typos reports all
three.  The canonical hash covers the config exactly as validated (defaults
filled in), so two files that mean the same experiment hash identically.
"""

from __future__ import annotations

import hashlib
import json

SCHEMA_VERSION = 1

_COMMANDS = (
    "simulate",
    "converge-time",
    "converge-space",
    "converge-galerkin",
    "regularity",
    "verify-operators",
)

_NOISE_KINDS = ("trace-class-power", "white", "custom")
_PRESETS = ("zero", "single-mode", "smooth-random", "grid-file")
_SOLVERS = ("fixed_point", "newton")


class ConfigError(ValueError):
    """Carries the full list of violations, one string per problem."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# section -> key -> (checker, default).  A default of _REQUIRED means the key
# must be present whenever its section is.
_REQUIRED = object()


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


def _pos_int(v):
    return _is_int(v) and v > 0


def _pos_num(v):
    return _is_num(v) and v > 0


def _nonneg_num(v):
    return _is_num(v) and v >= 0


def _num_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_is_num(x) for x in v)


def _int_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_pos_int(x) for x in v)


_SCHEMA = {
    "domain": {
        "dim": (lambda v: v in (1, 2, 3), 1),
        "modes_per_axis": (_pos_int, 64),
        "lengths": (_num_list, None),
    },
    "noise": {
        "kind": (lambda v: v in _NOISE_KINDS, "trace-class-power"),
        "s": (_nonneg_num, 2.5),
        "q0": (_nonneg_num, 0.0),
        "q": (_num_list, None),
    },
    "initial": {
        "preset": (lambda v: v in _PRESETS, "zero"),
        "index": (_pos_int, 1),
        "amplitude": (_is_num, 1.0),
        "decay": (_nonneg_num, 2.0),
        "path": (lambda v: isinstance(v, str), None),
    },
    "scheme": {
        "M": (_pos_int, 256),
        "N": (_pos_int, 64),
        "T": (_pos_num, 1.0),
        "solver": (lambda v: v in _SOLVERS, "fixed_point"),
        "tol": (_pos_num, 1e-12),
        "max_iters": (_pos_int, 100),
    },
    "study": {
        "levels_M": (_int_list, None),
        "levels_N": (_int_list, None),
        "reference_M": (_pos_int, None),
        "reference_N": (_pos_int, None),
        "n_paths": (_pos_int, 64),
        "p": (lambda v: _is_num(v) and v >= 1, 2.0),
        "gamma": (_pos_num, None),
        "betas": (_num_list, [0.0]),
    },
    "output": {
        "dir": (lambda v: isinstance(v, str), "out"),
        "thin": (_pos_int, 1),
        "fields": (lambda v: isinstance(v, bool), False),
    },
}

_TOP_KEYS = {
    "schema_version": (lambda v: v == SCHEMA_VERSION, _REQUIRED),
    "command": (lambda v: v in _COMMANDS, _REQUIRED),
    "seed": (lambda v: _is_int(v) and v >= 0, 0),
    "workers": (_pos_int, 1),
}


def validate_config(raw: dict) -> dict:
    """Return a fully defaulted copy of raw, or raise ConfigError with every
    violation found.  raw is not modified."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError([f"config root must be an object, got {type(raw).__name__}"])

    cfg = {}
    for key, (check, default) in _TOP_KEYS.items():
        if key not in raw:
            if default is _REQUIRED:
                problems.append(f"missing required key '{key}'")
            else:
                cfg[key] = default
            continue
        if not check(raw[key]):
            problems.append(f"bad value for '{key}': {raw[key]!r}")
        else:
            cfg[key] = raw[key]

    for section, keys in _SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            problems.append(f"section '{section}' must be an object")
            given = {}
        out = {}
        for key, (check, default) in keys.items():
            if key not in given:
                if default is not None:
                    out[key] = default
                continue
            if not check(given[key]):
                problems.append(f"bad value for '{section}.{key}': {given[key]!r}")
            else:
                out[key] = given[key]
        for key in given:
            if key not in keys:
                problems.append(f"unknown key '{section}.{key}'")
        cfg[section] = out

    for key in raw:
        if key not in _TOP_KEYS and key not in _SCHEMA:
            problems.append(f"unknown key '{key}'")

    if problems:
        raise ConfigError(problems)
    return cfg


def config_hash(cfg: dict) -> str:
    """sha256 over the canonical JSON encoding (sorted keys, no whitespace)."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from exc
    return validate_config(raw)
