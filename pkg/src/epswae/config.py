"""Flat ``section.key = value`` configuration files.

Lines look like ``train.epochs = 100``; ``#`` starts a comment. Every key
must already exist in :data:`DEFAULTS`, and its value is parsed to the
default's type. List values are comma-separated.
"""

from __future__ import annotations

import copy
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "data.n_samples": 10000,
    "data.turns": 3.0,
    "data.radius": 1.0,
    "data.height": 3.0,
    "data.radius_profile": "constant",
    "data.noise_fraction": 0.1,
    "data.ambient_dim": 40,
    "data.seed": 0,

    "train.mode": "epswae",
    "train.epochs": 100,
    "train.batch_size": 100,
    "train.lr": 1e-3,
    "train.k1": 1,
    "train.k2": 2,
    "train.alpha": 1.0,
    "train.beta": 0.1,
    "train.kappa": 0.01,
    "train.p": 2,
    "train.L": 5,
    "train.M": 50,
    "train.nonlinearity": "sine_shear",
    "train.full_basis": False,
    "train.latent_dim": 3,
    "train.hidden": 40,
    "train.prior_input_dim": 40,
    "train.fsc_enabled": True,
    "train.pe_resample_data": True,
    "train.seed": 0,

    "eval.seed": 20240917,
    "eval.kind": "sine_shear",

    "geodesic.method": "geodesic",
    "geodesic.k": 5,
    "geodesic.h": 2.0,
    "geodesic.n_samples": 400,
    "geodesic.prior_samples": 0,
    "geodesic.n_points": 10,
    "geodesic.t0": 1.0,
    "geodesic.growth_factor": 1.1,
    "geodesic.t_max": 1000.0,
    "geodesic.directed": False,
    "geodesic.densify": False,
    "geodesic.seed": 0,

    "bench.dims": [3, 10, 40],
    "bench.kinds": ["sine_shear", "cubic", "quintic"],
    "bench.reps": 1000,
    "bench.n": 100,
    "bench.L": 5,
    "bench.M": 50,
    "bench.full_basis": False,
    "bench.seed": 0,
    "bench.loss_kinds": ["identity", "sine_shear", "cubic", "quintic"],
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_scalar(text, like, key):
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return text


def parse_value(key, text):
    """Parse ``text`` to the type of ``DEFAULTS[key]``."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    like = DEFAULTS[key]
    text = text.strip()
    if isinstance(like, list):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return [_parse_scalar(t, like[0], key) for t in items]
    return _parse_scalar(text, like, key)


def parse_text(text, source="<string>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}: line {lineno}: {exc}") from None
    return out


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def resolve(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg.update(load(path))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
    return cfg


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg):
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.items())


def section(cfg, name):
    """Keys under ``name.`` with the prefix removed."""
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}
