"""Experiment configuration: a flat ``key = value`` text format.

Grammar::

    file     := line*
    line     := blank | comment | section | entry
    comment  := '#' anything
    section  := '[' name ']'
    entry    := key '=' value [ '#' comment ]

Lists are comma separated.  In ``[run] epsilons`` the token ``averaged``
stands for eps = 0.  ``[scenario] model`` names another file whose
``[model]`` section is read first; the including file's own ``[model]``
entries override it.  Relative paths resolve against the including file.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import os
from dataclasses import dataclass, field
from pathlib import Path

from .morris_lecar import MLParameters
from .seeding import check_seed
from .system import DEFAULT_KAPPA


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None, key: str | None = None):
        self.message = message
        self.line = line
        self.source = source
        self.key = key
        where = source or "<config>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


def _float(text):
    return float(text)


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _floats(text):
    return tuple(float(x) for x in _items(text))


def _items(text):
    items = [x.strip() for x in text.split(",")]
    if any(not x for x in items):
        raise ValueError("empty list item")
    return items


def parse_epsilons(text):
    out = []
    for item in _items(text):
        out.append(0.0 if item.lower() == "averaged" else float(item))
    return tuple(out)


def _channels(text):
    if text.strip().lower() == "all":
        return None
    return tuple(_int(x) for x in _items(text))


def _engine(text):
    if text not in ("pdmp", "langevin"):
        raise ValueError("engine must be 'pdmp' or 'langevin'")
    return text


_MODEL_KEYS = {f.name: (int if f.type in ("int", int) else float) for f in dataclasses.fields(MLParameters)}

# section -> key -> (attribute, converter)
_SCHEMA = {
    "scenario": {"name": ("scenario", str), "model": ("model_file", str)},
    "run": {
        "epsilons": ("epsilons", parse_epsilons),
        "replicas": ("replicas", _int),
        "K": ("K", _int),
        "h": ("h", _float),
        "h_max": ("h_max", _float),
        "kappa": ("kappa", _float),
        "T": ("T", _float),
        "output_dt": ("output_dt", _float),
        "seed": ("seed", _int),
        "out": ("out_dir", str),
        "workers": ("workers", _int),
        "probes": ("probes", _floats),
        "engine": ("engine", _engine),
    },
    "clt": {
        "epsilon": ("clt_eps", _float),
        "times": ("clt_times", _floats),
        "replicas": ("clt_replicas", _int),
        "channels": ("clt_channels", _channels),
        "freeze_time": ("clt_freeze_time", _float),
    },
    "phi": {
        "instances": ("phi_instances", _int),
        "max_states": ("phi_max_states", _int),
        "tolerance": ("phi_tolerance", _float),
        "residual_tolerance": ("phi_residual_tolerance", _float),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "morris_lecar"
    model_file: str | None = None
    params: MLParameters = field(default_factory=MLParameters)
    epsilons: tuple[float, ...] = (1.0, 0.1, 0.01, 0.001, 0.0001)
    replicas: int = 1
    K: int = 64
    h: float = 1e-4
    h_max: float = 1e-4
    kappa: float = DEFAULT_KAPPA
    T: float = 2.4
    output_dt: float = 0.01
    seed: int = 0
    out_dir: str = "results"
    workers: int = 1
    probes: tuple[float, ...] = (0.05, 0.25, 0.5, 0.75)
    engine: str = "pdmp"
    clt_eps: float = 1e-3
    clt_times: tuple[float, ...] = (0.5, 1.0)
    clt_replicas: int = 10000
    clt_channels: tuple[int, ...] | None = None
    clt_freeze_time: float = 2.4
    phi_instances: int = 100
    phi_max_states: int = 6
    phi_tolerance: float = 1e-9
    phi_residual_tolerance: float = 1e-12

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def stochastic_epsilons(self) -> tuple[float, ...]:
        return tuple(e for e in self.epsilons if e > 0)


def validate(cfg: ExperimentConfig):
    def fail(msg, key):
        raise ConfigError(msg, key=key)

    if not cfg.epsilons:
        fail("epsilon list is empty", "epsilons")
    for e in cfg.epsilons:
        if not 0 <= e <= 1:
            fail(f"epsilon {e} outside (0, 1] (use 'averaged' for 0)", "epsilons")
    if cfg.replicas < 1:
        fail("replica count must be at least 1", "replicas")
    if cfg.K < 1:
        fail("K must be positive", "K")
    for key in ("h", "h_max", "kappa", "T", "output_dt", "clt_eps"):
        if getattr(cfg, key) <= 0:
            fail(f"{key} must be positive", key)
    if cfg.workers < 1:
        fail("workers must be at least 1", "workers")
    if cfg.clt_replicas < 2:
        fail("clt replicas must be at least 2", "clt_replicas")
    if any(t <= 0 for t in cfg.clt_times) or not cfg.clt_times:
        fail("clt times must be positive", "clt_times")
    if cfg.phi_instances < 1 or cfg.phi_max_states < 2:
        fail("phi check needs instances >= 1 and max_states >= 2", "phi_instances")
    if not 0 <= cfg.clt_freeze_time <= cfg.T:
        fail("freeze_time must lie in [0, T]", "clt_freeze_time")
    if any(not 0 < x < 1 for x in cfg.probes):
        fail("probes must lie in (0, 1)", "probes")
    try:
        check_seed(cfg.seed)
    except ValueError as exc:
        fail(str(exc), "seed")


def _parse_lines(text: str, source: str):
    """Yield ``(line number, section, key, value)`` entries."""
    section = None
    seen = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", n, source)
            section = line[1:-1].strip()
            if section not in _SCHEMA and section != "model":
                raise ConfigError(f"unknown section [{section}]", n, source)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, source)
        if section is None:
            raise ConfigError("entry outside any section", n, source)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError("empty key or value", n, source)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[section, key]})", n, source)
        seen[section, key] = n
        yield n, section, key, value


def _model_entries(text: str, source: str, into: dict, lines: dict):
    for n, section, key, value in _parse_lines(text, source):
        if section != "model":
            continue
        if key not in _MODEL_KEYS:
            raise ConfigError(f"unknown model parameter {key!r}", n, source)
        try:
            into[key] = _MODEL_KEYS[key](_int(value) if _MODEL_KEYS[key] is int else value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", n, source) from None
        lines[key] = (n, source)


def parse_config(text: str, source: str = "<config>", base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    values = {}
    line_of = {}
    model = {}
    model_lines = {}
    entries = list(_parse_lines(text, source))
    for n, section, key, value in entries:
        if section == "model":
            continue
        schema = _SCHEMA[section]
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{section}]", n, source)
        attr, conv = schema[key]
        try:
            values[attr] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", n, source) from None
        line_of[attr] = n
    if "model_file" in values:
        path = Path(values["model_file"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        try:
            model_text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read model file {str(path)!r}: {exc.strerror}", line_of["model_file"], source) from None
        _model_entries(model_text, str(path), model, model_lines)
    _model_entries(text, source, model, model_lines)
    try:
        params = MLParameters(**model)
    except (TypeError, ValueError) as exc:
        n, src = next(iter(model_lines.values()), (None, source))
        raise ConfigError(f"invalid model parameters: {exc}", n, src) from None
    values["params"] = params
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(exc.message, line_of.get(exc.key), source, exc.key) from None


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)


def default_config_text() -> str:
    return importlib.resources.files("pdmpfluct").joinpath("morris_lecar.cfg").read_text()


def default_config() -> ExperimentConfig:
    return parse_config(default_config_text(), "morris_lecar.cfg")
