"""Flat key=value run configuration.

A config file is plain text: one ``section.field=value`` pair per
line, ``#`` starts a comment, blank lines are ignored. Sections map to
the dataclasses that drive a run:

    model.*   ModelConfig        (model.seed doubles as the run seed)
    match.*   MatchConfig        (costs and loss coefficients)
    task.*    TaskConfig         (synthetic data)
    train.*   TrainConfig        (optimizer, schedule, logging)

Every field of those dataclasses is addressable; unknown keys are an
error, not a warning, so typos cannot silently fall back to defaults.
``effective_text`` renders the complete resolved configuration in the
same syntax, and parsing that text back reproduces the config exactly.
"""

from __future__ import annotations

import dataclasses
import inspect
from dataclasses import dataclass, field

from .matching import MatchConfig
from .model import ModelConfig
from .synthetic import TaskConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "parse_pairs", "load_run_config",
           "effective_text", "flat_dict"]


class ConfigError(ValueError):
    """Bad key, bad value, or inconsistent configuration."""


@dataclass
class RunConfig:
    """One run's full configuration.

    Construction aligns the task geometry (classes, frames, frame
    size) to the model so the defaults are coherent; key application
    happens afterwards, and validate() demands that any later
    divergence is resolved by setting both sides explicitly.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.task = dataclasses.replace(
            self.task, n_classes=self.model.n_classes,
            n_frames=self.model.n_frames, frame_h=self.model.frame_h,
            frame_w=self.model.frame_w)

    def validate(self):
        self.model.validate()
        self.task.validate()
        self.train.validate()
        pairs = [("n_classes", self.model.n_classes, self.task.n_classes),
                 ("n_frames", self.model.n_frames, self.task.n_frames),
                 ("frame_h", self.model.frame_h, self.task.frame_h),
                 ("frame_w", self.model.frame_w, self.task.frame_w)]
        for name, m, t in pairs:
            if m != t:
                raise ConfigError(
                    f"model.{name}={m} disagrees with task.{name}={t}; "
                    "set both explicitly")
        if self.train.batch_size > self.train.n_clips:
            raise ConfigError("train.batch_size cannot exceed train.n_clips")
        return self


def _sections(run: RunConfig) -> list:
    return [("model", run.model), ("match", run.model.match),
            ("task", run.task), ("train", run.train)]


_SECTION_CLASSES = (("model", ModelConfig), ("match", MatchConfig),
                    ("task", TaskConfig), ("train", TrainConfig))


def _field_index():
    """key -> (section, field name, default). Constructor signatures
    are the single source of truth; the nested MatchConfig is its own
    'match' section rather than a model field."""
    index = {}
    for prefix, cls in _SECTION_CLASSES:
        for name, param in inspect.signature(cls.__init__).parameters.items():
            if name in ("self", "match"):
                continue
            index[f"{prefix}.{name}"] = (prefix, name, param.default)
    return index


_INDEX = _field_index()
_PARAMS = {prefix: [name for (p, name, _) in _INDEX.values() if p == prefix]
           for prefix, _ in _SECTION_CLASSES}


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _convert(key: str, raw: str, default):
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        raw = raw.strip()
        return tuple(int(part) for part in raw.split(",") if part.strip()) if raw else ()
    if isinstance(default, str):
        return raw
    raise ConfigError(f"key '{key}' has unsupported type {type(default).__name__}")


def parse_pairs(text: str, source: str = "config") -> dict:
    """Parse key=value lines into an ordered {key: raw string} map."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {stripped!r}")
        key, raw = stripped.split("=", 1)
        pairs[key.strip()] = raw.strip()
    return pairs


def _apply(run: RunConfig, pairs: dict, source: str):
    """Apply raw pairs, then rebuild every section through its
    constructor so __init__-time validation always fires."""
    values = {section: {name: getattr(obj, name) for name in _PARAMS[section]}
              for section, obj in _sections(run)}
    for key, raw in pairs.items():
        if key not in _INDEX:
            known = ", ".join(sorted(_INDEX))
            raise ConfigError(f"{source}: unknown key '{key}' (known keys: {known})")
        section, name, default = _INDEX[key]
        try:
            values[section][name] = _convert(key, raw, default)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: bad value for '{key}': {exc}") from exc
    try:
        run.model = ModelConfig(match=MatchConfig(**values["match"]),
                                **values["model"])
        run.task = TaskConfig(**values["task"])
        run.train = TrainConfig(**values["train"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_run_config(path=None, overrides=(), seed: int = None,
                    threads: int = None) -> RunConfig:
    """Defaults, then the file, then override pairs, then the explicit
    seed/threads flags; validated as a whole."""
    run = RunConfig()
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        _apply(run, parse_pairs(text, source=str(path)), source=str(path))
    merged = {}
    for item in overrides:
        merged.update(parse_pairs(item, source="--override"))
    _apply(run, merged, source="--override")
    if seed is not None:
        run.model.seed = int(seed)
    if threads is not None:
        run.train.threads = int(threads)
    try:
        run.validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return run


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def flat_dict(run: RunConfig) -> dict:
    """The full configuration as {key: rendered string}, sorted."""
    out = {}
    for prefix, obj in _sections(run):
        for name in _PARAMS[prefix]:
            out[f"{prefix}.{name}"] = _render(getattr(obj, name))
    return dict(sorted(out.items()))


def effective_text(run: RunConfig) -> str:
    """The resolved config as parseable key=value text."""
    lines = ["# effective configuration (all keys explicit)"]
    lines += [f"{key}={value}" for key, value in flat_dict(run).items()]
    return "\n".join(lines) + "\n"
