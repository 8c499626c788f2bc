"""Run configuration: `section.key = value` text files plus overrides."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .frontend import ConfigError, FrontendConfig


@dataclass(frozen=True)
class NmfConfig:
    rank: int = 20
    iters: int = 500
    project_iters: int = 500
    tol: float | None = None
    n_quantiles: int = 100

    def __post_init__(self):
        _positive(self, "nmf", "rank", "iters", "n_quantiles")
        if self.project_iters < 0:
            raise ConfigError("nmf.project_iters must be >= 0")


@dataclass(frozen=True)
class GmmConfig:
    mixtures: int = 128
    em_iters: int = 20
    covariance_kind: str = "diag"

    def __post_init__(self):
        _positive(self, "gmm", "mixtures")
        if self.em_iters < 0:
            raise ConfigError("gmm.em_iters must be >= 0")
        if self.covariance_kind not in ("diag", "full"):
            raise ConfigError(f"gmm.covariance_kind must be 'diag' or 'full', got {self.covariance_kind!r}")


@dataclass(frozen=True)
class HeqConfig:
    n_quantiles: int = 100
    mode: str = "per-utterance"

    def __post_init__(self):
        _positive(self, "heq", "n_quantiles")
        if self.mode not in ("per-utterance", "given"):
            raise ConfigError(f"heq.mode must be 'per-utterance' or 'given', got {self.mode!r}")


@dataclass(frozen=True)
class SpliceConfig:
    refine_iters: int = 3
    use_adapted_posteriors: bool = True

    def __post_init__(self):
        if self.refine_iters < 0:
            raise ConfigError("splice.refine_iters must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    nmf: NmfConfig = field(default_factory=NmfConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    heq: HeqConfig = field(default_factory=HeqConfig)
    splice: SpliceConfig = field(default_factory=SpliceConfig)
    seed: int = 0
    workers: int = 1

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _positive(obj, section, *names):
    for name in names:
        if getattr(obj, name) < 1:
            raise ConfigError(f"{section}.{name} must be >= 1, got {getattr(obj, name)}")


def _coerce(raw: str, hint, key: str):
    text = raw.strip()
    args = typing.get_args(hint)
    if args and type(None) in args:
        if text.lower() in ("none", "null", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_assignments(lines, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(assignments: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply `section.key` (or top-level `key`) assignments to a RunConfig."""
    base = base or RunConfig()
    top_hints = _hints(RunConfig)
    sections: dict[str, dict] = {}
    top: dict = {}
    for key, raw in assignments.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in top_hints or not dataclasses.is_dataclass(top_hints[section]):
                raise ConfigError(f"{key}: unknown section {section!r}")
            hints = _hints(top_hints[section])
            if name not in hints:
                raise ConfigError(f"{key}: unknown field")
            sections.setdefault(section, {})[name] = _coerce(raw, hints[name], key)
        else:
            if key not in top_hints or dataclasses.is_dataclass(top_hints[key]):
                raise ConfigError(f"{key}: unknown field")
            top[key] = _coerce(raw, top_hints[key], key)
    updates = dict(top)
    for section, values in sections.items():
        try:
            updates[section] = dataclasses.replace(getattr(base, section), **values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    cfg = dataclasses.replace(base, **updates)
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    assignments = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        assignments.update(parse_assignments(path.read_text(encoding="utf-8").splitlines(), str(path)))
    assignments.update(overrides or {})
    return build_config(assignments)
