"""Flat ``key = value`` configuration files with dotted namespaces.

Namespaces: ``train.*`` holds every :class:`RunConfig` field, ``multi.*`` the
multi-task settings, ``ablate.*``, ``eval.*``, ``dump.*`` and ``selftest.*``
the verb-specific knobs. Unknown keys are rejected. ``format_config`` writes
every key, so a written snapshot resolves to the same configuration.

Values: integers, floats, ``true``/``false``, ``none`` for optional numbers,
and comma-separated lists for tuples. ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .multitask import ABLATIONS, MultiTaskConfig
from .trainer import RunConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _opt_int(s: str) -> Optional[int]:
    return None if s.strip().lower() == "none" else int(s)


def _opt_str(s: str) -> Optional[str]:
    v = s.strip()
    return None if v.lower() in ("", "none") else v


def _int_tuple(s: str) -> tuple:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _str_tuple(s: str) -> tuple:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_BY_ANNOTATION: dict[str, Callable[[str], object]] = {
    "str": str, "int": int, "float": float, "bool": _bool, "tuple": _int_tuple,
    "Optional[int]": _opt_int, "Optional[str]": _opt_str,
}


@dataclass
class AblateSettings:
    flags: tuple = ("teacher_forcing", "soft_hints", "augment")
    mode: str = "cumulative"
    seeds: tuple = (0, 1, 2)
    target: str = "multi"


@dataclass
class EvalSettings:
    checkpoint: Optional[str] = None
    algorithms: tuple = ()
    multi: bool = False


@dataclass
class DumpSettings:
    count: int = 100
    n: Optional[int] = None
    split: str = "train"


@dataclass
class SelftestSettings:
    suites: tuple = ("sinkhorn", "gradients", "oracles", "equivariance")


@dataclass
class Config:
    train: RunConfig = field(default_factory=RunConfig)
    multi: MultiTaskConfig = field(default_factory=MultiTaskConfig)
    ablate: AblateSettings = field(default_factory=AblateSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    dump: DumpSettings = field(default_factory=DumpSettings)
    selftest: SelftestSettings = field(default_factory=SelftestSettings)

    def multi_config(self) -> MultiTaskConfig:
        return self.multi.replace(base=self.train)


# Per-namespace field parsers; string tuples need explicit handling.
_STR_TUPLES = {("multi", "tasks"), ("ablate", "flags"), ("eval", "algorithms"), ("selftest", "suites")}
_SKIP = {("multi", "base")}


def _schema() -> dict[str, Callable[[str], object]]:
    out = {}
    for ns in dataclasses.fields(Config):
        cls = {"train": RunConfig, "multi": MultiTaskConfig, "ablate": AblateSettings, "eval": EvalSettings,
               "dump": DumpSettings, "selftest": SelftestSettings}[ns.name]
        for f in dataclasses.fields(cls):
            if (ns.name, f.name) in _SKIP:
                continue
            if (ns.name, f.name) in _STR_TUPLES:
                parser = _str_tuple
            else:
                parser = _BY_ANNOTATION[str(f.type)]
            out[f"{ns.name}.{f.name}"] = parser
    return out


SCHEMA = _schema()


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value string`` pairs; rejects malformed lines and duplicates."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in body.split("=", 1))
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, value = (p.strip() for p in item.split("=", 1))
    return key, value


def resolve(raw: dict[str, str]) -> Config:
    """Typed configuration from raw pairs; defaults fill unspecified keys."""
    values: dict[str, dict] = {}
    for key, text in raw.items():
        parser = SCHEMA.get(key)
        if parser is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            v = parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        ns, name = key.split(".", 1)
        values.setdefault(ns, {})[name] = v
    try:
        train = RunConfig(**values.get("train", {}))
        multi = MultiTaskConfig(**values.get("multi", {}), base=train)
        cfg = Config(train, multi, AblateSettings(**values.get("ablate", {})),
                     EvalSettings(**values.get("eval", {})), DumpSettings(**values.get("dump", {})),
                     SelftestSettings(**values.get("selftest", {})))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    unknown = [a for a in cfg.ablate.flags if a not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation flag(s) {unknown}; known: {sorted(ABLATIONS)}")
    if cfg.ablate.mode not in ("cumulative", "independent"):
        raise ConfigError("ablate.mode must be cumulative or independent")
    if cfg.ablate.target not in ("single", "multi"):
        raise ConfigError("ablate.target must be single or multi")
    if cfg.dump.split not in ("train", "eval"):
        raise ConfigError("dump.split must be train or eval")
    return cfg


def load(path: Optional[str] = None, overrides: tuple = ()) -> Config:
    raw: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        raw.update(parse_text(text, path))
    for item in overrides:
        k, v = parse_override(item)
        raw[k] = v
    return resolve(raw)


def as_flat(cfg: Config) -> dict[str, object]:
    out = {}
    for key in SCHEMA:
        ns, name = key.split(".", 1)
        out[key] = getattr(getattr(cfg, ns), name)
    return out


def format_config(cfg: Config) -> str:
    """Every key with its resolved value, one per line, sorted."""
    flat = as_flat(cfg)
    return "".join(f"{k} = {_fmt(flat[k])}\n" for k in sorted(flat))
