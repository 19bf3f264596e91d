"""INI-style run configuration.

Sections map onto dataclasses::

    [synth]               SynthSpec
    [data]                DataConfig
    [train]               TrainConfig scalars
    [train.trainability]  Trainability
    [train.lorentzian]    LorentzianConfig (targets come from the pipeline)
    [sweep]               SweepGrid

Every key is optional.  Unknown sections or keys raise ConfigError.
Integer lists accept ranges, e.g. ``n_filters = 2-19`` or ``1, 2, 4``.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datacube import SynthSpec
from .sweep import DataConfig, SweepGrid
from .train import LorentzianConfig, TrainConfig, Trainability


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepGrid = field(default_factory=SweepGrid)

    def to_dict(self) -> dict:
        d = {"synth": asdict(self.synth), "data": asdict(self.data), "sweep": asdict(self.sweep)}
        t = asdict(self.train)
        t["lorentzian"].pop("targets", None)
        d["train"] = t
        return d


_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _parse_bool(text):
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {text!r}") from None


def parse_int_list(text):
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _parse_value(text, default):
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text
    if isinstance(default, tuple):
        if default and all(isinstance(v, int) for v in default):
            return parse_int_list(text)
        if default and all(isinstance(v, str) for v in default):
            return tuple(p.strip() for p in text.split(",") if p.strip())
        return tuple(float(p) for p in text.split(",") if p.strip())
    raise ConfigError(f"cannot parse {text!r}")


def _apply(obj, section: configparser.SectionProxy, skip=()):
    known = {f.name for f in fields(obj)} - set(skip)
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{section.name}] unknown key {key!r}; known: {', '.join(sorted(known))}")
        try:
            updates[key] = _parse_value(raw, getattr(obj, key))
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from None
    try:
        return replace(obj, **updates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section.name}] {exc}") from None


SECTIONS = ("synth", "data", "train", "train.trainability", "train.lorentzian", "sweep")


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keys are case-sensitive (the Lorentzian width is "A")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; known: {', '.join(SECTIONS)}")
    cfg = RunConfig()
    if cp.has_section("synth"):
        cfg.synth = _apply(cfg.synth, cp["synth"])
    if cp.has_section("data"):
        cfg.data = _apply(cfg.data, cp["data"])
    if cp.has_section("sweep"):
        cfg.sweep = _apply(cfg.sweep, cp["sweep"])
    train = cfg.train
    if cp.has_section("train.trainability"):
        train = replace(train, trainability=_apply(train.trainability, cp["train.trainability"]))
    if cp.has_section("train.lorentzian"):
        train = replace(train, lorentzian=_apply(train.lorentzian, cp["train.lorentzian"],
                                                 skip=("targets",)))
    if cp.has_section("train"):
        train = _apply(train, cp["train"], skip=("trainability", "lorentzian"))
    cfg.train = train
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``."""
    d = cfg.to_dict()
    lines = []
    for name in ("synth", "data", "sweep"):
        lines.append(f"[{name}]")
        lines += [f"{k} = {_fmt(v)}" for k, v in d[name].items()]
        lines.append("")
    tr = d["train"]
    lines.append("[train]")
    lines += [f"{k} = {_fmt(v)}" for k, v in tr.items() if k not in ("trainability", "lorentzian")]
    lines.append("")
    for sub in ("trainability", "lorentzian"):
        lines.append(f"[train.{sub}]")
        lines += [f"{k} = {_fmt(v)}" for k, v in tr[sub].items()]
        lines.append("")
    return "\n".join(lines)


def default_config() -> RunConfig:
    return RunConfig()


__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "dump_config",
           "default_config", "LorentzianConfig", "Trainability"]
