"""Key-value configuration files.

One INI file controls the layout, the codec, decoding, network shape and
training. Every section and key is optional; missing values fall back to the
library defaults::

    [layout]
    key = 7
    M = 8
    N = 8

    [codec]
    q = 3
    embed_scale = 3
    pairs = 0:8, 1:9, 2:10, 3:11, 4:12, 5:13, 6:14, 7:15

    [decode]
    refine_steps = 0
    compensate = true

    [net]
    template = 64
    gen_channels = 128, 64, 32

    [train]
    lr = 0.001
    batch = 32
    lam = 0.2
"""

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from . import qim
from .nets import NetConfig
from .pipeline import PipelineConfig
from .training import TrainConfig


@dataclass(frozen=True)
class Settings:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _convert(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [v.strip() for v in raw.split(",") if v.strip()]
        kind = type(default[0]) if default else float
        return tuple(kind(float(v)) if kind is int else kind(v) for v in items)
    return raw


def _apply(obj, section, skip=()):
    """Replace dataclass fields of ``obj`` with values from an INI section."""
    known = {f.name: f for f in fields(obj) if f.name not in skip}
    lower = {name.lower(): name for name in known}
    updates = {}
    for key, raw in section.items():
        name = lower.get(key.lower())
        if name is None:
            raise ValueError(f"unknown key {key!r} in section [{section.name}]")
        updates[name] = _convert(raw, getattr(obj, name))
    return replace(obj, **updates)


def parse_pairs(text: str):
    pairs = []
    for item in text.split(","):
        a, b = item.split(":")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


def from_parser(cp: configparser.ConfigParser) -> Settings:
    known = {"layout", "codec", "decode", "net", "train", "DEFAULT"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValueError(f"unknown config sections {sorted(extra)}")
    pipe = PipelineConfig()
    if cp.has_section("layout"):
        pipe = _apply(pipe, cp["layout"], skip=("codec", "refine_steps", "compensate"))
    if cp.has_section("decode"):
        pipe = _apply(pipe, cp["decode"], skip=("codec", "key", "M", "N"))
    if cp.has_section("codec"):
        sec = dict(cp["codec"])
        pairs = sec.pop("pairs", None)
        codec = qim.QimConfig(
            q=float(sec.pop("q", pipe.codec.q)),
            embed_scale=int(sec.pop("embed_scale", pipe.codec.embed_scale)),
            scales=int(sec.pop("scales", pipe.codec.scales)),
            coarse_angles=int(sec.pop("coarse_angles", pipe.codec.coarse_angles)),
            pairs=parse_pairs(pairs) if pairs else None,
        )
        if sec:
            raise ValueError(f"unknown keys {sorted(sec)} in section [codec]")
        pipe = replace(pipe, codec=codec)
    net = _apply(NetConfig(), cp["net"]) if cp.has_section("net") else NetConfig()
    train = _apply(TrainConfig(), cp["train"]) if cp.has_section("train") else TrainConfig()
    return Settings(pipe, net, train)


def load_settings(path: Optional[str] = None) -> Settings:
    """Read an INI file; ``None`` gives the defaults."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path is not None and not cp.read(path):
        raise FileNotFoundError(f"cannot read config {path}")
    return from_parser(cp)
