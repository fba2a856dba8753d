"""Flat ``key = value`` run configuration.

One file drives architecture, graph construction, optimization, and
paths.  Precedence is command line > config file > built-in default.
Unknown keys, duplicate keys, and malformed values are rejected with
the offending key named; validation happens before any compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .adjacency import AdjacencyConfig
from .model import NetConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "parse_config_file",
           "serialize_run_config", "SCHEMA"]


class ConfigError(ValueError):
    """A config key, value, or combination is unusable."""


_NET = NetConfig()
_ADJ = AdjacencyConfig()
_TRAIN = TrainConfig()

# key -> (kind, default); file order below is also the canonical
# serialization order.
SCHEMA: dict[str, tuple[str, object]] = {
    "n_groups": ("int", _NET.n_groups),
    "n_blocks": ("int", _NET.n_blocks),
    "channels": ("int", _NET.channels),
    "window": ("int", _NET.window),
    "heads": ("int", _NET.heads),
    "scale": ("int", _NET.scale),
    "mlp_ratio": ("float", _NET.mlp_ratio),
    "gvt_mask_mode": ("str", _NET.gvt_mask_mode),
    "disable_stl": ("bool", _NET.disable_stl),
    "disable_gvt": ("bool", _NET.disable_gvt),
    "plain_linear_qkv": ("bool", _NET.plain_linear_qkv),
    "adjacency_p": ("p", _ADJ.p),
    "adjacency_threshold": ("float", _ADJ.threshold),
    "adjacency_compare": ("str", _ADJ.comparison),
    "adjacency_normalize": ("bool", _ADJ.normalize_tokens),
    "adjacency_self_loops": ("bool", _ADJ.self_loops),
    "lr": ("float", _TRAIN.lr),
    "beta1": ("float", _TRAIN.beta1),
    "beta2": ("float", _TRAIN.beta2),
    "eps": ("float", _TRAIN.eps),
    "steps": ("int", _TRAIN.steps),
    "batch": ("int", _TRAIN.batch),
    "seed": ("int", _TRAIN.seed),
    "checkpoint_every": ("int", _TRAIN.checkpoint_every),
    "log_every": ("int", _TRAIN.log_every),
    "data_dir": ("str", ""),
    "out_dir": ("str", "run"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_value(key: str, kind: str, raw) -> object:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind == "p":
            if text.lower() in ("inf", "infinity"):
                return math.inf
            return float(int(text))
        return text
    except ValueError:
        raise ConfigError(
            f"config key {key!r}: cannot parse {raw!r} as {kind}") from None


def _render_value(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "p":
        return "inf" if value == math.inf else str(int(value))
    if kind == "float":
        return repr(float(value))
    return str(value)


def parse_config_file(path: str) -> dict[str, str]:
    """Read raw key/value strings; '#' starts a comment line."""
    raw: dict[str, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'key = value', got "
                    f"{stripped!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
            raw[key] = value.strip()
    return raw


@dataclass
class RunConfig:
    net: NetConfig
    train: TrainConfig
    data_dir: str
    out_dir: str


def load_run_config(path: str | None = None,
                    overrides: dict[str, object] | None = None) -> RunConfig:
    """Merge defaults, an optional config file, and overrides.

    Override values may be strings (parsed per the schema) or already
    typed; unknown override keys are rejected like file keys.
    """
    values = {key: default for key, (_, default) in SCHEMA.items()}
    if path is not None:
        for key, raw in parse_config_file(path).items():
            values[key] = _parse_value(key, SCHEMA[key][0], raw)
    for key, raw in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, SCHEMA[key][0], raw)

    try:
        adjacency = AdjacencyConfig(
            p=values["adjacency_p"],
            threshold=values["adjacency_threshold"],
            comparison=values["adjacency_compare"],
            normalize_tokens=values["adjacency_normalize"],
            self_loops=values["adjacency_self_loops"])
        net = NetConfig(
            n_groups=values["n_groups"], n_blocks=values["n_blocks"],
            channels=values["channels"], window=values["window"],
            heads=values["heads"], scale=values["scale"],
            mlp_ratio=values["mlp_ratio"], adjacency=adjacency,
            gvt_mask_mode=values["gvt_mask_mode"],
            disable_stl=values["disable_stl"],
            disable_gvt=values["disable_gvt"],
            plain_linear_qkv=values["plain_linear_qkv"])
        train = TrainConfig(
            lr=values["lr"], beta1=values["beta1"], beta2=values["beta2"],
            eps=values["eps"], steps=values["steps"], batch=values["batch"],
            seed=values["seed"], checkpoint_every=values["checkpoint_every"],
            log_every=values["log_every"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(net=net, train=train, data_dir=values["data_dir"],
                     out_dir=values["out_dir"])


def serialize_run_config(rc: RunConfig) -> str:
    """Canonical text form; parse(serialize(x)) reproduces x."""
    values = {
        "n_groups": rc.net.n_groups, "n_blocks": rc.net.n_blocks,
        "channels": rc.net.channels, "window": rc.net.window,
        "heads": rc.net.heads, "scale": rc.net.scale,
        "mlp_ratio": rc.net.mlp_ratio, "gvt_mask_mode": rc.net.gvt_mask_mode,
        "disable_stl": rc.net.disable_stl, "disable_gvt": rc.net.disable_gvt,
        "plain_linear_qkv": rc.net.plain_linear_qkv,
        "adjacency_p": rc.net.adjacency.p,
        "adjacency_threshold": rc.net.adjacency.threshold,
        "adjacency_compare": rc.net.adjacency.comparison,
        "adjacency_normalize": rc.net.adjacency.normalize_tokens,
        "adjacency_self_loops": rc.net.adjacency.self_loops,
        "lr": rc.train.lr, "beta1": rc.train.beta1, "beta2": rc.train.beta2,
        "eps": rc.train.eps, "steps": rc.train.steps,
        "batch": rc.train.batch, "seed": rc.train.seed,
        "checkpoint_every": rc.train.checkpoint_every,
        "log_every": rc.train.log_every,
        "data_dir": rc.data_dir, "out_dir": rc.out_dir,
    }
    lines = [f"{key} = {_render_value(SCHEMA[key][0], values[key])}"
             for key in SCHEMA]
    return "\n".join(lines) + "\n"
