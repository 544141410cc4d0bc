"""Experiment configuration: flat dotted-key text files and run manifests.

A config file is a list of `key = value` lines with # comments, e.g.

    env.layout = Env2
    rl.gamma = 0.99
    srl.weights.w2 = 15
    seeds = 0 1 2 3 4

Every key maps onto a field of one of the structured config dataclasses;
unknown keys are rejected with the offending line number.  The canonical
serialization sorts keys, so the config hash is independent of key order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .env import EnvConfig
from .errors import ConfigError, ContractViolation
from .rl import AgentConfig
from .srl import PriorWeights, SrlConfig

ENCODER_KINDS = ("srl", "truth", "obs")


@dataclass
class AnalysisConfig:
    n_samples: int = 4000
    threshold: float = 0.05  # explained-variance ratio counted as a component
    n_bins: int = 10
    eps: float = 0.2  # exploration rate of the collection policy
    use_policy: bool = True  # false: collect under the uniform policy
    permutations: int = 20  # label shuffles for the separation baseline


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    srl: SrlConfig = field(default_factory=SrlConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    encoder: str = "srl"  # srl | truth | obs
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "runs"

    def __post_init__(self):
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"encoder must be one of {ENCODER_KINDS}, got {self.encoder!r}")
        if not self.seeds:
            raise ConfigError("seeds list is empty")


# dotted prefix -> (attribute on ExperimentConfig, dataclass)
_SECTIONS = {
    "env": ("env", EnvConfig),
    "rl": ("agent", AgentConfig),
    "srl": ("srl", SrlConfig),
    "analysis": ("analysis", AnalysisConfig),
}
_TOP_KEYS = ("encoder", "seeds", "out")


def _parse_value(raw: str, current):
    """Parse raw text according to the type of the field's current value."""
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        return [int(v) for v in raw.split()]
    return raw


def _resolve(cfg: ExperimentConfig, key: str):
    """Map a dotted key to (owner object, attribute name); raises KeyError."""
    if key in _TOP_KEYS:
        return cfg, key
    head, _, rest = key.partition(".")
    if head not in _SECTIONS or not rest:
        raise KeyError(key)
    obj = getattr(cfg, _SECTIONS[head][0])
    if head == "srl" and rest.startswith("weights."):
        w = rest.split(".", 1)[1]
        if w not in [f.name for f in dataclasses.fields(PriorWeights)]:
            raise KeyError(key)
        return obj.weights, w
    if rest not in [f.name for f in dataclasses.fields(obj)]:
        raise KeyError(key)
    return obj, rest


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            obj, attr = _resolve(cfg, key)
        except KeyError:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}") from None
        try:
            setattr(obj, attr, _parse_value(value, getattr(obj, attr)))
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for {key!r}: {exc}") from None
    # re-validate: field assignment bypasses __post_init__
    try:
        for section, (attr, _) in _SECTIONS.items():
            obj = getattr(cfg, attr)
            obj.__post_init__() if hasattr(obj, "__post_init__") else None
        cfg.__post_init__()
    except (ContractViolation, ConfigError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _flatten(cfg: ExperimentConfig) -> dict[str, str]:
    out = {}
    for prefix, (attr, cls) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        for f in dataclasses.fields(cls):
            v = getattr(obj, f.name)
            if isinstance(v, PriorWeights):
                for wf in dataclasses.fields(PriorWeights):
                    out[f"{prefix}.weights.{wf.name}"] = repr(getattr(v, wf.name))
            elif isinstance(v, list):
                out[f"{prefix}.{f.name}"] = " ".join(str(i) for i in v)
            elif isinstance(v, float):
                # cast first: numpy scalar reprs are not parseable literals
                out[f"{prefix}.{f.name}"] = repr(float(v))
            else:
                out[f"{prefix}.{f.name}"] = str(v)
    out["encoder"] = cfg.encoder
    out["seeds"] = " ".join(str(s) for s in cfg.seeds)
    out["out"] = cfg.out
    return out


def config_to_text(cfg: ExperimentConfig) -> str:
    """Canonical form: sorted keys, one per line."""
    flat = _flatten(cfg)
    return "\n".join(f"{k} = {flat[k]}" for k in sorted(flat)) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the canonical text, minus bookkeeping that does not change
    simulated behavior (output dir, seed list: each run hashes with its own
    seed recorded in the manifest instead)."""
    flat = _flatten(cfg)
    flat.pop("out")
    flat.pop("seeds")
    text = "\n".join(f"{k} = {flat[k]}" for k in sorted(flat))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))


# -- run manifests ---------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    duration_s: float
    outputs: list[str]


def write_manifest(manifest: RunManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(manifest), fh, indent=2)
        fh.write("\n")


def read_manifest(path) -> RunManifest:
    with open(path) as fh:
        d = json.load(fh)
    return RunManifest(**d)


class Stopwatch:
    def __enter__(self):
        self.t0 = time.time()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.time() - self.t0
