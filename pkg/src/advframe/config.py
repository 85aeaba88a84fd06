"""Run configuration: TOML sections mapped onto the dataclasses of each module."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from .decode import DecoderConfig
from .metrics import DEFAULT_DELTA_GRID, ProbeConfig
from .synth import SynthConfig
from .tagger import NetConfig, TrainConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; the message says what to fix."""


@dataclass(frozen=True)
class CorpusRef:
    path: str
    domain: int = 0
    split: str | None = None

    @classmethod
    def from_obj(cls, obj) -> "CorpusRef":
        if isinstance(obj, str):
            return cls(obj)
        if not isinstance(obj, dict) or "path" not in obj:
            raise ConfigError(f"corpus entry must be a path or a table with 'path': {obj!r}")
        unknown = set(obj) - {"path", "domain", "split"}
        if unknown:
            raise ConfigError(f"unknown keys in corpus entry: {sorted(unknown)}")
        return cls(str(obj["path"]), int(obj.get("domain", 0)), obj.get("split"))

    def to_obj(self) -> dict:
        d = {"path": self.path, "domain": self.domain}
        if self.split is not None:
            d["split"] = self.split
        return d


@dataclass(frozen=True)
class Paths:
    lexicon: str | None = None
    train: tuple[CorpusRef, ...] = ()
    val: CorpusRef | None = None
    test: tuple[CorpusRef, ...] = ()
    checkpoint: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = (7, 8, 9, 10, 11)
    wer_edges: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    delta_grid: tuple[float, ...] = DEFAULT_DELTA_GRID
    figures: bool = True
    epochs: int = 8

    def __post_init__(self):
        for name in ("seeds", "wer_edges", "delta_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.seeds:
            raise ValueError("experiment.seeds must not be empty")
        if self.epochs < 0:
            raise ValueError("experiment.epochs must be >= 0")
        if list(self.wer_edges) != sorted(set(self.wer_edges)):
            raise ValueError("experiment.wer_edges must be strictly increasing")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    paths: Paths = field(default_factory=Paths)
    net: NetConfig = field(default_factory=NetConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    # --- (de)serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        p = self.paths
        paths: dict[str, Any] = {"train": [r.to_obj() for r in p.train], "test": [r.to_obj() for r in p.test]}
        for key in ("lexicon", "checkpoint"):
            if getattr(p, key) is not None:
                paths[key] = getattr(p, key)
        if p.val is not None:
            paths["val"] = p.val.to_obj()
        train = asdict(self.train)
        if train["lambda_pin"] is None:
            del train["lambda_pin"]
        if train["clip_norm"] is None:
            train["clip_norm"] = 0.0
        return {"seed": self.seed, "paths": paths, "net": asdict(self.net), "decoder": asdict(self.decoder),
                "train": train, "synth": asdict(self.synth), "probe": asdict(self.probe),
                "experiment": asdict(self.experiment)}

    def dumps(self) -> str:
        return tomli_w.dumps(_lists(self.to_dict()))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        paths = d.get("paths", {})
        bad = set(paths) - {f.name for f in fields(Paths)}
        if bad:
            raise ConfigError(f"unknown keys in [paths]: {sorted(bad)}")
        try:
            p = Paths(
                lexicon=paths.get("lexicon"),
                train=tuple(CorpusRef.from_obj(o) for o in paths.get("train", [])),
                val=CorpusRef.from_obj(paths["val"]) if "val" in paths else None,
                test=tuple(CorpusRef.from_obj(o) for o in paths.get("test", [])),
                checkpoint=paths.get("checkpoint"),
            )
            train = dict(d.get("train", {}))
            if train.get("clip_norm") == 0.0:
                train["clip_norm"] = None
            return cls(
                seed=int(d.get("seed", 7)),
                paths=p,
                net=_build(NetConfig, d.get("net", {}), "net"),
                decoder=_build(DecoderConfig, d.get("decoder", {}), "decoder"),
                train=_build(TrainConfig, train, "train"),
                synth=_build(SynthConfig, d.get("synth", {}), "synth"),
                probe=_build(ProbeConfig, d.get("probe", {}), "probe"),
                experiment=_build(ExperimentConfig, d.get("experiment", {}), "experiment"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))

    # --- validation ---------------------------------------------------------------

    def check_paths(self, *keys: str) -> None:
        """Raise :class:`ConfigError` for a missing or nonexistent path among ``keys``."""
        for key in keys:
            value = getattr(self.paths, key)
            if value in (None, ()):
                raise ConfigError(f"paths.{key} is required for this command")
            refs = value if isinstance(value, tuple) else (value,)
            for ref in refs:
                path = ref.path if isinstance(ref, CorpusRef) else ref
                if not Path(path).is_file():
                    raise ConfigError(f"paths.{key}: file not found: {path}")


def _build(cls, values: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _lists(obj):
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj
