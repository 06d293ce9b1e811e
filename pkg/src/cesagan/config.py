"""Run configuration: one JSON file holding training, bootstrap, architecture and path settings."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .bootstrap import BootstrapConfig
from .nets import ArchConfig
from .training import TrainConfig

OUTPUT_DIR_ENV = "CESAGAN_OUTPUT_DIR"


class BadConfig(ValueError):
    pass


@dataclass
class Paths:
    corpus_dir: Optional[str] = None
    output_dir: str = "runs/default"
    checkpoint: Optional[str] = None


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    bootstrap: Optional[BootstrapConfig] = field(default_factory=BootstrapConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    paths: Paths = field(default_factory=Paths)

    def to_dict(self) -> dict:
        return {
            "train": asdict(self.train),
            "bootstrap": asdict(self.bootstrap) if self.bootstrap is not None else None,
            "arch": asdict(self.arch),
            "paths": asdict(self.paths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"train", "bootstrap", "arch", "paths"}
        if unknown:
            raise BadConfig(f"unknown config sections: {sorted(unknown)}")
        try:
            boot = d.get("bootstrap", {})
            return cls(
                train=_build(TrainConfig, d.get("train", {})),
                bootstrap=None if boot is None else _build(BootstrapConfig, boot),
                arch=_build(ArchConfig, d.get("arch", {})),
                paths=_build(Paths, d.get("paths", {})),
            )
        except (TypeError, ValueError) as exc:
            raise BadConfig(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(cls, values: dict):
    if not isinstance(values, dict):
        raise BadConfig(f"section for {cls.__name__} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise BadConfig(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise BadConfig(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise BadConfig(f"{path}: invalid JSON ({exc})") from exc
        cfg = RunConfig.from_dict(raw)
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        cfg.paths = replace(cfg.paths, output_dir=env_out)
    return cfg


def apply_overrides(cfg: RunConfig, train: dict, bootstrap: dict, arch: dict, paths: dict,
                    disable_bootstrap: bool = False) -> RunConfig:
    """Return a copy with non-None override values applied."""

    def pick(d):
        return {k: v for k, v in d.items() if v is not None}

    try:
        boot = None
        if not disable_bootstrap:
            boot = replace(cfg.bootstrap or BootstrapConfig(), **pick(bootstrap)) if (cfg.bootstrap or pick(bootstrap)) else None
        return RunConfig(
            train=replace(cfg.train, **pick(train)),
            bootstrap=boot,
            arch=replace(cfg.arch, **pick(arch)),
            paths=replace(cfg.paths, **pick(paths)),
        )
    except (TypeError, ValueError) as exc:
        raise BadConfig(str(exc)) from exc
