"""Run configuration: one YAML file drives every CLI command.

Example::

    seed: 0
    paths:
      corpus_root: data/wav          # <corpus_root>/<singer>/*.wav
      feature_cache: data/features   # <feature_cache>/<singer>/*.svcf
      checkpoint_dir: runs/ckpt
      report_dir: runs/reports
    singers: {male1: 0, male2: 1, female1: 2}
    training: {vae_warmup_epochs: 15, total_epochs: 60, learning_rate: 1.0e-4}
    model: {condition_on_f0: true}
    vocoder:
      analysis: "vawsvc-world analyze {input} {output}"
      synthesis: "vawsvc-world synthesize {input} {output}"

Relative paths resolve against the directory holding the config file.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import yaml

from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainingConfig

_PY = f'"{sys.executable}" -m vawsvc.world_tool'
DEFAULT_VOCODER = {
    "analysis": _PY + " analyze {input} {output}",
    "synthesis": _PY + " synthesize {input} {output}",
}


@dataclass
class RunConfig:
    corpus_root: Path
    feature_cache: Path
    checkpoint_dir: Path
    report_dir: Path
    singers: Dict[str, int]
    training: TrainingConfig
    model: ModelConfig
    vocoder: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_VOCODER))
    seed: int = 0
    source: Optional[Path] = None

    def singer_name(self, index: int) -> str:
        for name, i in self.singers.items():
            if i == index:
                return name
        raise KeyError(index)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "paths": {
                "corpus_root": str(self.corpus_root),
                "feature_cache": str(self.feature_cache),
                "checkpoint_dir": str(self.checkpoint_dir),
                "report_dir": str(self.report_dir),
            },
            "singers": dict(self.singers),
            "training": self.training.to_dict(),
            "model": self.model.to_dict(),
            "vocoder": dict(self.vocoder),
        }

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _validate_roster(singers) -> Dict[str, int]:
    if not isinstance(singers, dict) or not singers:
        raise ConfigurationError("config needs a non-empty 'singers' mapping of name -> index")
    roster = {str(k): int(v) for k, v in singers.items()}
    if sorted(roster.values()) != list(range(len(roster))):
        raise ConfigurationError(f"singer indices must be contiguous from 0, got {sorted(roster.values())}")
    return roster


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    base = path.resolve().parent
    paths = raw.get("paths", {})

    def resolve(key, default):
        p = Path(paths.get(key, default))
        return p if p.is_absolute() else base / p

    roster = _validate_roster(raw.get("singers"))
    run_seed = int(raw.get("seed", 0) if seed is None else seed)
    training = dict(raw.get("training", {}))
    training["seed"] = run_seed
    model = dict(raw.get("model", {}))
    model["n_singers"] = len(roster)
    try:
        tcfg = TrainingConfig(**training)
        mcfg = ModelConfig(**model)
    except TypeError as exc:
        raise ConfigurationError(f"unknown config key: {exc}") from exc
    vocoder = dict(DEFAULT_VOCODER)
    vocoder.update(raw.get("vocoder", {}) or {})
    return RunConfig(
        corpus_root=resolve("corpus_root", "wav"),
        feature_cache=resolve("feature_cache", "features"),
        checkpoint_dir=resolve("checkpoint_dir", "checkpoints"),
        report_dir=resolve("report_dir", "reports"),
        singers=roster,
        training=tcfg,
        model=mcfg,
        vocoder=vocoder,
        seed=run_seed,
        source=path,
    )
