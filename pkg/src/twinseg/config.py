"""Pipeline configuration: defaults, JSON config file, flag overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping


@dataclass
class Config:
    gamma: float = 0.5
    group_size: int = 8
    workers: int = 1
    seed: int = 0
    boundary_tolerance: int = 1
    samples: int = 1
    static_twin: bool = False
    policy: Mapping[str, Any] = field(default_factory=lambda: {"kind": "oracle"})
    judge: Mapping[str, Any] = field(default_factory=lambda: {"kind": "overlap"})

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")

    @classmethod
    def load(cls, path: Path | None = None, overrides: Mapping[str, Any] | None = None) -> "Config":
        """Defaults, then the config file, then non-None overrides."""
        values: dict[str, Any] = {}
        if path is not None:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            if not isinstance(doc, dict):
                raise ValueError("config file must hold a JSON object")
            known = {f.name for f in fields(cls)}
            unknown = sorted(set(doc) - known)
            if unknown:
                raise ValueError(f"unknown config keys {unknown}")
            values.update(doc)
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        return cls(**values)
