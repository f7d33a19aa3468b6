"""Seed catalog and named preset agents shipped as JSON documents."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..core import AgentConfig, ModulePools, ModuleSpec
from ..errors import AgentGridError


_ROOT = Path(__file__).resolve().parent.parent
SEED_DIR = _ROOT / "modules" / "seed"
PRESET_DIR = _ROOT / "presets"


def load_specs(directory: str | Path) -> list[ModuleSpec]:
    """Read every ``*.json`` ModuleSpec document in ``directory`` (sorted by file name)."""
    return [
        ModuleSpec.from_dict(json.loads(p.read_text(encoding="utf-8")))
        for p in sorted(Path(directory).glob("*.json"))
    ]


def seed_pools() -> ModulePools:
    pools = ModulePools()
    for spec in load_specs(SEED_DIR):
        pools.add(spec)
    problems = pools.check_sentinels()
    if problems:
        raise AgentGridError("; ".join(problems))
    return pools


@dataclass(frozen=True)
class Preset:
    name: str
    agent: AgentConfig
    modules: tuple[ModuleSpec, ...]
    task: str | None
    notes: str

    def install(self, pools: ModulePools) -> ModulePools:
        """Return a copy of ``pools`` extended with the preset's own modules."""
        out = pools.copy()
        for spec in self.modules:
            if spec.name not in out.names(spec.kind):
                out.add(spec)
        return out


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_preset(ref: str | Path) -> Preset:
    """Load a preset by name (``alfworld-best``, ``presets/alfworld-best``) or file path."""
    path = Path(ref)
    if not path.is_file():
        stem = Path(str(ref)).name
        if stem.endswith(".json"):
            stem = stem[:-5]
        path = PRESET_DIR / f"{stem}.json"
        if not path.is_file():
            raise AgentGridError(f"unknown preset {ref!r}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    return Preset(
        name=doc.get("name", path.stem),
        agent=AgentConfig.from_dict(doc["agent"]),
        modules=tuple(ModuleSpec.from_dict(m) for m in doc.get("modules", [])),
        task=doc.get("task"),
        notes=doc.get("notes", ""),
    )
