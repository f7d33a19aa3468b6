"""Synthetic, brute-forceable scoring function over agent configurations.

score(config) = clamp01(base + sum of per-module main effects
                        + sum of cross-kind pairwise effects + seeded noise)

Base modules are identified by their position in each pool. A module that
evolution appended later inherits its parent's effects plus a deterministic
perturbation, so evolved variants can beat every base module.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import KINDS, AgentConfig, ModuleKind, ModulePools, ModuleSpec
from ..errors import LandscapeTooLarge, UnknownModule

EXHAUSTIVE_LIMIT = 5000


def _unit_gauss(*parts) -> float:
    seed = int.from_bytes(hashlib.blake2b(repr(parts).encode(), digest_size=8).digest(), "big")
    return random.Random(seed).gauss(0.0, 1.0)


@dataclass
class OracleLandscape:
    pool_sizes: tuple[int, int, int, int]
    main_effects: list[list[float]]
    pairwise_effects: dict[tuple[int, int, int, int], float] = field(default_factory=dict)
    noise_sigma: float = 0.0
    seed: int = 0
    base: float = 0.5
    evolve_sigma: float = 0.03

    def __post_init__(self):
        self.pool_sizes = tuple(int(n) for n in self.pool_sizes)
        if len(self.pool_sizes) != 4 or min(self.pool_sizes) < 1:
            raise ValueError("pool_sizes must be four positive ints")
        if [len(m) for m in self.main_effects] != list(self.pool_sizes):
            raise ValueError("main_effects shape does not match pool_sizes")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for (ka, i, kb, j) in self.pairwise_effects:
            if not (0 <= ka < kb < 4 and i < self.pool_sizes[ka] and j < self.pool_sizes[kb]):
                raise ValueError(f"bad pairwise key {(ka, i, kb, j)}")

    @classmethod
    def generate(cls, pool_sizes, seed: int, *, main_scale: float = 0.1, pair_density: float = 0.2,
                 pair_scale: float = 0.05, noise_sigma: float = 0.02, base: float = 0.5,
                 evolve_sigma: float = 0.03) -> "OracleLandscape":
        rng = np.random.default_rng(seed)
        main = [list(rng.normal(0.0, main_scale, n)) for n in pool_sizes]
        pairs = {}
        for ka, kb in itertools.combinations(range(4), 2):
            for i in range(pool_sizes[ka]):
                for j in range(pool_sizes[kb]):
                    if rng.random() < pair_density:
                        pairs[(ka, i, kb, j)] = float(rng.normal(0.0, pair_scale))
        return cls(tuple(pool_sizes), [[float(x) for x in m] for m in main], pairs,
                   noise_sigma, seed, base, evolve_sigma)

    # -- evaluation -----------------------------------------------------
    def raw(self, indices: tuple[int, ...], deltas: tuple[float, ...] = (0.0,) * 4) -> float:
        total = self.base
        for k, i in enumerate(indices):
            total += self.main_effects[k][i] + deltas[k]
        for ka, kb in itertools.combinations(range(4), 2):
            total += self.pairwise_effects.get((ka, indices[ka], kb, indices[kb]), 0.0)
        return total

    def noise(self, agent: AgentConfig) -> float:
        if self.noise_sigma == 0:
            return 0.0
        return self.noise_sigma * _unit_gauss("noise", self.seed, agent.slots())

    def evolve_delta(self, spec: ModuleSpec) -> float:
        if self.evolve_sigma == 0:
            return 0.0
        key = ("evolve", self.seed, spec.kind.value, spec.name, spec.strategy.value,
               sorted(spec.params.items()), spec.prompt_template)
        return self.evolve_sigma * _unit_gauss(*key)

    def locate(self, kind: ModuleKind, name: str, pools: ModulePools) -> tuple[int, float]:
        """Base index of the module (or of its seed ancestor) and the inherited delta."""
        k = KINDS.index(kind)
        members = pools[kind]
        base_names = [s.name for s in members[: self.pool_sizes[k]]]
        delta = 0.0
        seen = set()
        while name not in base_names:
            if name in seen:
                raise UnknownModule(kind.slot, name)
            seen.add(name)
            spec = pools.get(kind, name)
            if not spec.parent_name:
                raise UnknownModule(kind.slot, name)
            delta += self.evolve_delta(spec)
            name = spec.parent_name
        return base_names.index(name), delta

    def score(self, agent: AgentConfig, pools: ModulePools) -> float:
        located = [self.locate(kind, agent.get(kind), pools) for kind in KINDS]
        indices = tuple(i for i, _ in located)
        deltas = tuple(d for _, d in located)
        return min(1.0, max(0.0, self.raw(indices, deltas) + self.noise(agent)))

    evaluate = score

    def pools(self) -> ModulePools:
        return synthetic_pools(self.pool_sizes)

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "pool_sizes": list(self.pool_sizes),
            "base": self.base,
            "main_effects": self.main_effects,
            "pairwise_effects": [[*k, v] for k, v in sorted(self.pairwise_effects.items())],
            "noise_sigma": self.noise_sigma,
            "evolve_sigma": self.evolve_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OracleLandscape":
        pairs = {tuple(int(x) for x in row[:4]): float(row[4]) for row in doc.get("pairwise_effects", [])}
        return cls(
            tuple(doc["pool_sizes"]),
            [[float(x) for x in m] for m in doc["main_effects"]],
            pairs,
            float(doc.get("noise_sigma", 0.0)),
            int(doc.get("seed", 0)),
            float(doc.get("base", 0.5)),
            float(doc.get("evolve_sigma", 0.03)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "OracleLandscape":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def synthetic_pools(sizes) -> ModulePools:
    """Pools of the requested sizes drawn from the seed catalog.

    Sentinels come first in the P/T/M catalog pools, so they are always kept.
    Extra members beyond the catalog are renamed clones (``CoT#2``).
    """
    from ..modules.catalog import seed_pools

    catalog = seed_pools()
    pools = ModulePools()
    for kind, n in zip(KINDS, sizes):
        members = catalog[kind]
        extra = [s for s in members if not s.is_sentinel]
        for i in range(n):
            if i < len(members):
                pools.add(members[i])
                continue
            j = i - len(members)
            doc = extra[j % len(extra)].to_dict()
            doc["name"] = f"{doc['name']}#{j // len(extra) + 2}"
            pools.add(ModuleSpec.from_dict(doc))
    return pools


def landscape_optimum(landscape: OracleLandscape, pools: ModulePools | None = None) -> tuple[AgentConfig, float]:
    """Exhaustive argmax; ties resolve to the first config in enumeration order."""
    pools = pools or landscape.pools()
    count = math.prod(landscape.pool_sizes)
    if count > EXHAUSTIVE_LIMIT:
        raise LandscapeTooLarge(count)
    names = [[s.name for s in pools[k][: n]] for k, n in zip(KINDS, landscape.pool_sizes)]
    best, best_score = None, -1.0
    for combo in itertools.product(*names):
        agent = AgentConfig(*combo)
        s = landscape.score(agent, pools)
        if s > best_score:
            best, best_score = agent, s
    return best, best_score
