"""JSONL persistence for the experience pool and module-pool snapshots.

One store file may be shared by many runs; each ``append_record`` call adds
exactly one line. Concurrent writers from different processes must be
coordinated externally.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

from .core import ExperiencePool, ExperienceRecord, ModulePools
from .errors import CorruptStore, StoreUnavailable

log = logging.getLogger(__name__)


def append_record(path: str | Path, record: ExperienceRecord) -> None:
    line = json.dumps(record.to_dict(), ensure_ascii=False) + "\n"
    try:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise StoreUnavailable(f"store unavailable: {path}: {exc}") from exc


def load_pool(path: str | Path, lenient: bool = False) -> ExperiencePool:
    """Parse every line of a store file. Absent file gives an empty pool.

    Malformed lines raise :class:`CorruptStore` unless ``lenient``, in which
    case they are logged with their line numbers and skipped. Skipped line
    numbers are kept on ``pool.skipped_lines``.
    """
    path = Path(path)
    records: list[ExperienceRecord] = []
    skipped: list[int] = []
    if path.exists():
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(ExperienceRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    if not lenient:
                        raise CorruptStore(lineno, str(exc)) from exc
                    log.warning("skipping malformed experience line %d: %s", lineno, exc)
                    skipped.append(lineno)
    pool = ExperiencePool(records)
    pool.skipped_lines = skipped
    return pool


def top_k(pool: ExperiencePool | list[ExperienceRecord], k: int) -> list[ExperienceRecord]:
    """Best ``k`` records by score; among equal scores the later record wins."""
    if k < 0:
        raise ValueError("k must be >= 0")
    records = list(pool.records if isinstance(pool, ExperiencePool) else pool)
    order = sorted(range(len(records)), key=lambda i: (-records[i].score, -i))
    return [records[i] for i in order[:k]]


def write_pools(path: str | Path, pools: ModulePools) -> None:
    Path(path).write_text(json.dumps(pools.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_pools(path: str | Path) -> ModulePools:
    return ModulePools.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
