"""Two-stage stratified sampling and distribution statistics for labeled corpora.

Stage 1 partitions the corpus by retrieval mode and splits the target size
across partitions by quota fractions (largest-remainder apportionment, so
"one third each" is honored at any target size). Stage 2 fills per-category
quotas, where a category is a tuple of label-field values on each record.
Underfull categories are reported as shortfalls, never silently substituted.

Sampling is deterministic for a fixed seed; changing only the seed changes
which records are drawn, never how many per category.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_MODE_FIELD = "retrieval_mode"
DEFAULT_LABEL_FIELDS = ("round_type", "reply_type", "pattern", "tool_context")


@dataclass(frozen=True)
class Stage2Entry:
    """One category quota: label-field match plus a count or a fraction."""

    label: dict
    count: int | None = None
    fraction: float | None = None

    def __post_init__(self) -> None:
        if (self.count is None) == (self.fraction is None):
            raise ValueError("stage-2 entry needs exactly one of count or fraction")
        if self.count is not None and self.count < 0:
            raise ValueError("stage-2 count must be non-negative")
        if self.fraction is not None and self.fraction < 0:
            raise ValueError("stage-2 fraction must be non-negative")

    def key(self) -> str:
        return "|".join(f"{k}={self.label[k]}" for k in sorted(self.label))

    def matches(self, item: dict) -> bool:
        return all(item.get(k) == v for k, v in self.label.items())


@dataclass
class SamplingQuota:
    """Stage-1 mode fractions and stage-2 category quotas, either optional."""

    stage1: dict[str, float] | None = None
    stage2: list[Stage2Entry] = field(default_factory=list)
    mode_field: str = DEFAULT_MODE_FIELD

    def __post_init__(self) -> None:
        if self.stage1 is not None:
            total = sum(self.stage1.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"stage-1 fractions sum to {total}, expected 1")
            if self.stage1 and self.stage2 and any(e.count is not None for e in self.stage2):
                raise ValueError("stage-2 quotas must be fractions when stage 1 is present")

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplingQuota":
        entries = [
            Stage2Entry(
                label=dict(e["label"]),
                count=e.get("count"),
                fraction=e.get("fraction"),
            )
            for e in doc.get("stage2", [])
        ]
        return cls(
            stage1=dict(doc["stage1"]) if doc.get("stage1") else None,
            stage2=entries,
            mode_field=doc.get("mode_field", DEFAULT_MODE_FIELD),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SamplingQuota":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def largest_remainder(fractions: dict[str, float], total: int) -> dict[str, int]:
    """Apportion ``total`` across keys proportionally to fractions.

    Floors the exact quotas and hands leftover units to the largest remainders;
    remainder ties break by key order for determinism.
    """
    keys = list(fractions)
    exact = {k: fractions[k] * total for k in keys}
    base = {k: math.floor(exact[k]) for k in keys}
    leftover = total - sum(base.values())
    by_remainder = sorted(keys, key=lambda k: (-(exact[k] - base[k]), keys.index(k)))
    for k in by_remainder[:leftover]:
        base[k] += 1
    return base


def _draw(items: list[tuple[int, dict]], n: int, rng: random.Random) -> list[tuple[int, dict]]:
    chosen = rng.sample(items, n) if n < len(items) else list(items)
    return sorted(chosen, key=lambda pair: pair[0])


def stratified_sample(
    corpus: list[dict],
    quota: SamplingQuota,
    target_size: int,
    seed: int,
) -> tuple[list[dict], dict]:
    """Draw a stratified subset of ``corpus``.

    Returns ``(sample, shortfall)`` where shortfall maps category keys to
    ``{"requested": n, "available": m}`` for every underfull category.
    """
    if target_size < 0:
        raise ValueError("target_size must be non-negative")
    rng = random.Random(seed)
    indexed = list(enumerate(corpus))
    shortfall: dict[str, dict] = {}
    picked: list[tuple[int, dict]] = []

    def fill_categories(pool: list[tuple[int, dict]], budget: int, prefix: str) -> None:
        taken: set[int] = set()
        fractional = [e for e in quota.stage2 if e.fraction is not None]
        fraction_counts: dict[str, int] = {}
        if fractional:
            fraction_counts = largest_remainder(
                {e.key(): e.fraction for e in fractional}, budget
            )
        for entry in quota.stage2:
            matching = [(i, item) for i, item in pool if i not in taken and entry.matches(item)]
            requested = entry.count if entry.count is not None else fraction_counts[entry.key()]
            key = f"{prefix}{entry.key()}"
            if len(matching) < requested:
                shortfall[key] = {"requested": requested, "available": len(matching)}
            drawn = _draw(matching, min(requested, len(matching)), rng)
            taken.update(i for i, _ in drawn)
            picked.extend(drawn)

    if quota.stage1 is not None:
        allocation = largest_remainder(quota.stage1, target_size)
        partitions: dict[str, list[tuple[int, dict]]] = {m: [] for m in quota.stage1}
        for i, item in indexed:
            mode = item.get(quota.mode_field)
            if mode in partitions:
                partitions[mode].append((i, item))
        for mode in quota.stage1:
            pool = partitions[mode]
            want = allocation[mode]
            if quota.stage2:
                fill_categories(pool, want, prefix=f"{quota.mode_field}={mode}|")
            else:
                if len(pool) < want:
                    shortfall[f"{quota.mode_field}={mode}"] = {
                        "requested": want,
                        "available": len(pool),
                    }
                picked.extend(_draw(pool, min(want, len(pool)), rng))
    elif quota.stage2:
        fill_categories(indexed, target_size, prefix="")
    else:
        if len(indexed) < target_size:
            shortfall["corpus"] = {"requested": target_size, "available": len(indexed)}
        picked.extend(_draw(indexed, min(target_size, len(indexed)), rng))

    picked.sort(key=lambda pair: pair[0])
    return [item for _, item in picked], shortfall


def dataset_stats(
    corpus: list[dict],
    label_fields: tuple[str, ...] = DEFAULT_LABEL_FIELDS,
) -> dict:
    """Count/percentage table per label tuple, plus totals and average turns."""
    counts: dict[tuple, int] = {}
    for item in corpus:
        key = tuple(str(item.get(f, "Null")) for f in label_fields)
        counts[key] = counts.get(key, 0) + 1
    total = len(corpus)
    rows = [
        {
            "label": dict(zip(label_fields, key)),
            "count": n,
            "pct": round(100.0 * n / total, 2) if total else 0.0,
        }
        for key, n in counts.items()
    ]
    rows.sort(key=lambda r: (-r["count"], tuple(r["label"].values())))

    turn_counts = []
    for item in corpus:
        if isinstance(item.get("turns"), list):
            turn_counts.append(len(item["turns"]))
        elif isinstance(item.get("n_turns"), (int, float)):
            turn_counts.append(item["n_turns"])
    avg_turns = round(sum(turn_counts) / len(turn_counts), 2) if turn_counts else 0.0

    return {"total": total, "rows": rows, "avg_turns": avg_turns}
