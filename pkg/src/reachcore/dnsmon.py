"""Island/peninsula tagging of DNS root vantage points and loss decomposition.

Over one UTC day a vantage point that never reaches any root identifier is
an island; one that reaches some identifiers but never others is a
peninsula.  Removing each population in turn separates misconfiguration
and persistent routing problems from the loss that remains.

Measurements are held column-wise in a :class:`DnsBatch` so a day of
hourly queries from ten thousand vantage points is cheap to aggregate.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from reachcore.errors import EmptyWindow, FormatError, InputError, MissingTag, UndefinedRatio

N_TARGETS = 13
DAY = 86_400
FAMILIES = ("v4", "v6")
POPULATIONS = ("all", "minus_islands", "clean")
DEFAULT_MIN_ATTEMPTS = 10
DEFAULT_REACH_THRESHOLD = 0.5


class Tag(str, enum.Enum):
    ISLAND = "Island"
    PENINSULA = "Peninsula"
    CLEAN = "Clean"
    INSUFFICIENT = "Insufficient"


_TAG_CODES = [Tag.CLEAN, Tag.ISLAND, Tag.PENINSULA, Tag.INSUFFICIENT]


@dataclass(frozen=True)
class DnsMeasurement:
    vp: str
    family: str
    target: int
    ts: int
    ok: bool

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not 1 <= self.target <= N_TARGETS:
            raise InputError(f"target {self.target} outside 1..{N_TARGETS}")


@dataclass
class DnsBatch:
    """Column-oriented measurements.

    ``vp`` indexes into ``vp_ids``; ``family`` indexes into :data:`FAMILIES`.
    """

    vp_ids: list
    vp: np.ndarray
    family: np.ndarray
    target: np.ndarray
    ts: np.ndarray
    ok: np.ndarray

    def __post_init__(self):
        self.vp = np.asarray(self.vp, dtype=np.int64)
        self.family = np.asarray(self.family, dtype=np.int8)
        self.target = np.asarray(self.target, dtype=np.int8)
        self.ts = np.asarray(self.ts, dtype=np.int64)
        self.ok = np.asarray(self.ok, dtype=bool)
        n = len(self.vp)
        if not all(len(a) == n for a in (self.family, self.target, self.ts, self.ok)):
            raise InputError("DnsBatch columns differ in length")
        if n and ((self.target < 1).any() or (self.target > N_TARGETS).any()):
            raise InputError(f"targets must be in 1..{N_TARGETS}")

    def __len__(self):
        return len(self.vp)

    @classmethod
    def from_records(cls, records: Iterable[DnsMeasurement]) -> "DnsBatch":
        ids = {}
        cols = ([], [], [], [], [])
        for r in records:
            cols[0].append(ids.setdefault(r.vp, len(ids)))
            cols[1].append(FAMILIES.index(r.family))
            cols[2].append(r.target)
            cols[3].append(r.ts)
            cols[4].append(r.ok)
        return cls(list(ids), *cols)

    def records(self):
        for i in range(len(self)):
            yield DnsMeasurement(self.vp_ids[self.vp[i]], FAMILIES[self.family[i]],
                                 int(self.target[i]), int(self.ts[i]), bool(self.ok[i]))

    def select(self, mask) -> "DnsBatch":
        return DnsBatch(self.vp_ids, self.vp[mask], self.family[mask], self.target[mask], self.ts[mask], self.ok[mask])

    def window(self, start: int, length: int = DAY) -> "DnsBatch":
        return self.select((self.ts >= start) & (self.ts < start + length))

    def restrict_vps(self, vps: Iterable[str]) -> "DnsBatch":
        """Keep only the listed vantage points (for anchor-only analysis)."""
        wanted = set(vps)
        keep = np.array([v in wanted for v in self.vp_ids], dtype=bool)
        return self.select(keep[self.vp] if len(self) else np.zeros(0, dtype=bool))

    def day_starts(self) -> list[int]:
        return sorted({int(d) * DAY for d in np.unique(self.ts // DAY)})


def merge_batches(batches: list[DnsBatch]) -> DnsBatch:
    ids = {}
    parts = []
    for b in batches:
        remap = np.array([ids.setdefault(v, len(ids)) for v in b.vp_ids], dtype=np.int64)
        parts.append((remap[b.vp] if len(b) else b.vp, b.family, b.target, b.ts, b.ok))
    cols = [np.concatenate([p[i] for p in parts]) if parts else [] for i in range(5)]
    return DnsBatch(list(ids), *cols)


@dataclass(frozen=True)
class VPTag:
    vp: str
    family: str
    tag: Tag
    window_start: int = 0


def _key_grid(batch, values):
    """Sum ``values`` per (vp, family, target) cell, shape (vps * 2, 13)."""
    key = (batch.vp * 2 + batch.family) * N_TARGETS + (batch.target - 1)
    size = len(batch.vp_ids) * 2 * N_TARGETS
    return np.bincount(key, weights=values, minlength=size).reshape(-1, N_TARGETS)


def tag_vps(batch: DnsBatch, window_start: int | None = None, min_attempts: int = DEFAULT_MIN_ATTEMPTS,
            reach_threshold: float = DEFAULT_REACH_THRESHOLD) -> list[VPTag]:
    """Tag each (vantage point, family) seen in one 24-hour window.

    ``window_start`` defaults to the UTC midnight before the earliest
    measurement.  Pairs with no measurements in the window are omitted.
    """
    if len(batch) == 0:
        raise EmptyWindow("no measurements to tag")
    if window_start is None:
        window_start = int(batch.ts.min()) // DAY * DAY
    day = batch.window(window_start)
    if len(day) == 0:
        raise EmptyWindow(f"no measurements in the 24h window starting at {window_start}")

    attempts = _key_grid(day, np.ones(len(day)))
    successes = _key_grid(day, day.ok.astype(float))
    seen = attempts.sum(axis=1) > 0
    enough = attempts >= min_attempts
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(attempts > 0, successes / np.maximum(attempts, 1), 0.0)
    dead = enough & (successes == 0)
    reached = enough & (rate >= reach_threshold)

    code = np.zeros(len(attempts), dtype=np.int8)
    code[dead.any(axis=1) & reached.any(axis=1)] = 2
    code[dead.all(axis=1)] = 1
    code[~enough.all(axis=1)] = 3

    tags = []
    for k in np.flatnonzero(seen):
        tags.append(VPTag(batch.vp_ids[k // 2], FAMILIES[k % 2], _TAG_CODES[code[k]], window_start))
    return tags


def tag_map(tags: Iterable[VPTag]) -> dict:
    return {(t.vp, t.family): t.tag for t in tags}


def tag_fractions(tags: Iterable[VPTag]) -> dict:
    """Share of tagged vantage points per family that are islands or peninsulas."""
    counts = {f: {t: 0 for t in Tag} for f in FAMILIES}
    for t in tags:
        counts[t.family][t.tag] += 1
    out = {}
    for fam, c in counts.items():
        n = sum(c.values())
        if n:
            out[fam] = {"n_vps": n, "island": c[Tag.ISLAND] / n, "peninsula": c[Tag.PENINSULA] / n}
    return out


@dataclass(frozen=True)
class LossCell:
    loss: float | None
    n_vps: int
    n_queries: int
    n_failed: int


@dataclass
class LossReport:
    """``cells[(family, target)][population]`` for the three populations."""

    cells: dict

    def loss(self, family, target, population) -> float | None:
        return self.cells[(family, target)][population].loss

    def families(self) -> list[str]:
        return [f for f in FAMILIES if any(k[0] == f for k in self.cells)]

    def pooled(self, family, population) -> float | None:
        """Loss over all targets of a family for one population."""
        failed = queries = 0
        for (fam, _), pops in self.cells.items():
            if fam == family:
                failed += pops[population].n_failed
                queries += pops[population].n_queries
        return failed / queries if queries else None

    def rows(self):
        for (fam, target), pops in sorted(self.cells.items()):
            for pop in POPULATIONS:
                c = pops[pop]
                yield {"family": fam, "target": target, "population": pop, "loss": c.loss,
                       "n_vps": c.n_vps, "n_queries": c.n_queries}

    def to_csv(self) -> str:
        lines = ["family,target,population,loss,n_vps,n_queries"]
        for r in self.rows():
            loss = "" if r["loss"] is None else f"{r['loss']:.6f}"
            lines.append(f"{r['family']},{r['target']},{r['population']},{loss},{r['n_vps']},{r['n_queries']}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "cells": [
                {"family": fam, "target": target,
                 **{pop: vars(pops[pop]) for pop in POPULATIONS}}
                for (fam, target), pops in sorted(self.cells.items())
            ]
        }

    @classmethod
    def from_json(cls, data) -> "LossReport":
        cells = {}
        for entry in data["cells"]:
            cells[(entry["family"], int(entry["target"]))] = {pop: LossCell(**entry[pop]) for pop in POPULATIONS}
        return cls(cells)


def loss_report(batch: DnsBatch, tags: Iterable[VPTag] | Mapping) -> LossReport:
    tags = tags if isinstance(tags, Mapping) else tag_map(tags)
    code = np.full(len(batch.vp_ids) * 2, -1, dtype=np.int8)
    pos = {v: i for i, v in enumerate(batch.vp_ids)}
    for (vp, fam), tag in tags.items():
        if vp in pos:
            code[pos[vp] * 2 + FAMILIES.index(fam)] = _TAG_CODES.index(Tag(tag))

    key = batch.vp * 2 + batch.family
    present = np.unique(key)
    untagged = present[code[present] < 0]
    if len(untagged):
        k = int(untagged[0])
        raise MissingTag(f"no tag for vp {batch.vp_ids[k // 2]!r} family {FAMILIES[k % 2]}")

    row_code = code[key]
    masks = {
        "all": np.ones(len(batch), dtype=bool),
        "minus_islands": row_code != 1,
        "clean": (row_code != 1) & (row_code != 2),
    }
    cell = batch.family.astype(np.int64) * N_TARGETS + (batch.target - 1)
    cells = {}
    pop_stats = {}
    for pop, mask in masks.items():
        queries = np.bincount(cell[mask], minlength=2 * N_TARGETS)
        failed = np.bincount(cell[mask], weights=(~batch.ok[mask]).astype(float), minlength=2 * N_TARGETS)
        pairs = np.unique(key[mask] * (2 * N_TARGETS) + cell[mask])
        vps = np.bincount(pairs % (2 * N_TARGETS), minlength=2 * N_TARGETS)
        pop_stats[pop] = (queries, failed, vps)
    seen_cells = np.unique(cell)
    for c in seen_cells:
        fam, target = FAMILIES[c // N_TARGETS], int(c % N_TARGETS) + 1
        entry = {}
        for pop in POPULATIONS:
            q, f, v = (int(x[c]) for x in pop_stats[pop])
            entry[pop] = LossCell(f / q if q else None, v, q, f)
        cells[(fam, target)] = entry
    return LossReport(cells)


def sensitivity_ratio(report: LossReport) -> dict:
    """Per family, mean over targets of all-VP loss divided by clean loss."""
    out = {}
    for fam in report.families():
        ratios = []
        for (f, target), pops in sorted(report.cells.items()):
            if f != fam:
                continue
            clean = pops["clean"].loss
            if not clean:
                raise UndefinedRatio(f"{fam} target {target}: clean-population loss is zero or empty")
            ratios.append(pops["all"].loss / clean)
        out[fam] = float(np.mean(ratios))
    return out


# -- JSONL ---------------------------------------------------------------------

def parse_dns_jsonl(lines: Iterable[str], path="<dns>") -> DnsBatch:
    ids = {}
    cols = ([], [], [], [], [])
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            family = obj["family"]
            target = int(obj["target"])
            ok = obj["ok"]
            if family not in FAMILIES:
                raise ValueError(f"family {family!r} not in {FAMILIES}")
            if not 1 <= target <= N_TARGETS:
                raise ValueError(f"target {target} outside 1..{N_TARGETS}")
            if not isinstance(ok, bool):
                raise ValueError("ok must be true or false")
            ts = int(obj["ts"])
            vp = str(obj["vp"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(path, lineno, f"bad DNS measurement: {exc}") from None
        cols[0].append(ids.setdefault(vp, len(ids)))
        cols[1].append(FAMILIES.index(family))
        cols[2].append(target)
        cols[3].append(ts)
        cols[4].append(ok)
    return DnsBatch(list(ids), *cols)


def load_dns(path) -> DnsBatch:
    with open(path) as fh:
        return parse_dns_jsonl(fh, path)


def write_dns_jsonl(batch: DnsBatch, fh) -> None:
    ids = batch.vp_ids
    for v, f, t, ts, ok in zip(batch.vp.tolist(), batch.family.tolist(), batch.target.tolist(),
                               batch.ts.tolist(), batch.ok.tolist()):
        fh.write(f'{{"vp": {json.dumps(ids[v])}, "family": "{FAMILIES[f]}", "target": {t}, '
                 f'"ts": {ts}, "ok": {"true" if ok else "false"}}}\n')


def tags_to_csv(tags: Iterable[VPTag]) -> str:
    lines = ["window_start,vp,family,tag"]
    lines += [f"{t.window_start},{t.vp},{t.family},{t.tag.value}" for t in tags]
    return "\n".join(lines) + "\n"


def load_tags_csv(path) -> list[VPTag]:
    tags = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"vp", "family", "tag"} <= set(reader.fieldnames):
            raise FormatError(path, 1, "expected columns window_start,vp,family,tag")
        for row in reader:
            try:
                tags.append(VPTag(row["vp"], row["family"], Tag(row["tag"]), int(row.get("window_start") or 0)))
            except ValueError as exc:
                raise FormatError(path, reader.line_num, str(exc)) from None
    return tags
