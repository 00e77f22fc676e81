"""Label address blocks over time from multi-vantage-point observations.

Each cell of an :class:`ObservationMatrix` holds one vantage point's
per-round verdict for a block.  Unanimous success is Up; unanimous failure
is an outage or an island, which only evidence from inside the block can
tell apart; a mix is a peninsula.  Short-lived mixes are routing
convergence noise and are relabeled Transient.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from reachcore.errors import FormatError, InputError

DEFAULT_ROUND_SECONDS = 660
DEFAULT_MIN_PERSIST = 2
DEFAULT_MIN_VPS = 2


class ProbeOutcome(enum.IntEnum):
    NO_DATA = -1
    NEGATIVE = 0
    POSITIVE = 1


SYMBOLS = {ProbeOutcome.POSITIVE: "+", ProbeOutcome.NEGATIVE: "-", ProbeOutcome.NO_DATA: "."}
_FROM_SYMBOL = {v: int(k) for k, v in SYMBOLS.items()}


class StateLabel(str, enum.Enum):
    UP = "Up"
    EXTERNALLY_DOWN = "ExternallyDown"
    OUTAGE = "Outage"
    ISLAND = "Island"
    PENINSULA = "Peninsula"
    TRANSIENT = "Transient"
    UNKNOWN = "Unknown"


@dataclass
class ObservationMatrix:
    """Probe outcomes indexed ``cells[vp, block, round]`` with ProbeOutcome codes."""

    vps: list
    blocks: list
    cells: np.ndarray
    round_seconds: float = DEFAULT_ROUND_SECONDS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vps = list(self.vps)
        self.blocks = list(self.blocks)
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 3 or self.cells.shape[:2] != (len(self.vps), len(self.blocks)):
            raise InputError(f"cells shape {self.cells.shape} does not match {len(self.vps)} vps x {len(self.blocks)} blocks")
        if len(set(self.vps)) != len(self.vps) or len(set(self.blocks)) != len(self.blocks):
            raise InputError("duplicate vp or block id")
        if not self.round_seconds > 0:
            raise InputError("round_seconds must be positive")
        if not np.isin(self.cells, (-1, 0, 1)).all():
            raise InputError("cells must hold -1, 0 or 1")

    @classmethod
    def empty(cls, vps, blocks, rounds, round_seconds=DEFAULT_ROUND_SECONDS, fill=ProbeOutcome.NO_DATA):
        cells = np.full((len(vps), len(blocks), rounds), int(fill), dtype=np.int8)
        return cls(vps, blocks, cells, round_seconds)

    @property
    def rounds(self) -> int:
        return self.cells.shape[2]

    def block_index(self, block) -> int:
        try:
            return self.blocks.index(block)
        except ValueError:
            raise IndexError(f"unknown block {block!r}") from None

    def column(self, block) -> np.ndarray:
        """All vantage points' outcomes for one block, shape (vps, rounds)."""
        return self.cells[:, self.block_index(block), :]


@dataclass
class LocalEvidence:
    """Whether an in-block vantage point saw its own LAN alive, per (block, round).

    Absent entries mean no vantage point sits inside the block.
    """

    alive: dict = field(default_factory=dict)

    def get(self, block, round_):
        return self.alive.get((block, round_))

    def blocks(self) -> set:
        return {b for b, _ in self.alive}


def classify_round(matrix: ObservationMatrix, evidence: LocalEvidence, block, round_: int,
                   min_vps: int = DEFAULT_MIN_VPS) -> StateLabel:
    col = matrix.column(block)
    if not 0 <= round_ < matrix.rounds:
        raise IndexError(f"round {round_} outside 0..{matrix.rounds - 1}")
    return _label(col[:, round_], evidence.get(block, round_), min_vps)


def _label(cells, local, min_vps):
    reporting = cells[cells != ProbeOutcome.NO_DATA]
    if len(reporting) < min_vps:
        return StateLabel.UNKNOWN
    positives = int((reporting == ProbeOutcome.POSITIVE).sum())
    if positives == len(reporting):
        return StateLabel.UP
    if positives == 0:
        if local is None:
            return StateLabel.EXTERNALLY_DOWN
        return StateLabel.ISLAND if local else StateLabel.OUTAGE
    return StateLabel.PENINSULA


@dataclass(frozen=True)
class Segment:
    """Rounds ``start`` (inclusive) to ``end`` (exclusive) sharing one label."""

    start: int
    end: int
    label: StateLabel

    @property
    def length(self) -> int:
        return self.end - self.start


def raw_labels(matrix, evidence, block, min_vps=DEFAULT_MIN_VPS) -> list[StateLabel]:
    col = matrix.column(block)
    return [_label(col[:, r], evidence.get(block, r), min_vps) for r in range(matrix.rounds)]


def classify_timeline(matrix: ObservationMatrix, evidence: LocalEvidence, block,
                      min_persist_rounds: int = DEFAULT_MIN_PERSIST,
                      min_vps: int = DEFAULT_MIN_VPS) -> list[Segment]:
    if min_persist_rounds < 1:
        raise InputError("min_persist_rounds must be at least 1")
    labels = raw_labels(matrix, evidence, block, min_vps)
    segments = []
    start = 0
    for r in range(1, len(labels) + 1):
        if r == len(labels) or labels[r] != labels[start]:
            label = labels[start]
            if label is StateLabel.PENINSULA and r - start < min_persist_rounds:
                label = StateLabel.TRANSIENT
            segments.append(Segment(start, r, label))
            start = r
    return segments


def classify_all(matrix, evidence, min_persist_rounds=DEFAULT_MIN_PERSIST, min_vps=DEFAULT_MIN_VPS):
    """Timelines for every block; blocks are independent."""
    return {b: classify_timeline(matrix, evidence, b, min_persist_rounds, min_vps) for b in matrix.blocks}


def peninsula_extent(matrix: ObservationMatrix, block) -> tuple[list[float], int]:
    """Per-round share of reporting vantage points that reach ``block``.

    Rounds with no reports give NaN.  The second value is the longest run of
    rounds whose share is strictly between 0 and 1.
    """
    col = matrix.column(block)
    fractions = []
    longest = run = 0
    for r in range(matrix.rounds):
        reporting = col[:, r][col[:, r] != ProbeOutcome.NO_DATA]
        if len(reporting) == 0:
            fractions.append(math.nan)
            run = 0
            continue
        f = float((reporting == ProbeOutcome.POSITIVE).sum()) / len(reporting)
        fractions.append(f)
        run = run + 1 if 0.0 < f < 1.0 else 0
        longest = max(longest, run)
    return fractions, longest


# -- file formats ------------------------------------------------------------

def format_matrix(matrix: ObservationMatrix) -> str:
    head = f"#vps={len(matrix.vps)} blocks={len(matrix.blocks)} rounds={matrix.rounds} round_seconds={matrix.round_seconds:g}"
    for key, value in sorted(matrix.meta.items()):
        head += f" {key}={value}"
    lines = [head]
    for i, vp in enumerate(matrix.vps):
        for j, block in enumerate(matrix.blocks):
            row = "".join(SYMBOLS[ProbeOutcome(c)] for c in matrix.cells[i, j])
            lines.append(f"{vp} {block} {row}")
    return "\n".join(lines) + "\n"


def parse_matrix(lines: Iterable[str], path="<matrix>") -> ObservationMatrix:
    """Parse the header line then one ``vp block round-string`` line per pair.

    Round strings use ``+`` (positive), ``-`` (negative) and ``.`` (no data).
    Pairs without a line are all no-data.
    """
    lines = iter(lines)
    header = None
    lineno = 0
    for raw in lines:
        lineno += 1
        if raw.strip():
            header = raw.strip()
            break
    if header is None or not header.startswith("#"):
        raise FormatError(path, lineno or 1, "missing '#vps=.. blocks=.. rounds=.. round_seconds=..' header")
    fields = {}
    for token in header[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise FormatError(path, lineno, f"header token {token!r} is not key=value")
        fields[key] = value
    try:
        n_vps, n_blocks, rounds = (int(fields.pop(k)) for k in ("vps", "blocks", "rounds"))
        round_seconds = float(fields.pop("round_seconds", DEFAULT_ROUND_SECONDS))
    except (KeyError, ValueError) as exc:
        raise FormatError(path, lineno, f"bad header: {exc}") from None
    if round_seconds <= 0:
        raise FormatError(path, lineno, "round_seconds must be positive")

    vps, blocks, rows = [], [], {}
    for raw in lines:
        lineno += 1
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(path, lineno, "expected 'vp block round-string'")
        vp, block, row = parts
        if len(row) != rounds:
            raise FormatError(path, lineno, f"round string has {len(row)} rounds, header says {rounds}")
        try:
            codes = [_FROM_SYMBOL[ch] for ch in row]
        except KeyError as exc:
            raise FormatError(path, lineno, f"unknown outcome symbol {exc.args[0]!r}") from None
        if (vp, block) in rows:
            raise FormatError(path, lineno, f"duplicate line for {vp} {block}")
        if vp not in vps:
            vps.append(vp)
        if block not in blocks:
            blocks.append(block)
        rows[(vp, block)] = codes
    if len(vps) > n_vps or len(blocks) > n_blocks:
        raise FormatError(path, lineno, f"found {len(vps)} vps / {len(blocks)} blocks, header says {n_vps} / {n_blocks}")
    # ids missing from the body cannot be named; pad with placeholders
    vps += [f"vp{i}" for i in range(len(vps), n_vps)]
    blocks += [f"block{i}" for i in range(len(blocks), n_blocks)]
    matrix = ObservationMatrix.empty(vps, blocks, rounds, round_seconds)
    for (vp, block), codes in rows.items():
        matrix.cells[vps.index(vp), blocks.index(block), :] = codes
    matrix.meta = fields
    return matrix


def load_matrix(path) -> ObservationMatrix:
    with open(path) as fh:
        return parse_matrix(fh, Path(path))


def format_evidence(evidence: LocalEvidence) -> str:
    lines = ["block,round,alive"]
    for (block, rnd), alive in sorted(evidence.alive.items()):
        lines.append(f"{block},{rnd},{int(bool(alive))}")
    return "\n".join(lines) + "\n"


def load_evidence(path) -> LocalEvidence:
    path = Path(path)
    alive = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"block", "round", "alive"} <= set(reader.fieldnames):
            raise FormatError(path, 1, "expected columns block,round,alive")
        for row in reader:
            value = row["alive"].strip().lower()
            if value not in ("0", "1", "true", "false"):
                raise FormatError(path, reader.line_num, f"alive must be 0/1/true/false, got {row['alive']!r}")
            try:
                rnd = int(row["round"])
            except ValueError:
                raise FormatError(path, reader.line_num, "round must be an integer") from None
            alive[(row["block"], rnd)] = value in ("1", "true")
    return LocalEvidence(alive)


def segments_to_json(timelines: Mapping[str, list[Segment]]) -> list[dict]:
    return [
        {"block": block, "start_round": s.start, "end_round": s.end, "label": s.label.value}
        for block, segs in timelines.items()
        for s in segs
    ]
