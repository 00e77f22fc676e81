"""Deterministic scenarios with planted ground truth.

A scenario plants islands, peninsulas, outages and transients on address
blocks observed by a handful of vantage points, and optionally a day of DNS
root queries from a large vantage-point population with planted island and
peninsula slices.  Every vantage point runs the real active-set estimator
against the block, so observation cells carry the estimator's lag and the
probe stream can be replayed.

Randomness comes from counter-based Philox generators keyed by
``(seed, purpose, ...)``, so each stream is reproducible on its own and
adding an event never perturbs unrelated draws.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from reachcore import bundled
from reachcore.dnsmon import DAY, FAMILIES, N_TARGETS, DnsBatch, Tag, VPTag
from reachcore.errors import ConfigError, ScenarioMismatch
from reachcore.estimator import ActiveSetEstimate, ProbeBudget, ProbeRecord, Reachability, step
from reachcore.taxonomy import LocalEvidence, ObservationMatrix, ProbeOutcome, Segment, StateLabel

EVENT_KINDS = ("Island", "Peninsula", "Outage", "Transient")
DNSMON_DAY = 1_658_534_400  # 2022-07-23T00:00Z


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for one purpose; string keys are hashed to ints."""
    spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=spawn)))


@dataclass
class BlockSpec:
    id: str
    n_history: int = 32
    n_responsive: int | None = None
    local_only: int = 0
    home_vps: list = field(default_factory=list)


@dataclass
class EventSpec:
    kind: str
    block: str
    start_round: int
    duration_rounds: int
    reaching_vps: list = field(default_factory=list)

    @property
    def end_round(self) -> int:
        return self.start_round + self.duration_rounds

    def active(self, r) -> bool:
        return self.start_round <= r < self.end_round


@dataclass
class DnsFamilyPlan:
    island_fraction: float = 0.0
    peninsula_fraction: float = 0.0
    baseline_loss: float = 0.0
    disputed_target: int | None = None
    disputed_fraction: float = 0.0


@dataclass
class DnsSection:
    n_vps: int
    families: dict
    window_start: int = DNSMON_DAY
    queries_per_target: int = 24
    # roles persist across days; only baseline loss is redrawn
    n_days: int = 1


@dataclass
class ScenarioConfig:
    name: str
    seed: int = 0
    n_rounds: int = 48
    round_seconds: float = 660
    availability: float = 0.44
    vps: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    events: list = field(default_factory=list)
    budget: ProbeBudget = field(default_factory=ProbeBudget)
    warmup_rounds: int | None = None
    epoch: int = 0
    dns: DnsSection | None = None

    @classmethod
    def from_json(cls, data: Mapping) -> "ScenarioConfig":
        data = dict(data)
        try:
            vps = data.pop("vps", None)
            n_vps = data.pop("n_vps", None)
            if vps is None:
                vps = [f"vp{i}" for i in range(int(n_vps or 0))]
            blocks = data.pop("blocks", None)
            n_blocks = data.pop("n_blocks", None)
            if blocks is None:
                blocks = [{"id": f"blk{i:03d}"} for i in range(int(n_blocks or 0))]
            blocks = [BlockSpec(**b) for b in blocks]
            events = [EventSpec(**e) for e in data.pop("events", [])]
            budget = ProbeBudget(**data.pop("budget", {}))
            dns = data.pop("dns", None)
            if dns is not None:
                dns = dict(dns)
                dns["families"] = {f: DnsFamilyPlan(**p) for f, p in dns["families"].items()}
                dns = DnsSection(**dns)
            config = cls(vps=list(vps), blocks=blocks, events=events, budget=budget, dns=dns, **data)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad scenario config: {exc}") from None
        config.validate()
        return config

    def to_json(self) -> dict:
        out = asdict(self)
        out["budget"] = asdict(self.budget)
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()

    def block(self, block_id) -> BlockSpec:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise ConfigError(f"unknown block {block_id!r}")

    def home_of(self) -> dict:
        return {vp: b.id for b in self.blocks for vp in b.home_vps}

    def validate(self):
        if self.n_rounds < 1:
            raise ConfigError("n_rounds must be positive")
        if not self.round_seconds > 0:
            raise ConfigError("round_seconds must be positive")
        if not 0.0 <= self.availability <= 1.0:
            raise ConfigError("availability must be in [0, 1]")
        if len(set(self.vps)) != len(self.vps):
            raise ConfigError("duplicate vp ids")
        ids = [b.id for b in self.blocks]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate block ids")
        homes = {}
        for b in self.blocks:
            if not 1 <= b.n_history <= 254:
                raise ConfigError(f"{b.id}: n_history must be in 1..254")
            if b.n_responsive is not None and not 0 <= b.n_responsive <= b.n_history:
                raise ConfigError(f"{b.id}: n_responsive must be in 0..n_history")
            if b.local_only < 0 or b.local_only + (b.n_responsive or 0) > b.n_history:
                raise ConfigError(f"{b.id}: local_only does not fit in the history")
            for vp in b.home_vps:
                if vp not in self.vps:
                    raise ConfigError(f"{b.id}: home vp {vp!r} is not a vantage point")
                if vp in homes:
                    raise ConfigError(f"vp {vp!r} is homed in two blocks")
                homes[vp] = b.id
        by_block = {}
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                raise ConfigError(f"event kind {e.kind!r} not in {EVENT_KINDS}")
            blk = self.block(e.block)
            if e.duration_rounds < 1 or e.start_round < 0 or e.end_round > self.n_rounds:
                raise ConfigError(f"event on {e.block} at {e.start_round}+{e.duration_rounds} is outside 0..{self.n_rounds}")
            external = [v for v in self.vps if v not in blk.home_vps]
            if e.kind in ("Peninsula", "Transient"):
                reach = set(e.reaching_vps)
                if not reach or not reach < set(external):
                    raise ConfigError(f"{e.kind} on {e.block}: reaching_vps must be a non-empty proper subset of external vps")
            elif e.reaching_vps:
                raise ConfigError(f"{e.kind} events take no reaching_vps")
            if e.kind == "Island" and not blk.home_vps:
                raise ConfigError(f"Island on {e.block} needs an in-block vantage point")
            by_block.setdefault(e.block, []).append(e)
        for block, evs in by_block.items():
            evs = sorted(evs, key=lambda e: e.start_round)
            for a, b in zip(evs, evs[1:]):
                if b.start_round < a.end_round:
                    raise ConfigError(f"overlapping events on block {block}")
        if self.warmup_rounds is not None and self.warmup_rounds < 0:
            raise ConfigError("warmup_rounds must be non-negative")
        if self.dns is not None:
            if self.dns.n_vps < 1 or self.dns.queries_per_target < 1 or self.dns.n_days < 1:
                raise ConfigError("dns needs n_vps, queries_per_target and n_days >= 1")
            for fam, plan in self.dns.families.items():
                if fam not in FAMILIES:
                    raise ConfigError(f"dns family {fam!r} not in {FAMILIES}")
                fractions = (plan.island_fraction, plan.peninsula_fraction, plan.disputed_fraction, plan.baseline_loss)
                if not all(0.0 <= f <= 1.0 for f in fractions):
                    raise ConfigError(f"dns {fam}: fractions must be in [0, 1]")
                if plan.island_fraction + plan.peninsula_fraction + plan.disputed_fraction > 1.0:
                    raise ConfigError(f"dns {fam}: planted slices exceed the population")
                if plan.disputed_fraction and not (plan.disputed_target and 1 <= plan.disputed_target <= N_TARGETS):
                    raise ConfigError(f"dns {fam}: disputed_target must be in 1..{N_TARGETS}")


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return ScenarioConfig.from_json(data)


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in bundled("scenarios").glob("*.json"))


def load_scenario(name: str) -> ScenarioConfig:
    try:
        path = bundled(f"scenarios/{name}.json")
    except FileNotFoundError:
        raise ConfigError(f"no bundled scenario {name!r}; have {', '.join(bundled_scenarios())}") from None
    return load_config(path)


@dataclass
class TruthLog:
    scenario: str
    config_digest: str
    n_rounds: int
    vps: list
    blocks: list
    events: list
    dns_vps: list = field(default_factory=list)
    dns_tags: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data) -> "TruthLog":
        return cls(**data)

    def event_segments(self) -> dict:
        out = {}
        for e in self.events:
            out.setdefault(e["block"], []).append(Segment(e["start_round"], e["end_round"], e["kind"]))
        return out


@dataclass
class Scenario:
    config: ScenarioConfig
    matrix: ObservationMatrix
    evidence: LocalEvidence
    probes: list
    histories: dict
    truth: TruthLog
    dns: DnsBatch | None = None
    # estimate size after each recorded round, per (vp, block)
    active_counts: dict = field(default_factory=dict)


def _addresses(block_id: str, octets) -> list[str]:
    try:
        prefix = int(block_id, 16)
        if len(block_id) == 8:
            base = ".".join(str((prefix >> s) & 0xFF) for s in (24, 16, 8))
            return [f"{base}.{o}" for o in octets]
    except ValueError:
        pass
    return [f"{block_id}.{o}" for o in octets]


def _block_population(config, blk):
    rng = rng_for(config.seed, "block", blk.id)
    octets = sorted(rng.choice(np.arange(1, 255), size=blk.n_history, replace=False).tolist())
    history = _addresses(blk.id, octets)
    if blk.n_responsive is None:
        alive = rng.random(blk.n_history) < config.availability
        responsive = {a for a, ok in zip(history, alive) if ok}
    else:
        responsive = set(rng.choice(history, size=blk.n_responsive, replace=False).tolist())
    rest = [a for a in history if a not in responsive]
    local = set(rng.choice(rest, size=blk.local_only, replace=False).tolist()) if blk.local_only else set()
    return history, responsive, local


def generate(config: ScenarioConfig) -> Scenario:
    config.validate()
    home = config.home_of()
    matrix = ObservationMatrix.empty(config.vps, [b.id for b in config.blocks], config.n_rounds, config.round_seconds)
    matrix.meta = {"scenario": config.name}
    evidence = LocalEvidence()
    events_by_block = {b.id: [e for e in config.events if e.block == b.id] for b in config.blocks}
    warmup = config.warmup_rounds
    if warmup is None:
        warmup = max((b.n_history for b in config.blocks), default=0)

    def event_at(block, r):
        if r < 0:
            return None
        for e in events_by_block[block]:
            if e.active(r):
                return e
        return None

    histories = {}
    probes = []
    counts = {}
    populations = {}
    for blk in config.blocks:
        history, responsive, local = _block_population(config, blk)
        histories[blk.id] = history
        populations[blk.id] = (responsive, local)
        for r in range(config.n_rounds):
            if blk.home_vps:
                e = event_at(blk.id, r)
                evidence.alive[(blk.id, r)] = not (e and e.kind == "Outage")

    for i, vp in enumerate(config.vps):
        for j, blk in enumerate(config.blocks):
            responsive, local = populations[blk.id]
            inside = home.get(vp) == blk.id
            seen = responsive | local if inside else responsive
            state = ActiveSetEstimate.fresh(histories[blk.id],
                                            cursor=int(rng_for(config.seed, "cursor", vp, blk.id).integers(blk.n_history)))
            trace = []
            for r in range(-warmup, config.n_rounds):
                e = event_at(blk.id, r)
                own = event_at(home[vp], r) if vp in home else None
                if own and own.kind == "Outage":
                    continue  # vantage point is powered off
                if own and own.kind == "Island" and not inside:
                    continue  # cut off: probes to the outside never get collected
                reachable = True
                if e is not None and not inside:
                    if e.kind in ("Island", "Outage"):
                        reachable = False
                    elif vp not in e.reaching_vps:
                        reachable = False
                if e is not None and e.kind == "Outage":
                    reachable = False
                responds = seen.__contains__ if reachable else (lambda a: False)
                state, verdict, results = step(state, responds, config.budget)
                probes += [ProbeRecord(vp, blk.id, r, res.address, res.outcome) for res in results]
                if r < 0:
                    continue
                trace.append((r, state.active_count))
                if not inside:
                    matrix.cells[i, j, r] = {
                        Reachability.YES: ProbeOutcome.POSITIVE,
                        Reachability.NO: ProbeOutcome.NEGATIVE,
                        Reachability.UNDETERMINED: ProbeOutcome.NO_DATA,
                    }[verdict]
            counts[(vp, blk.id)] = trace

    dns, dns_vps, dns_tags = (None, [], {})
    if config.dns is not None:
        dns, dns_vps, dns_tags = _generate_dns(config)

    truth = TruthLog(
        scenario=config.name,
        config_digest=config.digest(),
        n_rounds=config.n_rounds,
        vps=list(config.vps),
        blocks=[b.id for b in config.blocks],
        events=[{"block": e.block, "kind": e.kind, "start_round": e.start_round,
                 "end_round": e.end_round, "reaching_vps": list(e.reaching_vps)}
                for e in sorted(config.events, key=lambda e: (e.block, e.start_round))],
        dns_vps=dns_vps,
        dns_tags=dns_tags,
    )
    return Scenario(config, matrix, evidence, probes, histories, truth, dns, counts)


def dns_roles(config: ScenarioConfig) -> dict:
    """Planted role per family: ``{family: (island_idx, {target: peninsula_idx})}``."""
    section = config.dns
    n = section.n_vps
    roles = {}
    for fam in FAMILIES:
        plan = section.families.get(fam)
        if plan is None:
            continue
        order = rng_for(config.seed, "dns-roles", fam).permutation(n)
        n_island = round(plan.island_fraction * n)
        n_pen = round(plan.peninsula_fraction * n)
        n_disp = round(plan.disputed_fraction * n)
        islands = np.sort(order[:n_island])
        failing = {}
        pen = order[n_island:n_island + n_pen]
        for k, idx in enumerate(pen):
            failing.setdefault(k % N_TARGETS + 1, []).append(int(idx))
        if n_disp:
            disp = order[n_island + n_pen:n_island + n_pen + n_disp]
            failing.setdefault(plan.disputed_target, []).extend(int(i) for i in disp)
        roles[fam] = (islands, {t: np.sort(np.array(v, dtype=np.int64)) for t, v in failing.items()})
    return roles


def _generate_dns(config: ScenarioConfig):
    section = config.dns
    n, q = section.n_vps, section.queries_per_target
    per_target = q * section.n_days
    vp_ids = [str(1000 + i) for i in range(n)]
    spacing = DAY // q
    offsets = rng_for(config.seed, "dns-offset").integers(0, spacing, size=n)
    vp_col = np.repeat(np.arange(n), N_TARGETS * per_target)
    target_col = np.tile(np.repeat(np.arange(1, N_TARGETS + 1), per_target), n)
    slot_col = np.tile(np.arange(per_target), n * N_TARGETS)
    ts_col = section.window_start + (slot_col // q) * DAY + (slot_col % q) * spacing + offsets[vp_col]

    parts = []
    tags = {}
    for fam_idx, fam in enumerate(FAMILIES):
        if fam not in section.families:
            continue
        plan = section.families[fam]
        islands, failing = dns_roles(config)[fam]
        ok = rng_for(config.seed, "dns-loss", fam).random(len(vp_col)) >= plan.baseline_loss
        island_mask = np.zeros(n, dtype=bool)
        island_mask[islands] = True
        ok &= ~island_mask[vp_col]
        fam_tags = {vp_ids[i]: Tag.ISLAND.value for i in islands}
        for target, idx in failing.items():
            m = np.zeros(n, dtype=bool)
            m[idx] = True
            ok &= ~(m[vp_col] & (target_col == target))
            fam_tags.update({vp_ids[i]: Tag.PENINSULA.value for i in idx})
        tags[fam] = dict(sorted(fam_tags.items()))
        parts.append((np.full(len(vp_col), fam_idx, dtype=np.int8), ok))

    batch = DnsBatch(
        vp_ids,
        np.concatenate([vp_col] * len(parts)),
        np.concatenate([p[0] for p in parts]),
        np.concatenate([target_col] * len(parts)),
        np.concatenate([ts_col] * len(parts)),
        np.concatenate([p[1] for p in parts]),
    )
    return batch, vp_ids, tags


# -- evaluation ----------------------------------------------------------------

_COMPATIBLE = {
    "Island": {StateLabel.ISLAND, StateLabel.EXTERNALLY_DOWN},
    "Outage": {StateLabel.OUTAGE, StateLabel.EXTERNALLY_DOWN},
    "Peninsula": {StateLabel.PENINSULA},
    "Transient": {StateLabel.TRANSIENT},
}
_EVENT_LABELS = {StateLabel.ISLAND, StateLabel.OUTAGE, StateLabel.EXTERNALLY_DOWN,
                 StateLabel.PENINSULA, StateLabel.TRANSIENT}


def evaluate_timelines(timelines: Mapping[str, list[Segment]], truth: TruthLog, tolerance_rounds: int = 1,
                       scenario: str | None = None) -> dict:
    """Match predicted event segments to planted events.

    A planted event is detected by a predicted segment on the same block with
    a compatible label whose start and end are each within
    ``tolerance_rounds``.  Precision is 1.0 when nothing was predicted.
    """
    if scenario is not None and scenario != truth.scenario:
        raise ScenarioMismatch(f"prediction is for {scenario!r}, truth is for {truth.scenario!r}")
    unknown = set(timelines) - set(truth.blocks)
    if unknown:
        raise ScenarioMismatch(f"blocks not in the scenario: {', '.join(sorted(unknown))}")
    predicted = [(block, s) for block, segs in timelines.items() for s in segs if StateLabel(s.label) in _EVENT_LABELS]
    used = set()
    per_event = []
    for e in truth.events:
        match = None
        for k, (block, s) in enumerate(predicted):
            if k in used or block != e["block"] or StateLabel(s.label) not in _COMPATIBLE[e["kind"]]:
                continue
            if abs(s.start - e["start_round"]) <= tolerance_rounds and abs(s.end - e["end_round"]) <= tolerance_rounds:
                match = k
                break
        if match is None:
            per_event.append({**e, "detected": False, "start_error": None, "end_error": None})
        else:
            used.add(match)
            s = predicted[match][1]
            per_event.append({**e, "detected": True, "start_error": s.start - e["start_round"],
                              "end_error": s.end - e["end_round"], "label": StateLabel(s.label).value})
    recall = len(used) / len(truth.events) if truth.events else 1.0
    precision = len(used) / len(predicted) if predicted else 1.0
    return {"precision": precision, "recall": recall, "n_predicted": len(predicted),
            "n_planted": len(truth.events), "events": per_event}


def evaluate_tags(tags: list[VPTag], truth: TruthLog) -> dict:
    """Compare island/peninsula tags against the planted slices, per family."""
    truth_vps = set(truth.dns_vps)
    stray = {t.vp for t in tags} - truth_vps
    if stray:
        raise ScenarioMismatch(f"{len(stray)} tagged vps are not in the scenario, e.g. {sorted(stray)[0]!r}")
    out = {}
    for fam, planted in truth.dns_tags.items():
        want = {(vp, tag) for vp, tag in planted.items()}
        got = {(t.vp, t.tag.value) for t in tags if t.family == fam and t.tag in (Tag.ISLAND, Tag.PENINSULA)}
        hit = len(want & got)
        out[fam] = {
            "precision": hit / len(got) if got else 1.0,
            "recall": hit / len(want) if want else 1.0,
            "exact": want == got,
            "n_planted": len(want),
            "n_predicted": len(got),
        }
    return out
