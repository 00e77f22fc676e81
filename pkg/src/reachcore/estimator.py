"""Per-(vantage point, block) estimate of which addresses currently respond.

Each round a vantage point walks the block's address history round-robin,
stopping at the first reply (reachable), after enough replies are missing
from addresses it believed active (unreachable), or when the per-round
budget runs out.  Probing the minimum needed is what makes the estimate lag
reality: after an event each round re-discovers about one address.
"""

from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping

import numpy as np

from reachcore.errors import FormatError, InputError, InvalidResult, NoHistory

MAX_PROBES = 15


class Outcome(str, enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"


class Reachability(str, enum.Enum):
    YES = "Yes"
    NO = "No"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class ProbeBudget:
    min_probes: int = 1
    max_probes: int = MAX_PROBES
    negative_confirmations: int = 4
    # sparse blocks: declare unreachable only after every historical address failed
    exhaustive: bool = False

    def __post_init__(self):
        if not 1 <= self.min_probes <= self.max_probes <= MAX_PROBES:
            raise InputError(f"need 1 <= min_probes <= max_probes <= {MAX_PROBES}")
        if self.negative_confirmations < 1:
            raise InputError("negative_confirmations must be at least 1")


@dataclass(frozen=True)
class ProbeResult:
    address: str
    outcome: Outcome

    @property
    def positive(self) -> bool:
        return self.outcome is Outcome.POSITIVE


@dataclass(frozen=True)
class ActiveSetEstimate:
    historically_active: tuple
    currently_active: frozenset = field(default_factory=frozenset)
    consecutive_negatives: int = 0
    cursor: int = 0

    def __post_init__(self):
        history = tuple(self.historically_active)
        if len(set(history)) != len(history):
            raise InputError("historically_active has duplicates")
        current = frozenset(self.currently_active)
        if not current <= set(history):
            raise InputError("currently_active must be a subset of historically_active")
        if self.consecutive_negatives < 0:
            raise InputError("consecutive_negatives must be non-negative")
        object.__setattr__(self, "historically_active", history)
        object.__setattr__(self, "currently_active", current)
        if history:
            object.__setattr__(self, "cursor", self.cursor % len(history))

    @classmethod
    def fresh(cls, history: Iterable[str], cursor: int = 0) -> "ActiveSetEstimate":
        """Start believing every historical address is active."""
        history = tuple(history)
        return cls(history, frozenset(history), 0, cursor)

    @property
    def active_count(self) -> int:
        return len(self.currently_active)

    def to_json(self) -> dict:
        return {
            "historically_active": list(self.historically_active),
            "currently_active": [a for a in self.historically_active if a in self.currently_active],
            "consecutive_negatives": self.consecutive_negatives,
            "cursor": self.cursor,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ActiveSetEstimate":
        return cls(
            tuple(data["historically_active"]),
            frozenset(data["currently_active"]),
            int(data["consecutive_negatives"]),
            int(data["cursor"]),
        )


def plan_probes(state: ActiveSetEstimate, budget: ProbeBudget = ProbeBudget()) -> list[str]:
    history = state.historically_active
    if not history:
        raise NoHistory("block has no historically active addresses")
    n = min(budget.max_probes, len(history))
    return [history[(state.cursor + i) % len(history)] for i in range(n)]


def _counts_against(address, active, budget) -> bool:
    # silence from an address already believed inactive says nothing about the block
    return budget.exhaustive or not active or address in active


def _confirmed_down(round_negatives, consecutive, state, budget) -> bool:
    if budget.exhaustive:
        return consecutive >= len(state.historically_active)
    return round_negatives >= budget.negative_confirmations


def update(state: ActiveSetEstimate, results: Iterable[ProbeResult], budget: ProbeBudget = ProbeBudget()):
    """Fold one round of probe results into the estimate.

    Returns ``(new_state, Reachability)``.
    """
    results = list(results)
    history = state.historically_active
    position = {a: i for i, a in enumerate(history)}
    active = set(state.currently_active)
    consecutive = state.consecutive_negatives
    cursor = state.cursor
    round_negatives = 0
    saw_positive = False
    for r in results:
        if r.address not in position:
            raise InvalidResult(f"address {r.address!r} is not in the block history")
        if r.positive:
            active.add(r.address)
            consecutive = 0
            saw_positive = True
        else:
            if _counts_against(r.address, active, budget):
                consecutive += 1
                round_negatives += 1
            active.discard(r.address)
        cursor = (position[r.address] + 1) % len(history)

    if saw_positive:
        verdict = Reachability.YES
    elif _confirmed_down(round_negatives, consecutive, state, budget):
        verdict = Reachability.NO
    else:
        verdict = Reachability.UNDETERMINED
    return replace(state, currently_active=frozenset(active), consecutive_negatives=consecutive, cursor=cursor), verdict


def probe_round(state: ActiveSetEstimate, responds: Callable[[str], bool], budget: ProbeBudget = ProbeBudget()) -> list[ProbeResult]:
    """Run one round against ``responds`` and return the results actually sent.

    Probing stops at the first reply or once unreachability is confirmed.
    """
    active = set(state.currently_active)
    consecutive = state.consecutive_negatives
    round_negatives = 0
    results = []
    for address in plan_probes(state, budget):
        if responds(address):
            results.append(ProbeResult(address, Outcome.POSITIVE))
            break
        results.append(ProbeResult(address, Outcome.NEGATIVE))
        if _counts_against(address, active, budget):
            consecutive += 1
            round_negatives += 1
        active.discard(address)
        if _confirmed_down(round_negatives, consecutive, state, budget):
            break
    return results


def step(state, responds, budget=ProbeBudget()):
    """Probe one round and update; returns ``(new_state, verdict, results)``."""
    results = probe_round(state, responds, budget)
    new_state, verdict = update(state, results, budget)
    return new_state, verdict, results


def recovery_trace(n_active: int, budget: ProbeBudget = ProbeBudget(), probes_first_round: int = 2) -> int:
    """Rounds for an emptied estimate to climb back to ``n_active`` addresses.

    Every address answers again.  The first round after recovery confirms
    ``probes_first_round`` addresses; each later round confirms one.
    """
    if n_active < 1:
        raise InputError("n_active must be at least 1")
    history = tuple(f"a{i}" for i in range(n_active))
    state = ActiveSetEstimate(history, frozenset(), budget.negative_confirmations, 0)
    plan = plan_probes(state, budget)
    first = [ProbeResult(a, Outcome.POSITIVE) for a in plan[:max(1, probes_first_round)]]
    state, _ = update(state, first, budget)
    rounds = 1
    while state.active_count < n_active:
        state, _, _ = step(state, lambda a: True, budget)
        rounds += 1
    return rounds


def mean_probes_per_round(availability: float, n_history: int = 78, rounds: int = 10_000,
                          blocks: int = 100, budget: ProbeBudget = ProbeBudget(), seed: int = 0) -> float:
    """Monte-Carlo mean probes per round for stable, reachable blocks.

    Each simulated block draws a fixed responsive subset of its history with
    probability ``availability`` per address, warms up for one full pass over
    the history, then counts probes over ``rounds / blocks`` rounds.
    """
    rng = np.random.default_rng(seed)
    per_block = math.ceil(rounds / blocks)
    probes = 0
    counted = 0
    for _ in range(blocks):
        history = tuple(f"a{i}" for i in range(n_history))
        alive = rng.random(n_history) < availability
        if not alive.any():
            alive[rng.integers(n_history)] = True
        live = {a for a, ok in zip(history, alive) if ok}
        state = ActiveSetEstimate.fresh(history, cursor=int(rng.integers(n_history)))
        for _ in range(n_history):
            state, _, _ = step(state, live.__contains__, budget)
        for _ in range(per_block):
            state, _, results = step(state, live.__contains__, budget)
            probes += len(results)
            counted += 1
    return probes / counted


# -- probe-stream replay -------------------------------------------------------

@dataclass(frozen=True)
class ProbeRecord:
    vp: str
    block: str
    round: int
    address: str
    outcome: Outcome

    def to_json(self) -> dict:
        return {"vp": self.vp, "block": self.block, "round": self.round,
                "address": self.address, "outcome": self.outcome.value}


def parse_probe_stream(lines: Iterable[str], path="<probes>") -> list[ProbeRecord]:
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(ProbeRecord(str(obj["vp"]), str(obj["block"]), int(obj["round"]),
                                       str(obj["address"]), Outcome(obj["outcome"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(path, lineno, f"bad probe record: {exc}") from None
    return records


@dataclass
class ReplayRow:
    vp: str
    block: str
    round: int
    active: int
    verdict: Reachability


def replay(records: Iterable[ProbeRecord], histories: Mapping[str, Iterable[str]],
           budget: ProbeBudget = ProbeBudget(), initial: Mapping | None = None):
    """Re-run estimates from a recorded probe stream.

    ``histories`` maps block to its ordered address history.  Streams are
    independent per (vp, block).  Returns ``(rows, final_states)``.
    """
    grouped = defaultdict(lambda: defaultdict(list))
    for r in records:
        grouped[(r.vp, r.block)][r.round].append(ProbeResult(r.address, r.outcome))
    rows = []
    finals = {}
    for key in sorted(grouped):
        vp, block = key
        if block not in histories:
            raise InputError(f"no address history for block {block!r}")
        state = (initial or {}).get(key) or ActiveSetEstimate.fresh(histories[block])
        for rnd in sorted(grouped[key]):
            state, verdict = update(state, grouped[key][rnd], budget)
            rows.append(ReplayRow(vp, block, rnd, state.active_count, verdict))
        finals[key] = state
    return rows, finals
