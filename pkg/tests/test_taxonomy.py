import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachcore.errors import FormatError
from reachcore.taxonomy import (
    LocalEvidence,
    ObservationMatrix,
    ProbeOutcome,
    Segment,
    StateLabel,
    classify_round,
    classify_timeline,
    format_evidence,
    format_matrix,
    load_evidence,
    parse_matrix,
    peninsula_extent,
    raw_labels,
)

VPS = ["c", "e", "g", "j", "n", "w"]
P, N, D = ProbeOutcome.POSITIVE, ProbeOutcome.NEGATIVE, ProbeOutcome.NO_DATA


def one_block(rounds, fill=P):
    return ObservationMatrix.empty(VPS, ["blk"], rounds, fill=fill)


def peninsula_matrix(start=5, length=16, rounds=30):
    m = one_block(rounds)
    m.cells[:, 0, start:start + length] = N
    m.cells[VPS.index("w"), 0, start:start + length] = P
    return m


def island_rounds():
    return math.ceil(64 * 60 / 660)


class TestClassifyRound:
    def test_one_reaching_vp(self):
        m = peninsula_matrix()
        assert classify_round(m, LocalEvidence(), "blk", 6) is StateLabel.PENINSULA

    def test_all_up(self):
        assert classify_round(one_block(3), LocalEvidence(), "blk", 1) is StateLabel.UP

    def test_island_with_local_evidence(self):
        m = one_block(3, fill=N)
        assert classify_round(m, LocalEvidence({("blk", 1): True}), "blk", 1) is StateLabel.ISLAND

    def test_outage_with_local_evidence(self):
        m = one_block(3, fill=N)
        assert classify_round(m, LocalEvidence({("blk", 1): False}), "blk", 1) is StateLabel.OUTAGE

    def test_no_evidence_is_externally_down(self):
        m = one_block(3, fill=N)
        assert classify_round(m, LocalEvidence(), "blk", 1) is StateLabel.EXTERNALLY_DOWN

    def test_no_data_is_not_negative(self):
        m = one_block(1, fill=D)
        m.cells[0, 0, 0] = P
        m.cells[1, 0, 0] = P
        assert classify_round(m, LocalEvidence(), "blk", 0) is StateLabel.UP

    def test_single_reporter_unknown(self):
        m = one_block(1, fill=D)
        m.cells[0, 0, 0] = N
        assert classify_round(m, LocalEvidence(), "blk", 0) is StateLabel.UNKNOWN

    def test_min_vps_configurable(self):
        m = one_block(1, fill=D)
        m.cells[:3, 0, 0] = [P, P, N]
        assert classify_round(m, LocalEvidence(), "blk", 0, min_vps=4) is StateLabel.UNKNOWN
        assert classify_round(m, LocalEvidence(), "blk", 0, min_vps=3) is StateLabel.PENINSULA

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            classify_round(one_block(3), LocalEvidence(), "blk", 3)
        with pytest.raises(IndexError):
            classify_round(one_block(3), LocalEvidence(), "other", 0)


class TestTimeline:
    def test_one_reaching_vp_for_sixteen_rounds(self):
        m = peninsula_matrix(start=5, length=16, rounds=30)
        assert math.ceil((2 * 3600 + 46 * 60) / 660) == 16
        segs = classify_timeline(m, LocalEvidence(), "blk", 2)
        assert segs == [
            Segment(0, 5, StateLabel.UP),
            Segment(5, 21, StateLabel.PENINSULA),
            Segment(21, 30, StateLabel.UP),
        ]

    def test_blip_is_transient(self):
        m = one_block(5)
        m.cells[2, 0, 2] = N
        segs = classify_timeline(m, LocalEvidence(), "blk", 2)
        assert [s.label for s in segs] == [StateLabel.UP, StateLabel.TRANSIENT, StateLabel.UP]

    def test_hour_long_island(self):
        n = island_rounds()
        assert n == 6
        m = one_block(20)
        m.cells[:, 0, 4:4 + n] = N
        evidence = LocalEvidence({("blk", r): True for r in range(20)})
        segs = classify_timeline(m, evidence, "blk", 2)
        assert Segment(4, 10, StateLabel.ISLAND) in segs
        assert len([s for s in segs if s.label is StateLabel.ISLAND]) == 1

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 40).flatmap(lambda r: st.tuples(
        st.just(r),
        st.lists(st.sampled_from([-1, 0, 1]), min_size=6 * r, max_size=6 * r),
        st.lists(st.sampled_from([None, True, False]), min_size=r, max_size=r),
        st.integers(1, 5))))
    def test_properties(self, case):
        rounds, flat, local, persist = case
        m = ObservationMatrix(VPS, ["blk"], np.array(flat, dtype=np.int8).reshape(6, 1, rounds))
        evidence = LocalEvidence({("blk", r): v for r, v in enumerate(local) if v is not None})
        segs = classify_timeline(m, evidence, "blk", persist)
        # contiguous cover without overlap
        assert segs[0].start == 0 and segs[-1].end == rounds
        assert all(a.end == b.start for a, b in zip(segs, segs[1:]))
        for s in segs:
            if s.label is StateLabel.PENINSULA:
                assert s.length >= persist
            for r in range(s.start, s.end):
                if s.label is StateLabel.ISLAND:
                    assert evidence.get("blk", r) is True
                if s.label is StateLabel.OUTAGE:
                    assert evidence.get("blk", r) is False
        assert classify_timeline(m, evidence, "blk", persist) == segs
        labels = raw_labels(m, evidence, "blk")
        for r, label in enumerate(labels):
            reporting = int((m.cells[:, 0, r] != -1).sum())
            assert (label is StateLabel.UNKNOWN) == (reporting < 2)


class TestExtent:
    def test_single_reaching_vp_share(self):
        fractions, longest = peninsula_extent(peninsula_matrix(5, 16, 30), "blk")
        assert fractions[5:21] == [1 / 6] * 16
        assert fractions[:5] == [1.0] * 5
        assert longest == 16

    def test_all_up(self):
        fractions, longest = peninsula_extent(one_block(8), "blk")
        assert fractions == [1.0] * 8 and longest == 0

    def test_rotating_single_failure(self):
        m = one_block(12)
        for r in range(12):
            m.cells[r % 6, 0, r] = N
        fractions, longest = peninsula_extent(m, "blk")
        assert fractions == [5 / 6] * 12 and longest == 12

    def test_no_reports_breaks_runs(self):
        m = one_block(5)
        m.cells[0, 0, :] = N
        m.cells[:, 0, 2] = D
        fractions, longest = peninsula_extent(m, "blk")
        assert math.isnan(fractions[2]) and longest == 2


class TestFormat:
    def test_round_trip(self):
        m = peninsula_matrix()
        m.cells[3, 0, 0] = D
        m.meta = {"scenario": "x"}
        again = parse_matrix(format_matrix(m).splitlines())
        assert again.vps == m.vps and again.blocks == m.blocks
        assert (again.cells == m.cells).all()
        assert again.round_seconds == 660 and again.meta == {"scenario": "x"}

    def test_header_required(self):
        with pytest.raises(FormatError):
            parse_matrix(["c blk +-+"])

    def test_bad_symbol(self):
        with pytest.raises(FormatError) as err:
            parse_matrix(["#vps=1 blocks=1 rounds=3 round_seconds=660", "c blk +x+"], "m.txt")
        assert err.value.line == 2

    def test_wrong_length(self):
        with pytest.raises(FormatError):
            parse_matrix(["#vps=1 blocks=1 rounds=3", "c blk ++"])

    def test_evidence_round_trip(self, tmp_path):
        ev = LocalEvidence({("b", 0): True, ("b", 1): False})
        p = tmp_path / "ev.csv"
        p.write_text(format_evidence(ev))
        assert load_evidence(p).alive == ev.alive

    def test_evidence_bad_value(self, tmp_path):
        p = tmp_path / "ev.csv"
        p.write_text("block,round,alive\nb,0,maybe\n")
        with pytest.raises(FormatError) as err:
            load_evidence(p)
        assert err.value.line == 2
