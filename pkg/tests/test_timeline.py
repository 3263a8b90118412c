import numpy as np
import pytest

from diarize_forge.errors import MalformedLineError, NonPositiveDurationError
from diarize_forge.timeline import (
    Annotation,
    Turn,
    Uem,
    crop,
    from_frames,
    merge_intervals,
    overlap_timeline,
    parse_rttm,
    parse_uem,
    regionize,
    subtract_intervals,
    to_frames,
    write_rttm,
)


def ann(rec, *turns):
    return Annotation(rec, tuple(Turn(rec, s, on, du) for s, on, du in turns))


class TestIntervalAlgebra:
    def test_merge_overlapping(self):
        assert merge_intervals([(0, 2), (1, 3)]) == ((0, 3),)

    def test_merge_touching(self):
        assert merge_intervals([(0, 1), (1, 2)]) == ((0, 2),)

    def test_merge_disjoint_sorted(self):
        assert merge_intervals([(5, 6), (0, 1)]) == ((0, 1), (5, 6))

    def test_subtract_splits(self):
        assert subtract_intervals([(0, 10)], [(2, 3), (5, 6)]) == ((0, 2), (3, 5), (6, 10))

    def test_subtract_total(self):
        assert subtract_intervals([(0, 5)], [(0, 5)]) == ()

    def test_subtract_nothing(self):
        assert subtract_intervals([(0, 5)], [(7, 9)]) == ((0, 5),)


class TestTurnAndAnnotation:
    def test_turn_validation(self):
        with pytest.raises(ValueError):
            Turn("rec", "a", 0.0, 0.0)
        with pytest.raises(ValueError):
            Turn("rec", "a", -1.0, 1.0)
        with pytest.raises(ValueError):
            Turn("rec", "", 0.0, 1.0)

    def test_same_speaker_overlaps_merged(self):
        a = ann("rec1", ("spkA", 0, 2), ("spkA", 1, 2))
        assert len(a.turns) == 1
        assert a.turns[0].onset == 0
        assert a.turns[0].duration == 3

    def test_normalization_idempotent(self):
        a = ann("rec1", ("a", 0, 2), ("a", 1, 2), ("b", 0.5, 1))
        again = Annotation(a.recording_id, a.turns)
        assert again.turns == a.turns

    def test_cross_speaker_overlap_kept(self):
        a = ann("rec1", ("a", 0, 2), ("b", 1, 2))
        assert len(a.turns) == 2

    def test_speakers_sorted(self):
        a = ann("rec1", ("z", 0, 1), ("a", 2, 1))
        assert a.speakers() == ("a", "z")

    def test_overlap_timeline(self):
        a = ann("rec1", ("a", 0, 5), ("b", 3, 5), ("c", 4, 2))
        assert overlap_timeline(a) == ((3, 6),)

    def test_recording_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Annotation("rec1", (Turn("rec2", "a", 0, 1),))


class TestRttm:
    def test_parse_single_line(self):
        anns = parse_rttm("SPEAKER rec1 1 0.50 1.25 <NA> <NA> spkA <NA> <NA>\n")
        assert len(anns) == 1
        t = anns[0].turns[0]
        assert (t.recording_id, t.speaker, t.onset, t.duration) == ("rec1", "spkA", 0.5, 1.25)

    def test_parse_empty(self):
        assert parse_rttm("") == []
        assert parse_rttm("\n  \n") == []

    def test_parse_merges_same_speaker(self):
        text = ("SPEAKER rec1 1 0 2 <NA> <NA> spkA <NA> <NA>\n"
                "SPEAKER rec1 1 1 2 <NA> <NA> spkA <NA> <NA>\n")
        anns = parse_rttm(text)
        assert [(t.onset, t.end) for t in anns[0].turns] == [(0.0, 3.0)]

    def test_parse_rejects_short_line(self):
        with pytest.raises(MalformedLineError) as err:
            parse_rttm("SPEAKER rec1 1 0 2 <NA> spkA\n")
        assert err.value.line_no == 1

    def test_parse_rejects_non_numeric(self):
        with pytest.raises(MalformedLineError):
            parse_rttm("SPEAKER rec1 1 zero 2 <NA> <NA> spkA <NA> <NA>\n")

    def test_parse_rejects_nonpositive_duration(self):
        with pytest.raises(NonPositiveDurationError) as err:
            parse_rttm("SPEAKER ok 1 0 1 <NA> <NA> a <NA> <NA>\n"
                       "SPEAKER rec1 1 0 0.0 <NA> <NA> spkA <NA> <NA>\n")
        assert err.value.line_no == 2

    def test_write_canonical(self):
        text = write_rttm([ann("rec1", ("spkA", 0.5, 1.25))])
        assert text == "SPEAKER rec1 1 0.500 1.250 <NA> <NA> spkA <NA> <NA>\n"

    def test_write_sorts(self):
        a = ann("rec1", ("b", 5, 1), ("a", 0, 1))
        lines = write_rttm([a]).splitlines()
        assert "0.000" in lines[0] and "5.000" in lines[1]

    def test_roundtrip_byte_stable(self):
        rng = np.random.default_rng(7)
        turns = []
        for i in range(40):
            on = round(float(rng.uniform(0, 100)), 3)
            du = round(float(rng.uniform(0.05, 5)), 3)
            turns.append((f"spk{i % 5}", on, du))
        first = write_rttm([ann("rec1", *turns)])
        second = write_rttm(parse_rttm(first))
        assert second == first


class TestUemAndCrop:
    def test_parse_uem(self):
        uem = parse_uem("rec1 1 0.0 10.0\nrec1 1 20.0 30.0\n")
        assert uem.intervals("rec1") == ((0.0, 10.0), (20.0, 30.0))
        assert uem.intervals("other") is None

    def test_uem_roundtrip(self):
        from diarize_forge.timeline import write_uem

        text = "rec1 1 0.000 10.000\nrec1 1 20.000 30.000\nrec2 1 5.500 9.250\n"
        assert write_uem(parse_uem(text)) == text

    def test_crop_simple(self):
        out = crop(ann("rec1", ("a", 0, 10)), Uem({"rec1": ((2.0, 8.0),)}))
        assert [(t.onset, t.end) for t in out.turns] == [(2.0, 8.0)]

    def test_crop_drops_outside(self):
        out = crop(ann("rec1", ("a", 0, 1)), Uem({"rec1": ((2.0, 3.0),)}))
        assert out.turns == ()

    def test_crop_splits(self):
        out = crop(ann("rec1", ("a", 0, 10)), Uem({"rec1": ((1.0, 2.0), (5.0, 6.0))}))
        assert [(t.onset, t.end) for t in out.turns] == [(1.0, 2.0), (5.0, 6.0)]

    def test_crop_identity_without_coverage(self):
        a = ann("rec1", ("a", 0, 10))
        assert crop(a, Uem({})) is a

    def test_crop_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            turns = [(f"s{i}", float(rng.uniform(0, 50)), float(rng.uniform(0.1, 5)))
                     for i in range(8)]
            a = ann("rec1", *turns)
            u = Uem({"rec1": ((float(rng.uniform(0, 25)), float(rng.uniform(25, 50))),)})
            assert crop(a, u).total_speech() <= a.total_speech() + 1e-9


class TestRegionize:
    def test_basic_regions(self):
        regions = regionize(ann("r", ("A", 0, 10)), ann("r", ("X", 0, 8)), (0, 10))
        assert [(g.start, g.end) for g in regions] == [(0, 8), (8, 10)]
        assert regions[0].active_ref == {"A"}
        assert regions[0].active_hyp == {"X"}
        assert regions[1].active_hyp == frozenset()

    def test_identical_inputs(self):
        a = ann("r", ("A", 0, 5), ("B", 3, 4))
        for g in regionize(a, a, (0, 8)):
            assert g.active_ref == g.active_hyp

    def test_empty_hyp(self):
        regions = regionize(ann("r", ("A", 1, 2)), Annotation("r"), (0, 4))
        assert [(g.start, g.end) for g in regions] == [(0, 1), (1, 3), (3, 4)]
        assert all(g.active_hyp == frozenset() for g in regions)

    def test_tiles_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            ref = ann("r", *[(f"s{i}", float(rng.uniform(0, 20)), float(rng.uniform(0.1, 4)))
                             for i in range(6)])
            hyp = ann("r", *[(f"h{i}", float(rng.uniform(0, 20)), float(rng.uniform(0.1, 4)))
                             for i in range(6)])
            regions = regionize(ref, hyp, (0.0, 25.0))
            assert abs(sum(g.duration for g in regions) - 25.0) < 1e-9


class TestFrames:
    def test_center_rule(self):
        mat = to_frames(ann("r", ("a", 0, 0.1)), 0.05, 4)
        assert mat.tolist() == [[1, 1, 0, 0]]

    def test_empty_annotation(self):
        mat = to_frames(Annotation("r"), 0.01, 10)
        assert mat.shape == (0, 10)

    def test_roundtrip_aligned(self):
        a = ann("r", ("a", 0.0, 0.5), ("b", 0.3, 0.4), ("a", 1.0, 0.2))
        mat = to_frames(a, 0.1, 15)
        back = from_frames(mat, a.speakers(), 0.1, "r")
        assert len(back.turns) == len(a.turns)
        for got, want in zip(back.turns, a.turns):
            assert got.speaker == want.speaker
            assert got.onset == pytest.approx(want.onset, abs=1e-9)
            assert got.end == pytest.approx(want.end, abs=1e-9)

    def test_speaker_rows_sorted(self):
        a = ann("r", ("z", 0, 1), ("a", 2, 1))
        mat = to_frames(a, 0.5, 6)
        assert mat[0].tolist() == [0, 0, 0, 0, 1, 1]  # "a" row first
