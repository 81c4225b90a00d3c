import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from strokenet.core import (AD, HC, DataError, PenSample, Stroke, SubjectRecord, TaskRecording, encode_statics,
                            read_recordings, read_subjects, recordings_to_bytes, validate_recording,
                            write_recordings, write_subjects)


def _recording(times, on=True, pressure=0.5, task=1):
    samples = tuple(PenSample(t, float(i), 0.0, pressure if on else 0.0, on) for i, t in enumerate(times))
    return TaskRecording("S001", task, (Stroke(samples, 1),))


def test_valid_recording_has_no_violations():
    rec = _recording([i * 0.005 for i in range(10)])
    assert validate_recording(rec) == []


def test_repeated_timestamp_minus_1ms_is_non_monotonic():
    times = [0.0, 0.005, 0.004, 0.009]
    v = validate_recording(_recording(times))
    kinds = [x.kind for x in v]
    assert kinds.count("non-monotonic time") == 1
    assert "sample 2" in str(v[kinds.index("non-monotonic time")])


def test_in_air_pressure_violation():
    samples = (PenSample(0.0, 0, 0, 0.0, False), PenSample(0.005, 1, 0, 0.4, False), PenSample(0.01, 2, 0, 0.0, False))
    rec = TaskRecording("S001", 1, (Stroke(samples, 1),))
    v = validate_recording(rec)
    assert [x.kind for x in v] == ["in-air pressure"]


@pytest.mark.parametrize("task", [0, 35])
def test_task_id_out_of_range(task):
    v = validate_recording(_recording([0.0, 0.005, 0.01], task=task))
    assert [x.kind for x in v] == ["task id out of range"]


def test_mixed_pen_state_and_gaps_in_index():
    a = (PenSample(0.0, 0, 0, 1.0, True), PenSample(0.005, 1, 0, 0.0, False))
    b = (PenSample(0.010, 0, 0, 1.0, True), PenSample(0.015, 1, 0, 1.0, True))
    rec = TaskRecording("S", 1, (Stroke(a, 1), Stroke(b, 3)))
    kinds = {x.kind for x in validate_recording(rec)}
    assert kinds == {"mixed pen state", "non-contiguous stroke index"}


def test_irregular_period():
    kinds = [x.kind for x in validate_recording(_recording([0.0, 0.005, 0.0105]))]
    assert kinds == ["irregular sampling period"]


@pytest.mark.parametrize("row, expected", [
    (("female", 71.5, "intellectual", 10.8), (0, 71.5, 0, 10.8)),
    (("male", 68.9, "manual", 12.9), (1, 68.9, 1, 12.9)),
    (("female", 1, "intellectual", 0), (0, 1, 0, 0)),
])
def test_encode_statics(row, expected):
    sex, age, work, edu = row
    out = encode_statics(SubjectRecord("S", AD, sex, age, work, edu))
    np.testing.assert_array_equal(out, np.array(expected, dtype=float))


def test_statics_examples_come_from_cohort_table(paper_text):
    for s in ("71.5 (9.5)", "10.8 (5.1)", "68.9 (12.0)", "12.9 (4.4)"):
        assert s in paper_text


def test_encode_statics_missing_field():
    with pytest.raises(DataError):
        encode_statics(SubjectRecord("S", AD, "female", None, "manual", 3.0))


def test_generator_output_validates(small_cohort):
    _, _, recs, _ = small_cohort
    assert all(validate_recording(r) == [] for r in recs)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def recordings(draw):
    n_strokes = draw(st.integers(1, 4))
    strokes, t = [], draw(st.floats(0, 100, allow_nan=False))
    for k in range(1, n_strokes + 1):
        on = draw(st.booleans())
        n = draw(st.integers(2, 6))
        samples = []
        for _ in range(n):
            samples.append(PenSample(t, draw(finite), draw(finite),
                                     draw(st.floats(0, 1e3, allow_nan=False)) if on else 0.0, on))
            t += 0.005
        strokes.append(Stroke(tuple(samples), k))
    return TaskRecording(draw(st.sampled_from(["S001", "a b", "x,y"])), draw(st.integers(1, 34)), tuple(strokes))


@settings(max_examples=60, deadline=None)
@given(st.lists(recordings(), min_size=1, max_size=3))
def test_recording_csv_roundtrip_is_bit_exact(recs):
    # distinct (subject, task) keys, since the file groups rows by them
    seen, uniq = set(), []
    for r in recs:
        if (r.subject_id, r.task_id) not in seen:
            seen.add((r.subject_id, r.task_id))
            uniq.append(r)
    buf = io.StringIO()
    write_recordings(uniq, buf)
    buf.seek(0)
    assert read_recordings(buf) == uniq


def test_subject_csv_roundtrip(tmp_path):
    subs = [SubjectRecord("S001", AD, "female", 71.5, "manual", 10.8),
            SubjectRecord("S002", HC, "male", 0.1 + 0.2, "intellectual", 0.0)]
    p = tmp_path / "s.csv"
    write_subjects(subs, p)
    assert read_subjects(p) == subs


def test_malformed_recording_row_reports_line():
    text = "subject_id,task_id,stroke_index,t,x,y,pressure,on_paper\nS,1,1,0,0,0,0,1\nS,1,1,zz,0,0,0,1\n"
    with pytest.raises(DataError, match="line 3"):
        read_recordings(io.StringIO(text))


def test_subject_file_rejects_missing_static():
    text = "subject_id,label,sex,age,work,education\nS,1,female,,manual,3\n"
    with pytest.raises(DataError, match="line 2"):
        read_subjects(io.StringIO(text))


def test_recordings_to_bytes_is_deterministic(small_cohort):
    _, _, recs, _ = small_cohort
    assert recordings_to_bytes(recs[:5]) == recordings_to_bytes(list(recs[:5]))
