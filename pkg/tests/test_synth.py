import numpy as np
import pytest

from strokenet.core import AD, HC, recordings_to_bytes, validate_recording
from strokenet.dataset import extract_all
from strokenet.kinematics import FEATURE_NAMES
from strokenet.synth import (NULL_EFFECT, ClassEffect, GeneratorConfig, Segment, Trajectory, cohens_d,
                             generate_cohort, inject_class_effect, render)

SPEED = FEATURE_NAMES.index("mean_speed")
JERK = FEATURE_NAMES.index("abs_jerk")
TASKS = (1, 2, 3, 4, 5, 6)


def _per_subject(table, column, pen_down_only=True):
    out = {}
    for tf in table:
        rows = tf.features
        if pen_down_only:
            rows = rows[rows[:, FEATURE_NAMES.index("pen_up_ratio")] == 0.0]
        out.setdefault(tf.subject_id, []).append(rows[:, column])
    return {k: np.concatenate(v) for k, v in out.items()}


@pytest.fixture(scope="module")
def default_30():
    cfg = GeneratorConfig(seed=7, n_ad=30, n_hc=30, tasks=TASKS)
    subjects, recs = generate_cohort(cfg)
    return subjects, extract_all(recs)


def test_counts_and_all_tasks():
    cfg = GeneratorConfig(seed=7, n_ad=10, n_hc=10, tasks=(1, 34), strokes_per_task=(4, 6))
    subjects, recs = generate_cohort(cfg)
    assert len(subjects) == 20
    assert sum(s.label == AD for s in subjects) == 10
    assert len(recs) == 20 * 2
    assert {(r.subject_id, r.task_id) for r in recs} == {(s.subject_id, t) for s in subjects for t in (1, 34)}


def test_full_task_set_recording_count():
    cfg = GeneratorConfig(seed=7, n_ad=10, n_hc=10, strokes_per_task=(2, 3), samples_per_stroke=(5, 8))
    subjects, recs = generate_cohort(cfg)
    assert len(subjects) == 20 and len(recs) == 680


def test_same_config_same_bytes():
    cfg = GeneratorConfig(seed=3, n_ad=2, n_hc=2, tasks=(5, 9))
    a = recordings_to_bytes(generate_cohort(cfg)[1])
    b = recordings_to_bytes(generate_cohort(cfg)[1])
    assert a == b
    c = recordings_to_bytes(generate_cohort(GeneratorConfig(seed=4, n_ad=2, n_hc=2, tasks=(5, 9)))[1])
    assert a != c


def test_parallel_generation_matches_serial():
    cfg = GeneratorConfig(seed=3, n_ad=2, n_hc=2, tasks=(5,))
    assert generate_cohort(cfg, jobs=2) == generate_cohort(cfg)


def test_every_recording_validates_for_several_seeds():
    for seed in (0, 1, 99):
        _, recs = generate_cohort(GeneratorConfig(seed=seed, n_ad=2, n_hc=2, tasks=(1, 17, 34)))
        assert all(validate_recording(r) == [] for r in recs)


@pytest.mark.parametrize("kw", [dict(n_ad=0), dict(n_hc=0), dict(samples_per_stroke=(10, 5)), dict(tasks=(0,))])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        GeneratorConfig(**kw)


def test_effect_multipliers_must_be_positive():
    with pytest.raises(ValueError):
        ClassEffect(velocity_scale=0.0)


def _traj():
    segs = (Segment((0.0, 0.0), (10.0, 0.0), 0.0, 0.5, True, 500.0, "constant"),
            Segment((10.0, 0.0), (14.0, 0.0), 0.0, 0.2, False, 0.0, "constant"))
    return Trajectory(segs, 0.0, 1)


def test_hc_is_identity():
    t = _traj()
    assert inject_class_effect(t, HC, ClassEffect()) is t


def test_constant_speed_segment_slows_by_velocity_scale():
    base = _traj()
    v = 10.0 / 0.5
    ad = inject_class_effect(base, AD, ClassEffect(velocity_scale=0.7, jerk_scale=1.0, pause_scale=1.0))
    pts = render(ad)[0]
    t = np.array([p.t for p in pts])
    x = np.array([p.x for p in pts])
    speed = np.abs(np.diff(x) / np.diff(t)).mean()
    assert abs(speed - 0.7 * v) <= 0.05 * 0.7 * v


def test_ad_pauses_stretch_and_grid_stays_200hz():
    base = _traj()
    ad = inject_class_effect(base, AD, ClassEffect(0.7, 1.5, 1.4))
    assert ad.segments[1].duration == pytest.approx(0.2 / 0.7 * 1.4)
    assert ad.noise_sd == base.noise_sd * 1.5
    t = np.array([p.t for seg in render(ad) for p in seg])
    np.testing.assert_allclose(np.diff(t), 0.005, rtol=1e-9)


def test_drift_slows_later_strokes():
    segs = tuple(Segment((0.0, 0.0), (1.0, 0.0), 0.0, 0.1, True, 1.0) for _ in range(5))
    ad = inject_class_effect(Trajectory(segs, 0.0, 0), AD, ClassEffect(1.0, 1.0, 1.0, drift=0.5))
    d = [s.duration for s in ad.segments]
    assert d[0] == pytest.approx(0.1) and d[-1] == pytest.approx(0.2)
    assert all(a < b for a, b in zip(d, d[1:]))


def test_null_effect_velocity_difference_is_small():
    # stroke-level Cohen's d of average absolute velocity, 30 subjects per class
    cfg = GeneratorConfig(seed=7, n_ad=30, n_hc=30, tasks=(1, 2, 3, 4), effect=NULL_EFFECT)
    subjects, recs = generate_cohort(cfg)
    per = _per_subject(extract_all(recs), SPEED)
    lab = {s.subject_id: s.label for s in subjects}
    ad = np.concatenate([v for k, v in per.items() if lab[k] == AD])
    hc = np.concatenate([v for k, v in per.items() if lab[k] == HC])
    assert abs(cohens_d(ad, hc)) < 0.2


def test_jerk_scale_raises_ad_jerk(default_30):
    subjects, table = default_30
    per = _per_subject(table, JERK)
    lab = {s.subject_id: s.label for s in subjects}
    ad = np.mean([v.mean() for k, v in per.items() if lab[k] == AD])
    hc = np.mean([v.mean() for k, v in per.items() if lab[k] == HC])
    assert ad > hc


def _best_threshold_accuracy(values, labels):
    """Exhaustive threshold sweep in either direction (independent of any package code)."""
    best = 0.0
    cuts = sorted(set(values))
    cuts = [cuts[0] - 1] + [(a + b) / 2 for a, b in zip(cuts, cuts[1:])] + [cuts[-1] + 1]
    for c in cuts:
        for sign in (1, -1):
            pred = [int(sign * (v - c) > 0) for v in values]
            best = max(best, sum(p == y for p, y in zip(pred, labels)) / len(labels))
    return best


def test_velocity_alone_separates_classes(default_30):
    subjects, table = default_30
    per = _per_subject(table, SPEED)
    ids = sorted(per)
    lab = {s.subject_id: s.label for s in subjects}
    acc = _best_threshold_accuracy([float(per[i].mean()) for i in ids], [lab[i] for i in ids])
    assert acc >= 0.8


def test_cohens_d_arithmetic():
    assert cohens_d([1, 2, 3], [1, 2, 3]) == 0.0
    assert cohens_d([2, 3, 4], [1, 2, 3]) == pytest.approx(1.0)
