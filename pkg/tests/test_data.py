import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitlstm.data import (
    Cohort,
    GaitRecording,
    Manifest,
    NormStats,
    Segment,
    ShortRecordingWarning,
    SplitSpec,
    apply_normalization,
    fit_normalization,
    ingest,
    label_from_name,
    parse_recording,
    read_label_sidecar,
    segment_recording,
    split,
)
from gaitlstm.errors import InvalidInputError, LabelError, ParseError, SplitError

from conftest import write_recording


def rows(n, cols=19, start=0.0):
    return "".join(
        " ".join(f"{start + k * 0.01:.2f}" if c == 0 else f"{(k * 7 + c) % 50:.1f}" for c in range(cols)) + "\n"
        for k in range(n)
    )


def recording(n_frames, cohort=Cohort.PD, rec_id="GaPt01_01"):
    frames = np.column_stack([np.arange(n_frames) / 100.0, np.arange(n_frames * 18).reshape(n_frames, 18)])
    return GaitRecording(rec_id, rec_id.split("_")[0], cohort, frames.astype(float))


def test_parse_three_lines():
    rec = parse_recording(io.StringIO(rows(3)), name="GaCo05_02.txt")
    assert rec.n_frames == 3
    assert rec.frames.shape == (3, 19)
    assert rec.cohort is Cohort.CONTROL
    assert rec.subject_id == "GaCo05"
    assert rec.recording_id == "GaCo05_02"


def test_parse_bytes_and_tabs():
    text = rows(2).replace(" ", "\t").encode()
    rec = parse_recording(io.BytesIO(text), name="JuPt11_01.txt")
    assert rec.cohort is Cohort.PD
    assert rec.n_frames == 2


def test_parse_wrong_column_count_names_line():
    text = rows(2) + rows(1, cols=18, start=1.0)
    with pytest.raises(ParseError, match=r":3: expected 19 columns, found 18"):
        parse_recording(io.StringIO(text), name="GaCo01_01.txt")


def test_parse_non_numeric():
    text = rows(1) + "0.5 " + "x " * 18 + "\n"
    with pytest.raises(ParseError, match=r":2: non-numeric"):
        parse_recording(io.StringIO(text), name="GaCo01_01.txt")


def test_parse_time_must_increase():
    with pytest.raises(ParseError, match="strictly increasing"):
        parse_recording(io.StringIO(rows(2) + rows(1)), name="GaCo01_01.txt")


def test_labels_from_file_names():
    assert label_from_name("GaCo01_01.txt")[2] is Cohort.CONTROL
    assert label_from_name("SiPt40_10.txt") == ("SiPt40_10", "SiPt40", Cohort.PD)
    with pytest.raises(LabelError):
        label_from_name("demographics.txt")
    with pytest.raises(LabelError):
        parse_recording(io.StringIO(rows(2)), name="walk01.txt")
    rec = parse_recording(io.StringIO(rows(2)), name="walk01.txt", label="Control")
    assert rec.cohort is Cohort.CONTROL
    assert parse_recording(io.StringIO(rows(2)), name="walk01.txt", require_label=False).cohort is None


def test_label_override_beats_name(tmp_path):
    p = write_recording(tmp_path / "GaCo01_01.txt", 20, "Control")
    assert parse_recording(p, label=Cohort.PD).cohort is Cohort.PD


def test_sidecar(tmp_path):
    side = tmp_path / "labels.txt"
    side.write_text("# comment\nwalkA.txt PD\n\nwalkB.txt Control\n")
    assert read_label_sidecar(side) == {"walkA.txt": Cohort.PD, "walkB.txt": Cohort.CONTROL}
    side.write_text("walkA.txt\n")
    with pytest.raises(ParseError):
        read_label_sidecar(side)


def test_negative_forces_counted_not_fatal(tmp_path):
    p = write_recording(tmp_path / "GaPt02_01.txt", 100, "PD", negative_every=10)
    rec = parse_recording(p)
    assert rec.negative_force_count == 10


@pytest.mark.parametrize("n_frames,expected", [(1000, 2), (12119, 24), (500, 1), (999, 1)])
def test_segment_counts(n_frames, expected):
    segs = segment_recording(recording(n_frames))
    assert len(segs) == expected
    assert all(s.features.shape == (500, 18) for s in segs)
    assert [s.segment_index for s in segs] == list(range(expected))
    assert all(s.label is Cohort.PD and s.source_subject == "GaPt01" for s in segs)


def test_short_recording_warns():
    with pytest.warns(ShortRecordingWarning):
        assert segment_recording(recording(499)) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3000), st.integers(1, 700))
def test_windowing_is_lossless(n_frames, window):
    rec = recording(max(n_frames, 1))
    with _maybe_warn(rec.n_frames < window):
        segs = segment_recording(rec, window)
    assert len(segs) == rec.n_frames // window
    if segs:
        joined = np.concatenate([s.features for s in segs])
        np.testing.assert_array_equal(joined, rec.features[: len(segs) * window])


class _maybe_warn:
    def __init__(self, expect):
        self.expect = expect

    def __enter__(self):
        import warnings

        self._cm = warnings.catch_warnings(record=True)
        self.caught = self._cm.__enter__()
        warnings.simplefilter("always")
        return self

    def __exit__(self, *exc):
        self._cm.__exit__(*exc)
        got = any(issubclass(w.category, ShortRecordingWarning) for w in self.caught)
        assert got == self.expect


def test_segment_window_validation():
    with pytest.raises(InvalidInputError):
        segment_recording(recording(10), 0)


# -- normalization ------------------------------------------------------------


def seg(features, label=Cohort.PD, subject="GaPt01", index=0):
    return Segment(np.asarray(features, dtype=float), label, subject, index, f"{subject}_01")


def two_pass(column):
    n = len(column)
    mean = 0.0
    for v in column:
        mean += v
    mean /= n
    var = 0.0
    for v in column:
        var += (v - mean) ** 2
    return mean, (var / n) ** 0.5


def test_normalization_against_two_pass_oracle():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(50, 3))
    a[:, 1] = 0.0
    a[40:, 1] = 100.0
    a[:, 2] = 7.0
    b = rng.normal(size=(50, 3)) * 4 + 2
    b[:, 2] = 7.0
    stats = fit_normalization([seg(a), seg(b)])
    stacked = np.vstack([a, b])
    for k in range(3):
        mean, std = two_pass(stacked[:, k].tolist())
        assert stats.mean[k] == pytest.approx(mean, abs=1e-12)
        assert stats.std[k] == pytest.approx(std if std > 0 else 1.0, rel=1e-12)
    normed = np.vstack([apply_normalization(stats, s).features for s in (seg(a), seg(b))])
    np.testing.assert_allclose(normed[:, :2].mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(normed[:, :2].std(axis=0), 1.0, atol=1e-9)
    np.testing.assert_array_equal(normed[:, 2], 0.0)


def test_normalization_idempotent_on_standardized():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 4))
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    s = seg(x)
    out = apply_normalization(fit_normalization([s]), s)
    np.testing.assert_allclose(out.features, x, atol=1e-9)


def test_normalization_needs_data():
    with pytest.raises(InvalidInputError):
        fit_normalization([])


# -- splitting ----------------------------------------------------------------


def labelled(n_pd, n_co, per_subject=1):
    out = []
    for k in range(n_pd + n_co):
        label = Cohort.PD if k < n_pd else Cohort.CONTROL
        tag = "Pt" if label is Cohort.PD else "Co"
        out.append(seg(np.full((2, 2), k), label, f"Ga{tag}{k // per_subject:02d}", k % per_subject))
    return out


def test_segment_split_sizes():
    tr, va = split(labelled(5, 5), SplitSpec(0.7, "segment", seed=1, stratified=False))
    assert (len(tr), len(va)) == (7, 3)


def test_stratified_split_counts():
    tr, va = split(labelled(60, 40), SplitSpec(0.7, "segment", seed=3))
    assert sum(s.label is Cohort.PD for s in tr) == 42
    assert sum(s.label is Cohort.CONTROL for s in tr) == 28
    assert len(va) == 30


def test_subject_split_keeps_subjects_together():
    segs = labelled(30, 30, per_subject=3)
    tr, va = split(segs, SplitSpec(0.7, "subject", seed=5))
    assert {s.source_subject for s in tr}.isdisjoint({s.source_subject for s in va})
    assert len(tr) + len(va) == len(segs)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 10**6), st.sampled_from(["segment", "subject"]),
       st.floats(0.05, 0.95))
def test_split_is_partition_and_reproducible(n_pd, n_co, seed, mode, frac):
    segs = labelled(n_pd, n_co, per_subject=2)
    spec = SplitSpec(frac, mode, seed=seed)
    tr, va = split(segs, spec)
    ids = sorted(id(s) for s in tr + va)
    assert ids == sorted(id(s) for s in segs)
    assert not {id(s) for s in tr} & {id(s) for s in va}
    tr2, va2 = split(segs, spec)
    assert [id(s) for s in tr] == [id(s) for s in tr2]
    if mode == "segment":
        for label in Cohort:
            n = sum(s.label is label for s in segs)
            got = sum(s.label is label for s in tr)
            assert abs(got - frac * n) <= 1


def test_split_errors():
    with pytest.raises(SplitError):
        split(labelled(1, 0), SplitSpec())
    with pytest.raises(SplitError):
        split(labelled(6, 0), SplitSpec(0.7, "segment", stratified=True))
    with pytest.raises(SplitError):
        split(labelled(2, 0, per_subject=2), SplitSpec(0.7, "subject", stratified=False))
    with pytest.raises(SplitError):
        SplitSpec(1.0)


# -- ingest / manifest -------------------------------------------------------


def test_ingest_and_manifest_round_trip(gait_dir, tmp_path):
    manifest, report = ingest(gait_dir, SplitSpec(0.7, "segment", seed=11))
    assert report.files_parsed == 8
    assert report.skipped == ["format.txt"]
    assert sum(report.segments_per_class.values()) == len(manifest.segments)
    path = tmp_path / "m.txt"
    manifest.write(path)
    again = Manifest.read(path)
    assert again.to_text() == manifest.to_text()
    np.testing.assert_array_equal(again.norm.mean, manifest.norm.mean)
    tr, va = again.load_segments()
    assert len(tr) + len(va) == len(manifest.segments)
    stacked = np.concatenate([s.features for s in tr])
    np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-9)


def test_ingest_two_files(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    write_recording(d / "GaCo01_01.txt", 1000, "Control")
    write_recording(d / "GaPt01_01.txt", 1000, "PD", seed=1)
    manifest, _ = ingest(d, SplitSpec(0.5, "segment", seed=0))
    labels = [s[3] for s in manifest.segments]
    assert labels.count("PD") == 2 and labels.count("Control") == 2


def test_ingest_without_normalization_records_identity(gait_dir):
    manifest, _ = ingest(gait_dir, SplitSpec(seed=1), normalize=False)
    np.testing.assert_array_equal(manifest.norm.mean, 0.0)
    np.testing.assert_array_equal(manifest.norm.std, 1.0)


def test_ingest_empty_dir(tmp_path):
    with pytest.raises(InvalidInputError):
        ingest(tmp_path, SplitSpec())


def test_identity_norm():
    n = NormStats.identity(3)
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(n.apply(x), x)
