"""VGRF recording ingestion: parsing, labeling, windowing, normalization, splits.

Recordings follow the PhysioNet gait-in-Parkinson's layout: 19 whitespace
separated columns per line, sampled at 100 Hz.

======  ==========================================
column  content
======  ==========================================
1       time (s)
2-9     left-foot sensors L1..L8 (N)
10-17   right-foot sensors R1..R8 (N)
18      total left-foot force
19      total right-foot force
======  ==========================================

File names look like ``GaPt03_01.txt``: a two-letter study prefix, ``Co``
(control) or ``Pt`` (patient), the subject number, then the walk number.
"""

from __future__ import annotations

import io
import logging
import math
import os
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, LabelError, ParseError, SplitError

log = logging.getLogger(__name__)

N_COLUMNS = 19
N_FEATURES = 18
WINDOW = 500
SAMPLE_RATE_HZ = 100
MAX_FRAMES = 10**6

FEATURE_NAMES = (
    [f"L{k}" for k in range(1, 9)] + [f"R{k}" for k in range(1, 9)] + ["L_total", "R_total"]
)

NAME_PATTERN = re.compile(r"^(?P<subject>[A-Za-z]{2}(?P<cohort>Co|Pt)\d+)(?:_(?P<walk>\w+))?$")


class Cohort(IntEnum):
    """Class indices. Control sorts first so argmax ties resolve to it."""

    CONTROL = 0
    PD = 1

    @property
    def label(self) -> str:
        return "Control" if self is Cohort.CONTROL else "PD"

    @classmethod
    def parse(cls, text: str) -> "Cohort":
        t = text.strip().lower()
        if t in ("control", "co", "0"):
            return cls.CONTROL
        if t in ("pd", "pt", "1"):
            return cls.PD
        raise LabelError(f"unknown cohort label {text!r} (expected PD or Control)")


class ShortRecordingWarning(UserWarning):
    """A recording is shorter than one window and yields no segments."""


@dataclass
class GaitRecording:
    recording_id: str
    subject_id: str
    cohort: Cohort | None
    frames: np.ndarray
    source: str = ""
    negative_force_count: int = 0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def features(self) -> np.ndarray:
        return self.frames[:, 1:]


@dataclass
class Segment:
    features: np.ndarray
    label: Cohort | None
    source_subject: str
    segment_index: int
    recording_id: str = ""

    @property
    def segment_id(self) -> str:
        return f"{self.recording_id or self.source_subject}#{self.segment_index}"


def label_from_name(name: str) -> tuple[str, str, Cohort]:
    """``(recording_id, subject_id, cohort)`` from a gaitpdb-style file name."""
    stem = Path(name).name
    for suffix in (".txt", ".csv", ".dat"):
        if stem.lower().endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    m = NAME_PATTERN.match(stem)
    if not m:
        raise LabelError(
            f"cannot infer PD/Control from file name {name!r}; supply a label override"
        )
    cohort = Cohort.CONTROL if m.group("cohort") == "Co" else Cohort.PD
    return stem, m.group("subject"), cohort


def read_label_sidecar(path) -> dict[str, Cohort]:
    """Lines ``<filename> <PD|Control>``; blank lines and ``#`` comments ignored."""
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected '<filename> <PD|Control>'", path, lineno)
            labels[parts[0]] = Cohort.parse(parts[1])
    return labels


def parse_recording(
    source,
    name: str | None = None,
    label: Cohort | str | None = None,
    require_label: bool = True,
) -> GaitRecording:
    """Parse one recording from a path or a text/byte stream.

    ``name`` overrides the file name used for identity and labeling (needed
    for streams). An explicit ``label`` wins over the name convention. With
    ``require_label=False`` an unrecognized name yields ``cohort=None``.
    """
    if isinstance(source, (str, os.PathLike)):
        path = str(source)
        name = name or Path(path).name
        with open(path, "rb") as fh:
            raw = fh.read()
    else:
        path = name or getattr(source, "name", "<stream>")
        raw = source.read()
        name = name or Path(str(path)).name
    text = raw.decode("utf-8", errors="strict") if isinstance(raw, bytes) else raw

    if isinstance(label, str):
        label = Cohort.parse(label)
    try:
        rec_id, subject, cohort = label_from_name(name)
    except LabelError:
        if label is None and require_label:
            raise
        rec_id = Path(name).stem
        subject, cohort = rec_id.split("_")[0], None
    if label is not None:
        cohort = label

    rows = []
    for lineno, line in enumerate(io.StringIO(text), 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise ParseError(f"expected {N_COLUMNS} columns, found {len(tokens)}", path, lineno)
        try:
            values = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise ParseError(f"non-numeric token ({exc})", path, lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", path, lineno)
        if rows and values[0] <= rows[-1][0]:
            raise ParseError(
                f"time column not strictly increasing ({values[0]} after {rows[-1][0]})", path, lineno
            )
        rows.append(values)
        if len(rows) > MAX_FRAMES:
            raise ParseError(f"more than {MAX_FRAMES} frames", path, lineno)
    if not rows:
        raise ParseError("no data rows", path)

    frames = np.array(rows, dtype=np.float64)
    negatives = int(np.count_nonzero(frames[:, 1:] < 0))
    if negatives:
        log.info("%s: %d negative force readings kept", name, negatives)
    return GaitRecording(rec_id, subject, cohort, frames, str(path), negatives)


def segment_recording(r: GaitRecording, window: int = WINDOW) -> list[Segment]:
    """Non-overlapping ``window``-frame chunks of the 18 force columns; the tail is dropped."""
    if window < 1:
        raise InvalidInputError(f"window must be >= 1, got {window}")
    n = r.n_frames // window
    if n == 0:
        warnings.warn(
            f"{r.recording_id}: {r.n_frames} frames is shorter than one {window}-frame window; "
            "no segments produced",
            ShortRecordingWarning,
            stacklevel=2,
        )
        return []
    feats = r.features
    return [
        Segment(
            np.ascontiguousarray(feats[k * window:(k + 1) * window]),
            r.cohort,
            r.subject_id,
            k,
            r.recording_id,
        )
        for k in range(n)
    ]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, n_features: int = N_FEATURES) -> "NormStats":
        return cls(np.zeros(n_features), np.ones(n_features))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def fit_normalization(train_segments: Sequence[Segment]) -> NormStats:
    """Per-column z-score statistics over all training frames (population std)."""
    if not train_segments:
        raise InvalidInputError("need at least one training segment to fit normalization")
    stacked = np.concatenate([s.features for s in train_segments], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return NormStats(mean, std)


def apply_normalization(stats: NormStats, segment: Segment) -> Segment:
    return Segment(
        stats.apply(segment.features),
        segment.label,
        segment.source_subject,
        segment.segment_index,
        segment.recording_id,
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    mode: str = "segment"
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise SplitError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.mode not in ("segment", "subject"):
            raise SplitError(f"split mode must be 'segment' or 'subject', got {self.mode!r}")


def _n_train(n: int, frac: float) -> int:
    return int(math.floor(n * frac + 0.5))


def _partition(groups: list, labels: list[Cohort], spec: SplitSpec, rng) -> tuple[set, set]:
    """Assign group indices to train/val, optionally per class."""
    idx = np.arange(len(groups))
    if spec.stratified:
        classes = sorted(set(labels))
        if len(classes) < 2:
            raise SplitError("stratified split needs both classes present")
        buckets = [idx[np.array([l == c for l in labels])] for c in classes]
    else:
        buckets = [idx]
    train, val = set(), set()
    for b in buckets:
        b = b[rng.permutation(len(b))]
        k = _n_train(len(b), spec.train_fraction)
        train.update(int(i) for i in b[:k])
        val.update(int(i) for i in b[k:])
    # keep both sides non-empty
    if not val:
        moved = max(train)
        train.discard(moved)
        val.add(moved)
    if not train:
        moved = min(val)
        val.discard(moved)
        train.add(moved)
    return train, val


def split(segments: Sequence[Segment], spec: SplitSpec, rng: np.random.Generator | None = None):
    """Partition segments into (train, validation), preserving input order on each side.

    ``segment`` mode splits segments directly; ``subject`` mode keeps all of a
    subject's segments on one side.
    """
    if len(segments) < 2:
        raise SplitError(f"need at least 2 segments to split, got {len(segments)}")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if spec.mode == "segment":
        tr, va = _partition(list(range(len(segments))), [s.label for s in segments], spec, rng)
        train_idx, val_idx = tr, va
    else:
        subjects: dict[str, Cohort] = {}
        for s in segments:
            prev = subjects.setdefault(s.source_subject, s.label)
            if prev != s.label:
                raise SplitError(f"subject {s.source_subject} has segments with both labels")
        names = sorted(subjects)
        if len(names) < 2:
            raise SplitError(f"subject-level split needs at least 2 subjects, got {len(names)}")
        tr, va = _partition(names, [subjects[n] for n in names], spec, rng)
        train_subj = {names[i] for i in tr}
        train_idx = {i for i, s in enumerate(segments) if s.source_subject in train_subj}
        val_idx = set(range(len(segments))) - train_idx
    train_set = [segments[i] for i in sorted(train_idx)]
    val_set = [segments[i] for i in sorted(val_idx)]
    return train_set, val_set


def class_counts(segments: Iterable[Segment]) -> dict[str, int]:
    c = Counter(s.label.label for s in segments)
    return {"PD": c.get("PD", 0), "Control": c.get("Control", 0)}


def stack_segments(segments: Sequence[Segment]) -> tuple[np.ndarray, np.ndarray]:
    """(N, T, 18) feature array and (N,) integer labels."""
    if not segments:
        return np.zeros((0, WINDOW, N_FEATURES)), np.zeros(0, dtype=np.int64)
    xs = np.stack([s.features for s in segments])
    ys = np.array([int(s.label) for s in segments], dtype=np.int64)
    return xs, ys


# ---------------------------------------------------------------------------
# ingest: directory -> segments -> split -> manifest


@dataclass
class QualityReport:
    files_seen: int = 0
    files_parsed: int = 0
    skipped: list[str] = field(default_factory=list)
    frame_counts: dict[str, int] = field(default_factory=dict)
    negative_force: dict[str, int] = field(default_factory=dict)
    short_recordings: list[str] = field(default_factory=list)
    segments_per_class: dict[str, int] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"files_seen {self.files_seen}",
            f"files_parsed {self.files_parsed}",
            f"files_skipped {len(self.skipped)}",
        ]
        lines += [f"skipped {name}" for name in self.skipped]
        total_frames = sum(self.frame_counts.values())
        lines.append(f"total_frames {total_frames}")
        if self.frame_counts:
            lines.append(f"min_frames {min(self.frame_counts.values())}")
            lines.append(f"max_frames {max(self.frame_counts.values())}")
        lines.append(f"negative_force_readings {sum(self.negative_force.values())}")
        for k in sorted(self.segments_per_class):
            lines.append(f"segments_{k} {self.segments_per_class[k]}")
        lines += [f"short_recording {name}" for name in self.short_recordings]
        for name in sorted(self.frame_counts):
            lines.append(f"file {name} frames={self.frame_counts[name]} negative={self.negative_force.get(name, 0)}")
        return "\n".join(lines) + "\n"


def load_directory(
    data_dir, labels: dict[str, Cohort] | None = None
) -> tuple[list[GaitRecording], QualityReport]:
    """Parse every recording in ``data_dir`` in sorted name order.

    Files whose names follow neither the cohort convention nor the sidecar are
    skipped and listed in the report; parse errors in recognized files are fatal.
    """
    labels = labels or {}
    report = QualityReport()
    recordings = []
    for path in sorted(Path(data_dir).iterdir()):
        if not path.is_file() or path.suffix.lower() != ".txt":
            continue
        report.files_seen += 1
        override = labels.get(path.name)
        if override is None:
            try:
                label_from_name(path.name)
            except LabelError:
                report.skipped.append(path.name)
                continue
        rec = parse_recording(path, label=override)
        recordings.append(rec)
        report.files_parsed += 1
        report.frame_counts[path.name] = rec.n_frames
        report.negative_force[path.name] = rec.negative_force_count
    return recordings, report


def segment_all(recordings: Iterable[GaitRecording], window: int = WINDOW, report: QualityReport | None = None):
    out = []
    for rec in recordings:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ShortRecordingWarning)
            segs = segment_recording(rec, window)
        for w in caught:
            if report is not None:
                report.short_recordings.append(Path(rec.source).name or rec.recording_id)
            log.warning("%s", w.message)
        out.extend(segs)
    return out


MANIFEST_HEADER = "# gaitlstm manifest v1"


@dataclass
class Manifest:
    data_dir: str
    window: int
    seed: int
    split_spec: SplitSpec
    normalize: bool
    norm: NormStats
    recordings: list[tuple[str, str, str, int, int]]  # file, recording id, label, frames, negatives
    segments: list[tuple[str, str, int, str, str]]  # segment id, file, index, label, split
    labels_file: str = ""

    def to_text(self) -> str:
        out = [
            MANIFEST_HEADER,
            f"data_dir {self.data_dir}",
            f"labels_file {self.labels_file or '-'}",
            f"window {self.window}",
            f"seed {self.seed}",
            f"split_mode {self.split_spec.mode}",
            f"stratified {int(self.split_spec.stratified)}",
            f"train_fraction {self.split_spec.train_fraction!r}",
            f"normalize {int(self.normalize)}",
        ]
        for k, (m, s) in enumerate(zip(self.norm.mean, self.norm.std)):
            out.append(f"norm {k} {float(m)!r} {float(s)!r}")
        for rec in self.recordings:
            out.append("recording " + " ".join(str(v) for v in rec))
        for seg in self.segments:
            out.append("segment " + " ".join(str(v) for v in seg))
        return "\n".join(out) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Manifest":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise ParseError(f"not a manifest (expected header {MANIFEST_HEADER!r})", path, 1)
        kv = {}
        means, stds, recs, segs = {}, {}, [], []
        for lineno, line in enumerate(lines[1:], 2):
            if not line.strip():
                continue
            key, _, rest = line.partition(" ")
            try:
                if key == "norm":
                    k, m, s = rest.split()
                    means[int(k)] = float(m)
                    stds[int(k)] = float(s)
                elif key == "recording":
                    f, rid, lab, n, neg = rest.split()
                    recs.append((f, rid, lab, int(n), int(neg)))
                elif key == "segment":
                    sid, f, idx, lab, side = rest.split()
                    segs.append((sid, f, int(idx), lab, side))
                else:
                    kv[key] = rest
            except ValueError:
                raise ParseError(f"malformed {key!r} line", path, lineno) from None
        n = len(means)
        if sorted(means) != list(range(n)):
            raise ParseError("normalization rows are not numbered 0..n-1", path)
        spec = SplitSpec(
            train_fraction=float(kv["train_fraction"]),
            mode=kv["split_mode"],
            seed=int(kv["seed"]),
            stratified=bool(int(kv["stratified"])),
        )
        return cls(
            data_dir=kv["data_dir"],
            window=int(kv["window"]),
            seed=int(kv["seed"]),
            split_spec=spec,
            normalize=bool(int(kv["normalize"])),
            norm=NormStats(np.array([means[k] for k in range(n)]), np.array([stds[k] for k in range(n)])),
            recordings=recs,
            segments=segs,
            labels_file="" if kv.get("labels_file", "-") == "-" else kv["labels_file"],
        )

    def load_segments(self, normalized: bool = True) -> tuple[list[Segment], list[Segment]]:
        """Re-read the recordings and rebuild the (train, val) segment lists."""
        labels = read_label_sidecar(self.labels_file) if self.labels_file else {}
        by_file: dict[str, list[Segment]] = {}
        for f, _rid, lab, n_frames, _neg in self.recordings:
            rec = parse_recording(Path(self.data_dir) / f, label=labels.get(f))
            if rec.n_frames != n_frames:
                raise ParseError(f"manifest lists {n_frames} frames but file has {rec.n_frames}", f)
            if rec.cohort.label != lab:
                raise LabelError(f"{f}: manifest label {lab} disagrees with file label {rec.cohort.label}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ShortRecordingWarning)
                by_file[f] = segment_recording(rec, self.window)
        train, val = [], []
        for sid, f, idx, _lab, side in self.segments:
            seg = by_file[f][idx]
            if normalized:
                seg = apply_normalization(self.norm, seg)
            (train if side == "train" else val).append(seg)
        return train, val


def ingest(
    data_dir,
    spec: SplitSpec,
    normalize: bool = True,
    labels_file=None,
    window: int = WINDOW,
) -> tuple[Manifest, QualityReport]:
    """Parse, segment and split a recording directory into a :class:`Manifest`."""
    from .seeding import SPLIT, generator

    labels = read_label_sidecar(labels_file) if labels_file else {}
    recordings, report = load_directory(data_dir, labels)
    if not recordings:
        raise InvalidInputError(f"no parseable recordings in {data_dir}")
    segments = segment_all(recordings, window, report)
    report.segments_per_class = class_counts(segments)
    train, val = split(segments, spec, generator(spec.seed, SPLIT))
    norm = fit_normalization(train) if normalize else NormStats.identity(recordings[0].features.shape[1])

    file_of = {r.recording_id: Path(r.source).name for r in recordings}
    side = {id(s): "train" for s in train}
    side.update({id(s): "val" for s in val})
    return (
        Manifest(
            data_dir=str(Path(data_dir).resolve()),
            window=window,
            seed=spec.seed,
            split_spec=spec,
            normalize=normalize,
            norm=norm,
            recordings=[
                (Path(r.source).name, r.recording_id, r.cohort.label, r.n_frames, r.negative_force_count)
                for r in recordings
            ],
            segments=[
                (s.segment_id, file_of[s.recording_id], s.segment_index, s.label.label, side[id(s)])
                for s in segments
            ],
            labels_file=str(Path(labels_file).resolve()) if labels_file else "",
        ),
        report,
    )
