import numpy as np
import pytest

from gaitlstm.data import Cohort, Segment


def write_recording(path, n_frames, cohort, seed=0, negative_every=0):
    """Synthetic 19-column VGRF file: time column plus 18 force channels.

    PD walks get a slower, lower-amplitude stride so the two classes separate.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) / 100.0
    period = 1.1 if cohort == "Control" else 1.4
    amp = 600.0 if cohort == "Control" else 380.0
    phase = rng.uniform(0, 2 * np.pi, 16)
    sensors = np.maximum(0.0, amp / 8 * np.sin(2 * np.pi * t[:, None] / period + phase)) + rng.uniform(
        0, 5, (n_frames, 16)
    )
    if negative_every:
        sensors[::negative_every, 0] = -1.5
    left = sensors[:, :8].sum(axis=1, keepdims=True)
    right = sensors[:, 8:].sum(axis=1, keepdims=True)
    frames = np.hstack([t[:, None], sensors, left, right])
    with open(path, "w") as fh:
        for row in frames:
            fh.write("\t".join(f"{v:.6f}" for v in row) + "\n")
    return path


@pytest.fixture
def gait_dir(tmp_path):
    """Four controls and four patients, 1000-1600 frames each (2-3 segments)."""
    d = tmp_path / "gaitpdb"
    d.mkdir()
    k = 0
    for cohort, tag in (("Control", "Co"), ("PD", "Pt")):
        for subj in range(1, 5):
            n = 1000 + 300 * (subj % 3)
            write_recording(d / f"Ga{tag}{subj:02d}_01.txt", n, cohort, seed=k)
            k += 1
    (d / "format.txt").write_text("column descriptions, not a recording\n")
    return d


def make_sequences(n=20, length=50, features=18, seed=0):
    """Two generators: low- and high-amplitude sinusoids with noise."""
    rng = np.random.default_rng(seed)
    segs = []
    t = np.arange(length)[:, None]
    for k in range(n):
        label = k % 2
        amp = 0.3 if label == 0 else 1.5
        x = amp * np.sin(2 * np.pi * (t / 12.0 + rng.uniform(0, 1, (1, features))))
        x = x + 0.1 * rng.normal(size=(length, features))
        segs.append(Segment(x, Cohort(label), f"s{k:02d}", 0, f"s{k:02d}_01"))
    return segs


@pytest.fixture
def synthetic_segments():
    return make_sequences()


_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not (rep.skipped or rep.failed)):
        return
    number, title = marker.args
    status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    prev = _CRITERIA.get(number)
    # one line per criterion: any failure wins, then skip, then pass
    rank = {"PASS": 0, "SKIP": 1, "FAIL": 2}
    if prev is None or rank[status] > rank[prev[1]]:
        _CRITERIA[number] = (title, status, detail or (prev[2] if prev else ""))
    elif detail and status == prev[1]:
        _CRITERIA[number] = (title, status, "; ".join(filter(None, [prev[2], detail])))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
