import io
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esae.errors import InputDomainError
from esae.sakp import (DIGEST_PATTERN, Detection, FrameDetections, GridSpec, SakpConfig,
                       canonical_digest, frame_from_json, frame_to_json, grid_index,
                       read_detection_log, select_top_k, write_detection_log)

G30 = GridSpec(30, 30)


def cell_center(g, grid=G30):
    """Normalized center of grid cell ``g``."""
    row, col = divmod(g, grid.cols)
    return (col + 0.5) / grid.cols, (row + 0.5) / grid.rows


def det(c, p, g=0, grid=G30):
    cx, cy = cell_center(g, grid)
    return Detection(c, p, cx, cy, 0.1, 0.1)


@pytest.mark.parametrize("cx, cy, expected", [
    (0.5, 0.5, 465),
    (1.0, 1.0, 899),
    (0.0, 0.0, 0),
])
def test_grid_index_examples(cx, cy, expected):
    assert grid_index(cx, cy, G30) == expected


def test_grid_index_origin_any_grid():
    for rows, cols in [(1, 1), (3, 7), (16, 9)]:
        assert grid_index(0.0, 0.0, GridSpec(rows, cols)) == 0


def test_grid_index_non_square():
    # 2 rows x 4 cols: (cx=0.6, cy=0.9) -> row 1, col 2
    assert grid_index(0.6, 0.9, GridSpec(2, 4)) == 6


@pytest.mark.parametrize("cx, cy", [(-0.01, 0.5), (0.5, 1.0001), (float("nan"), 0.2)])
def test_grid_index_rejects_outside(cx, cy):
    with pytest.raises(InputDomainError):
        grid_index(cx, cy, G30)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 64), st.integers(1, 64))
def test_grid_totality(cx, cy, rows, cols):
    g = GridSpec(rows, cols)
    assert 0 <= grid_index(cx, cy, g) < g.cells


@given(st.floats(0, 1), st.integers(1, 100), st.floats(0, 1, exclude_max=True))
def test_clamping_idempotent(y, cols, frac):
    g = GridSpec(7, cols)
    eps = frac / cols
    assert grid_index(1.0, y, g) == grid_index(1.0 - eps, y, g)


def test_grid_from_cells():
    assert GridSpec.from_cells(900) == GridSpec(30, 30)
    assert GridSpec.from_cells(100).cells == 100
    assert GridSpec.from_cells(7) == GridSpec(1, 7)


def test_select_top_k_examples():
    frame = FrameDetections(0, (det(0, .91), det(2, .88), det(16, .40)))
    assert [(d.class_id, d.confidence) for d in select_top_k(frame, 2)] == [(0, .91), (2, .88)]
    assert select_top_k(FrameDetections(0, (det(5, .7),)), 3) == [det(5, .7)]


def test_select_top_k_tie_rule():
    frame = FrameDetections(0, (det(7, .5, g=4), det(3, .5, g=10)))
    assert [d.class_id for d in select_top_k(frame, 1)] == [3]
    # equal class, equal confidence -> lower grid index wins
    frame = FrameDetections(0, (det(3, .5, g=10), det(3, .5, g=4)))
    assert select_top_k(frame, 1)[0] == det(3, .5, g=4)


def test_select_top_k_bad_k():
    with pytest.raises(InputDomainError):
        select_top_k(FrameDetections(0), 0)


def test_canonical_digest_examples():
    cfg = SakpConfig(top_k=2, grid=G30)
    dets = [det(0, .91, 12), det(2, .88, 465), det(16, .40, 12)]
    d = canonical_digest(FrameDetections(0, tuple(dets)), cfg)
    assert d.data == b"0:12|2:465"
    assert d.pair_count == 2
    for perm in itertools.permutations(dets):
        assert canonical_digest(FrameDetections(0, perm), cfg).data == b"0:12|2:465"

    d = canonical_digest(FrameDetections(0, (det(16, .8, 12), det(0, .9, 12))), cfg)
    assert d.data == b"0:12|16:12"


def test_canonical_digest_underfull_and_empty():
    cfg = SakpConfig(top_k=5)
    d = canonical_digest(FrameDetections(3, (det(4, .3, 899),)), cfg)
    assert (d.data, d.pair_count) == (b"4:899", 1)
    d = canonical_digest(FrameDetections(3), cfg)
    assert (d.data, d.pair_count) == (b"EMPTY", 0)
    assert d.pairs() == []


@pytest.mark.parametrize("bad", [
    Detection(80, .5, .5, .5, .1, .1),
    Detection(-1, .5, .5, .5, .1, .1),
    Detection(1, 1.5, .5, .5, .1, .1),
    Detection(1, .5, .5, -.2, .1, .1),
    Detection(1, .5, .5, .5, 0.0, .1),
])
def test_canonical_digest_rejects_invalid(bad):
    with pytest.raises(InputDomainError):
        canonical_digest(FrameDetections(0, (bad,)), SakpConfig())


detections = st.builds(
    Detection,
    class_id=st.integers(0, 79),
    confidence=st.sampled_from([0.1, 0.25, 0.5, 0.75, 0.9]) | st.floats(0, 1),
    cx=st.floats(0, 1), cy=st.floats(0, 1),
    w=st.floats(0.01, 1), h=st.floats(0.01, 1),
)


@settings(max_examples=300)
@given(st.lists(detections, max_size=15), st.integers(1, 12), st.randoms(use_true_random=False),
       st.sampled_from([(30, 30), (10, 10), (20, 45), (1, 1)]))
def test_digest_properties(dets, k, rnd, shape):
    cfg = SakpConfig(top_k=k, grid=GridSpec(*shape))
    d = canonical_digest(FrameDetections(0, tuple(dets)), cfg)
    shuffled = list(dets)
    rnd.shuffle(shuffled)
    assert canonical_digest(FrameDetections(0, tuple(shuffled)), cfg) == d

    text = d.data.decode("utf-8")
    assert text == "EMPTY" or DIGEST_PATTERN.fullmatch(text)
    assert d.pair_count == min(k, len(dets))
    pairs = [(g, c) for c, g in d.pairs()]
    assert pairs == sorted(pairs)


def test_jsonl_roundtrip_and_validation():
    frames = [FrameDetections(0, (det(1, .5, 3),)), FrameDetections(2, ())]
    buf = io.StringIO()
    write_detection_log(buf, frames)
    buf.seek(0)
    assert list(read_detection_log(buf)) == frames
    assert frame_from_json(frame_to_json(frames[0])) == frames[0]

    for line in ['{"frame": 0, "dets": [{"c": 1, "p": 1.2, "cx": .5, "cy": .5, "w": .1, "h": .1}]}',
                 '{"frame": 0, "dets": [{"c": 1, "p": .2, "cx": .5}]}',
                 '{"frame": "x", "dets": []}',
                 'not json']:
        with pytest.raises(InputDomainError):
            frame_from_json(line)
    with pytest.raises(InputDomainError):
        frame_from_json('{"frame": 0, "dets": [{"c": 80, "p": .2, "cx": .5, "cy": .5, "w": .1, "h": .1}]}', 80)

    with pytest.raises(InputDomainError, match="not increasing"):
        list(read_detection_log(io.StringIO('{"frame":1,"dets":[]}\n{"frame":1,"dets":[]}\n')))
