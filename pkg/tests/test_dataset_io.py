import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from debristrack import dataset_io as dio
from debristrack.dataset_io import DatasetError
from debristrack.domain import Detection, EndpointPair, SequenceAnnotation, Track
from debristrack.simulator import SimConfig, sequence_rng, simulate_sequence, synthetic_background

CFG = SimConfig(image_size=(64, 48), frames=(3, 3), debris_count_range=(2, 2))


def _simulated(index=1):
    rng = sequence_rng(0, "io", index)
    return simulate_sequence(synthetic_background(CFG.image_size, rng), CFG, rng)


def test_sequence_round_trip(tmp_path):
    frames, ann = _simulated()
    dio.write_sequence(frames, ann, tmp_path / "seq", {"note": "x"})
    frames2, ann2 = dio.read_sequence(tmp_path / "seq")
    assert ann2.objects == ann.objects
    assert all(np.array_equal(a, b) and b.dtype == np.uint8 for a, b in zip(frames, frames2))
    assert all(np.array_equal(a, b) for a, b in zip(ann.masks, ann2.masks))
    meta = dio.read_meta(tmp_path / "seq")
    assert meta["num_frames"] == 3 and meta["note"] == "x"
    assert dio.read_annotation(tmp_path / "seq").objects == ann.objects


def test_frames_hash_identical_after_round_trip(tmp_path):
    frames, ann = _simulated(2)
    dio.write_sequence(frames, ann, tmp_path / "s")
    back, _ = dio.read_sequence(tmp_path / "s")
    digest = lambda fs: hashlib.sha256(b"".join(f.tobytes() for f in fs)).hexdigest()
    assert digest(frames) == digest(back)


def test_writers_are_deterministic(tmp_path):
    frames, ann = _simulated(3)
    dio.write_sequence(frames, ann, tmp_path / "a", {"seed": 1})
    dio.write_sequence(frames, ann, tmp_path / "b", {"seed": 1})
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_gt_csv_header_and_float_format(tmp_path):
    _, ann = _simulated()
    dio.write_gt_csv(ann, tmp_path / "gt.csv")
    lines = (tmp_path / "gt.csv").read_text().splitlines()
    assert lines[0] == ",".join(dio.GT_COLUMNS)
    first = lines[1].split(",")
    o = ann.objects[0][0]
    assert float(first[2]) == o.endpoints.left[0]  # exact round-trip
    assert int(first[0]) == 1 and int(first[1]) == o.track_id


def _corrupt_row(tmp_path, column, value):
    frames, ann = _simulated()
    seq = tmp_path / "seq"
    dio.write_sequence(frames, ann, seq)
    lines = (seq / "gt.csv").read_text().splitlines()
    cells = lines[1].split(",")
    cells[dio.GT_COLUMNS.index(column)] = value
    lines[1] = ",".join(cells)
    (seq / "gt.csv").write_text("\n".join(lines) + "\n")
    return seq, int(cells[0]), int(cells[1])


def test_length_mismatch_names_frame_and_track(tmp_path):
    seq, frame, track = _corrupt_row(tmp_path, "length", "999.0")
    with pytest.raises(DatasetError) as exc:
        dio.read_sequence(seq)
    assert f"frame {frame}" in str(exc.value) and f"track {track}" in str(exc.value)


@pytest.mark.parametrize("column,value", [
    ("x_left", "1e9"), ("bb_w", "0.5"), ("frame", "99"), ("cx", "nan"), ("speed", "abc"),
])
def test_inconsistent_rows_rejected(tmp_path, column, value):
    seq, _, _ = _corrupt_row(tmp_path, column, value)
    with pytest.raises(DatasetError):
        dio.read_sequence(seq)


def test_duplicate_row_rejected(tmp_path):
    frames, ann = _simulated()
    dio.write_sequence(frames, ann, tmp_path / "s")
    p = tmp_path / "s" / "gt.csv"
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(DatasetError, match="duplicate"):
        dio.read_sequence(tmp_path / "s")


def test_empty_gt_is_valid(tmp_path):
    frames = [np.zeros((4, 5), np.uint8)] * 2
    ann = SequenceAnnotation([[], []])
    dio.write_sequence(frames, ann, tmp_path / "s")
    _, back = dio.read_sequence(tmp_path / "s")
    assert back.track_ids == [] and back.num_frames == 2
    (tmp_path / "s" / "gt.csv").write_text("")
    _, back = dio.read_sequence(tmp_path / "s")
    assert back.track_ids == []


def test_missing_frame_rejected(tmp_path):
    frames, ann = _simulated()
    dio.write_sequence(frames, ann, tmp_path / "s")
    (tmp_path / "s" / "frames" / "000002.png").unlink()
    with pytest.raises(DatasetError, match="missing frame"):
        dio.read_sequence(tmp_path / "s")


def test_corrupt_png_and_meta(tmp_path):
    frames, ann = _simulated()
    dio.write_sequence(frames, ann, tmp_path / "s")
    (tmp_path / "s" / "frames" / "000001.png").write_bytes(b"not a png")
    with pytest.raises(DatasetError):
        dio.read_sequence(tmp_path / "s")
    dio.write_sequence(frames, ann, tmp_path / "t")
    (tmp_path / "t" / "meta.json").write_text("{}")
    with pytest.raises(DatasetError, match="num_frames"):
        dio.read_sequence(tmp_path / "t")


def test_list_sequences(tmp_path):
    for i in (3, 1, 2):
        frames, ann = _simulated(i)
        dio.write_sequence(frames, ann, tmp_path / dio.sequence_name(i))
    (tmp_path / "stray").mkdir()
    assert dio.list_sequences(tmp_path) == ["seq_000001", "seq_000002", "seq_000003"]
    with pytest.raises(DatasetError):
        dio.list_sequences(tmp_path / "nope")


def test_results_round_trip(tmp_path):
    t1, t2 = Track(1), Track(2)
    t1.append(1, Detection(EndpointPair((1, 2), (5, 6)), 0.9))
    t1.append(2, Detection(EndpointPair((2, 2), (6, 6)), 0.8))
    t2.append(2, Detection(EndpointPair((10, 2), (15, 1)), 1.0, width=3.0))
    dio.write_results_csv([t2, t1], tmp_path / "r.csv")
    rows = dio.read_results_csv(tmp_path / "r.csv")
    assert [(r.frame, r.track_id) for r in rows] == [(1, 1), (2, 1), (2, 2)]
    assert rows[2].endpoints == EndpointPair((10, 2), (15, 1))
    assert rows[2].bbox == pytest.approx(t2.entries[0][1].bbox())
    assert rows[0].score == 0.9


def test_results_reject_bad_rows(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text(",".join(dio.RESULT_COLUMNS) + "\n1,1,5,0,1,0,0,0,1,1,1\n")
    with pytest.raises(DatasetError):
        dio.read_results_csv(p)
    p.write_text("a,b\n1,2\n")
    with pytest.raises(DatasetError, match="header"):
        dio.read_results_csv(p)


# ---------------------------------------------------------------- tensor maps

@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_tensor_map_round_trip(grid):
    back = dio.parse_tensor_map(dio.tensor_map_bytes(grid))
    assert back.dtype == np.float32 and np.array_equal(back, grid)


def test_tensor_map_layout():
    grid = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)  # H=2, W=3, C=2
    blob = dio.tensor_map_bytes(grid)
    magic, ver, dt, w, h, c = struct.unpack_from("<4sHHIII", blob)
    assert (magic, ver, dt, w, h, c) == (b"TMAP", 1, 1, 3, 2, 2)
    assert len(blob) == 20 + 12 * 4
    # value at (x=2, y=1, c=1) sits at index (y*W + x)*C + c
    off = 20 + ((1 * 3 + 2) * 2 + 1) * 4
    assert struct.unpack_from("<f", blob, off)[0] == grid[1, 2, 1]


def test_tensor_map_file_round_trip(tmp_path):
    grid = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
    dio.write_tensor_map(grid, tmp_path / "g.tmap")
    assert np.array_equal(dio.read_tensor_map(tmp_path / "g.tmap")[..., 0], grid)


def test_tensor_map_errors(tmp_path):
    blob = dio.tensor_map_bytes(np.ones((2, 2, 1)))
    with pytest.raises(DatasetError, match="payload length mismatch"):
        dio.parse_tensor_map(blob[:-1])
    with pytest.raises(DatasetError, match="bad magic"):
        dio.parse_tensor_map(b"XXXX" + blob[4:])
    with pytest.raises(DatasetError, match="truncated"):
        dio.parse_tensor_map(blob[:5])
    nan_blob = blob[:20 + 8] + struct.pack("<f", float("nan")) + blob[20 + 12:]
    with pytest.raises(DatasetError, match=r"non-finite value at \(0,1,0\)"):
        dio.parse_tensor_map(nan_blob)
    bad = np.ones((2, 2, 1))
    bad[1, 0, 0] = np.inf
    with pytest.raises(ValueError, match=r"non-finite value at \(0,1,0\)"):
        dio.tensor_map_bytes(bad)
    with pytest.raises(DatasetError, match="missing"):
        dio.read_tensor_map(tmp_path / "none.tmap")


@given(st.binary(max_size=80), st.integers(0, 79), st.integers(0, 255))
def test_tensor_map_fuzz_only_structured_errors(junk, pos, byte):
    base = bytearray(dio.tensor_map_bytes(np.ones((2, 3, 2))))
    base[pos % len(base)] = byte
    for blob in (bytes(base), junk, bytes(base[: pos % len(base)])):
        try:
            arr = dio.parse_tensor_map(blob)
        except DatasetError:
            continue
        assert np.all(np.isfinite(arr))
