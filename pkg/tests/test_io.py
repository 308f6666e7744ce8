import json

import numpy as np
import pytest

from curlvid import io as cio
from curlvid.errors import FormatError
from curlvid.timeline import Segment, SegmentTimeline


class TestVideoContainer:
    def test_u8_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = (rng.integers(0, 256, size=(16, 64, 64)) / 255.0).astype(np.float32)
        path = tmp_path / "a.curlvid"
        cio.write_video(path, frames, fps=23.0, dtype_tag=cio.DTYPE_U8)
        container = cio.read_video(path)
        assert container.fps == 23.0
        assert np.array_equal(container.frames, frames)
        # re-encoding the decoded frames reproduces the file byte for byte
        assert cio.encode_video(container.frames, 23.0, cio.DTYPE_U8) == path.read_bytes()

    def test_f32_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        frames = rng.random((4, 8, 8)).astype(np.float32)
        path = tmp_path / "b.curlvid"
        cio.write_video(path, frames, fps=10.0, dtype_tag=cio.DTYPE_F32)
        container = cio.read_video(path)
        assert np.array_equal(container.frames, frames)

    def test_u8_255_decodes_to_one(self):
        data = cio.encode_video(np.ones((1, 2, 2), dtype=np.float32), 10.0, cio.DTYPE_U8)
        container = cio.decode_video(data)
        assert float(container.frames.max()) == 1.0
        assert float(container.frames.min()) == 1.0

    def test_truncated_payload_names_lengths(self, tmp_path):
        data = cio.encode_video(np.zeros((2, 4, 4), dtype=np.float32), 10.0)
        path = tmp_path / "t.curlvid"
        path.write_bytes(data[:-5])
        with pytest.raises(FormatError, match="expected 32 bytes, got 27"):
            cio.read_video(path)

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="magic"):
            cio.decode_video(b"NOTAVID0" + b"\x00" * 40)

    def test_unknown_dtype_tag(self):
        data = bytearray(cio.encode_video(np.zeros((1, 2, 2), dtype=np.float32), 10.0))
        data[8 + 12 + 4] = 7  # dtype tag byte
        with pytest.raises(FormatError, match="dtype tag 7"):
            cio.decode_video(bytes(data))

    def test_f32_out_of_range_rejected(self):
        import struct
        header = cio.VIDEO_MAGIC + struct.pack("<IIIfB", 1, 1, 1, 10.0, cio.DTYPE_F32)
        payload = np.array([1.5], dtype="<f4").tobytes()
        with pytest.raises(FormatError, match=r"out of \[0, 1\]"):
            cio.decode_video(header + payload)


class TestTimelineJson:
    def make(self):
        return SegmentTimeline("rec7", 30.0, (
            Segment(0.0, 10.5, "movement", "head"),
            Segment(10.5, 30.0, "non_movement", "none")))

    def test_round_trip(self):
        t = self.make()
        back = cio.timeline_from_json(cio.timeline_to_json(t))
        assert back == t

    def test_unknown_field_rejected_with_path(self):
        doc = json.loads(cio.timeline_to_json(self.make()))
        doc["segments"][1]["labe"] = "oops"
        with pytest.raises(FormatError, match=r"segments\[1\]\.labe"):
            cio.timeline_from_json(json.dumps(doc))

    def test_unknown_top_level_field(self):
        doc = json.loads(cio.timeline_to_json(self.make()))
        doc["operator"] = "x"
        with pytest.raises(FormatError, match="operator"):
            cio.timeline_from_json(json.dumps(doc))

    def test_missing_field(self):
        doc = json.loads(cio.timeline_to_json(self.make()))
        del doc["duration_s"]
        with pytest.raises(FormatError, match="duration_s"):
            cio.timeline_from_json(json.dumps(doc))

    def test_bad_label(self):
        doc = json.loads(cio.timeline_to_json(self.make()))
        doc["segments"][0]["label"] = "wiggle"
        with pytest.raises(FormatError, match=r"segments\[0\]\.label"):
            cio.timeline_from_json(json.dumps(doc))

    def test_file_round_trip(self, tmp_path):
        t = self.make()
        cio.write_timeline(tmp_path / "t.json", t)
        assert cio.read_timeline(tmp_path / "t.json") == t


class TestManifest:
    def test_round_trip_preserves_precision(self, tmp_path):
        rows = [{"recording_id": "S0001", "start_s": 0.1 + 1e-13, "end_s": 5.1,
                 "p_movement": 1 / 3}]
        path = tmp_path / "m.jsonl"
        cio.write_manifest(path, rows)
        back = cio.read_manifest(path)
        assert back[0]["p_movement"] == rows[0]["p_movement"]
        assert back[0]["start_s"] == rows[0]["start_s"]

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"recording_id": "a", "start_s": 0, "end_s": 1, '
                        '"p_movement": 0.5, "extra": 1}\n')
        with pytest.raises(FormatError, match="extra"):
            cio.read_manifest(path)

    def test_bad_json_line_located(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"recording_id": "a", "start_s": 0, "end_s": 1, "p_movement": 0}\n'
                        "{nope}\n")
        with pytest.raises(FormatError, match="line 2"):
            cio.read_manifest(path)


class TestReports:
    def test_json_contains_all_metric_keys(self, tmp_path):
        report = {k: 0.5 for k in cio.REPORT_METRIC_KEYS}
        path = tmp_path / "r.json"
        cio.write_report_json(path, report)
        loaded = json.loads(path.read_text())
        for key in cio.REPORT_METRIC_KEYS:
            assert key in loaded

    def test_csv_columns(self, tmp_path):
        rows = [{"fold": 0, **{k: 0.25 for k in cio.REPORT_METRIC_KEYS}},
                {"fold": 1, **{k: None for k in cio.REPORT_METRIC_KEYS}}]
        path = tmp_path / "r.csv"
        cio.write_report_csv(path, rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",") == ["fold", *cio.REPORT_METRIC_KEYS]
        assert lines[2].split(",")[1] == ""  # None -> empty cell


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"a.weight": rng.standard_normal((3, 4)).astype(np.float32),
                  "b": rng.standard_normal(7).astype(np.float32)}
        config = {"depth": 2, "embed_dim": 16}
        path = tmp_path / "c.ckpt"
        cio.save_checkpoint(path, config, arrays)
        cfg2, arr2 = cio.load_checkpoint(path)
        assert cfg2 == config
        assert set(arr2) == set(arrays)
        for k in arrays:
            assert arr2[k].tobytes() == arrays[k].tobytes()
        # second serialization identical
        assert cio.encode_checkpoint(cfg2, arr2) == path.read_bytes()

    def test_version_mismatch_rejected(self, tmp_path):
        data = bytearray(cio.encode_checkpoint({}, {}))
        data[8] = 99
        with pytest.raises(FormatError, match="version 99"):
            cio.decode_checkpoint(bytes(data))

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="magic"):
            cio.decode_checkpoint(b"WRONG!!!" + b"\x00" * 16)

    def test_truncated_record(self):
        arrays = {"w": np.zeros((4, 4), dtype=np.float32)}
        data = cio.encode_checkpoint({}, arrays)
        with pytest.raises(FormatError, match="truncated"):
            cio.decode_checkpoint(data[:-8])


class TestAtomicity:
    def test_no_temp_files_left(self, tmp_path):
        cio.atomic_write_text(tmp_path / "x.txt", "hello")
        assert (tmp_path / "x.txt").read_text() == "hello"
        assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]
