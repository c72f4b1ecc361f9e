"""Checkpoint file format: bit-exact round trips and mismatch reporting."""

import numpy as np
import pytest

from waveseg import load_checkpoint, save_checkpoint
from waveseg.checkpoint import check_state_compatible
from waveseg.errors import CheckpointError


class TestRoundTrip:
    def test_bitwise_identical(self, tmp_path, rng):
        tensors = {
            "a.weight": rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
            "a.bias": rng.standard_normal((1, 3, 1, 1)).astype(np.float32),
            "stats.running_mean": rng.standard_normal((1, 3, 1, 1)),
        }
        path = tmp_path / "ck.bin"
        save_checkpoint(path, tensors, meta={"note": "x"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"note": "x"}
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            assert loaded[name].tobytes() == tensors[name].tobytes()

    def test_same_content_same_bytes(self, tmp_path, rng):
        tensors = {"w": rng.standard_normal((2, 2, 2, 2)).astype(np.float32)}
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(p1, tensors)
        save_checkpoint(p2, {k: v.copy() for k, v in tensors.items()})
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_non_float_tensors(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.bin", {"ints": np.zeros((2, 2), dtype=np.int32)})


class TestValidation:
    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_data_rejected(self, tmp_path, rng):
        path = tmp_path / "ck.bin"
        save_checkpoint(path, {"w": rng.standard_normal((4, 4, 4, 4)).astype(np.float32)})
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_mismatch_names_first_bad_tensor(self):
        expected = {"w": np.zeros((2, 2, 2, 2), dtype=np.float32)}
        with pytest.raises(CheckpointError, match="'w'.*dims"):
            check_state_compatible(expected, {"w": np.zeros((2, 2, 2, 3), dtype=np.float32)})
        with pytest.raises(CheckpointError, match="'w'.*dtype"):
            check_state_compatible(expected, {"w": np.zeros((2, 2, 2, 2))})
        with pytest.raises(CheckpointError, match="unexpected tensor 'extra'"):
            check_state_compatible(expected, {"w": expected["w"], "extra": expected["w"]})
        with pytest.raises(CheckpointError, match="'w' missing"):
            check_state_compatible(expected, {})

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(tmp_path / "absent.bin")
