"""Named-array container: byte layout and round-trip exactness."""

import struct

import numpy as np
import pytest

from unreflect.container import (
    ContainerError,
    MAGIC,
    decode_text,
    encode_text,
    read_container,
    write_container,
)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path, np_rng):
        entries = {
            "a/weight": np_rng.rand(3, 4, 5).astype(np.float32),
            "b/bias": np_rng.rand(7).astype(np.float32),
            "scalarish": np.array([42.0], dtype=np.float32),
        }
        p = tmp_path / "t.rdn"
        write_container(p, entries)
        back = read_container(p)
        assert list(back) == list(entries)
        for k in entries:
            np.testing.assert_array_equal(back[k], entries[k])
            assert back[k].dtype == np.float32

    def test_write_read_write_bytes_identical(self, tmp_path, np_rng):
        entries = {"x": np_rng.rand(2, 2).astype(np.float32), "y": np_rng.rand(5).astype(np.float32)}
        p1, p2 = tmp_path / "a.rdn", tmp_path / "b.rdn"
        write_container(p1, entries)
        write_container(p2, read_container(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_container(self, tmp_path):
        p = tmp_path / "empty.rdn"
        write_container(p, {})
        assert read_container(p) == {}
        assert p.read_bytes() == MAGIC + struct.pack("<I", 0)


class TestFormat:
    def test_exact_bytes_for_one_entry(self, tmp_path):
        p = tmp_path / "one.rdn"
        arr = np.array([[1.0, 2.0]], dtype=np.float32)
        write_container(p, {"ab": arr})
        expect = (
            MAGIC
            + struct.pack("<I", 1)
            + struct.pack("<H", 2) + b"ab"
            + struct.pack("<B", 2)
            + struct.pack("<II", 1, 2)
            + arr.astype("<f4").tobytes()
        )
        assert p.read_bytes() == expect

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.rdn"
        p.write_bytes(b"NOPE" + struct.pack("<I", 0))
        with pytest.raises(ContainerError, match="magic"):
            read_container(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "trail.rdn"
        p.write_bytes(MAGIC + struct.pack("<I", 0) + b"x")
        with pytest.raises(ContainerError, match="trailing"):
            read_container(p)

    def test_utf8_names(self, tmp_path):
        p = tmp_path / "n.rdn"
        write_container(p, {"mødel/weight": np.zeros(1, dtype=np.float32)})
        assert "mødel/weight" in read_container(p)


class TestTextCodec:
    def test_round_trip(self):
        text = "stage=2\nlearning_rate=0.0001\npath=/tmp/x\n"
        assert decode_text(encode_text(text)) == text
