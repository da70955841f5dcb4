import json
import struct

import numpy as np
import pytest

from periodic_qat.model_io import (
    CorruptHeaderError,
    TruncatedPayloadError,
    VersionMismatchError,
    export_quantized,
    import_quantized,
    load_any,
    load_checkpoint,
    read_header,
    save_checkpoint,
)
from periodic_qat.nn import Model, mlp_spec
from periodic_qat.quantizer import DomainError, quantized_model


@pytest.fixture
def model():
    spec = {"input_shape": [3], "layers": [
        {"kind": "dense", "in": 3, "out": 16}, {"kind": "batchnorm"}, {"kind": "relu"},
        {"kind": "dense", "in": 16, "out": 4}]}
    m = Model(spec, seed=7)
    m.forward(np.random.default_rng(0).standard_normal((8, 3)), training=True)  # move running stats
    return m


def _weights_equal(a, b):
    for sa, sb in zip(a.slabs(), b.slabs()):
        assert sa.name == sb.name
        np.testing.assert_array_equal(sa.tensor, sb.tensor)


class TestCheckpoint:
    def test_round_trip_bitwise(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "m.pqck")
        loaded = load_checkpoint(tmp_path / "m.pqck")
        _weights_equal(model, loaded)
        x = np.ones((2, 3))
        np.testing.assert_array_equal(model.forward(x), loaded.forward(x))

    def test_deterministic_bytes(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "a")
        save_checkpoint(model, tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_layout(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "m")
        raw = (tmp_path / "m").read_bytes()
        magic, version, hlen = struct.unpack_from("<4sII", raw)
        assert magic == b"PQCK" and version == 1
        header = json.loads(raw[12:12 + hlen])
        n_weights = sum(s.size for s in model.slabs())
        assert header["payload_bytes"] == 4 * n_weights == len(raw) - 12 - hlen

    def test_truncated(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "m")
        raw = (tmp_path / "m").read_bytes()
        (tmp_path / "m").write_bytes(raw[:-5])
        with pytest.raises(TruncatedPayloadError):
            load_checkpoint(tmp_path / "m")

    def test_bad_magic_and_version(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "m")
        raw = bytearray((tmp_path / "m").read_bytes())
        (tmp_path / "v").write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
        with pytest.raises(VersionMismatchError):
            load_checkpoint(tmp_path / "v")
        raw[:4] = b"XXXX"
        (tmp_path / "m").write_bytes(raw)
        with pytest.raises(CorruptHeaderError):
            load_checkpoint(tmp_path / "m")

    def test_garbled_header(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "m")
        raw = bytearray((tmp_path / "m").read_bytes())
        raw[13] = ord("#")
        (tmp_path / "m").write_bytes(raw)
        with pytest.raises(CorruptHeaderError):
            load_checkpoint(tmp_path / "m")

    def test_failed_save_leaves_old_file(self, model, tmp_path, monkeypatch):
        path = tmp_path / "m"
        save_checkpoint(model, path)
        before = path.read_bytes()
        import periodic_qat.model_io as mio

        monkeypatch.setattr(mio, "checkpoint_bytes", lambda m: (_ for _ in ()).throw(OSError("disk full")))
        with pytest.raises(OSError):
            save_checkpoint(model, path)
        assert path.read_bytes() == before
        assert [p.name for p in tmp_path.iterdir()] == ["m"]


class TestExport:
    def test_lattice_model_round_trip(self, model, tmp_path):
        lattice = quantized_model(model, 127)
        export_quantized(lattice, 8, "sine", tmp_path / "q")
        _weights_equal(lattice, import_quantized(tmp_path / "q"))

    def test_one_byte_per_weight_at_8_bits(self, model, tmp_path):
        summary = export_quantized(model, 8, "sine", tmp_path / "q")
        header = read_header(tmp_path / "q")
        for entry in header["slabs"]:
            if entry["kind"] in ("dense-weight", "conv-filter"):
                assert entry["encoding"] == "i1"
        assert summary["frequency"] == 127
        assert summary["levels"]["dense0.weight"] <= 255

    def test_wide_codes(self, model, tmp_path):
        export_quantized(model, 12, "hat", tmp_path / "q")
        assert {e["encoding"] for e in read_header(tmp_path / "q")["slabs"]} == {"i2", "f4"}

    def test_cosine_export(self, model, tmp_path):
        summary = export_quantized(model, 4, "cosine", tmp_path / "q")
        assert summary["frequency"] == 8
        np.testing.assert_array_equal(import_quantized(tmp_path / "q").slab("dense0.weight").tensor,
                                      quantized_model(model, 8, "cosine").slab("dense0.weight").tensor)

    def test_double_round_trip_stable(self, model, tmp_path):
        export_quantized(model, 4, "sine", tmp_path / "a")
        once = import_quantized(tmp_path / "a")
        export_quantized(once, 4, "sine", tmp_path / "b")
        _weights_equal(once, import_quantized(tmp_path / "b"))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_load_any(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "c")
        export_quantized(model, 8, "sine", tmp_path / "q")
        assert load_any(tmp_path / "c").checksum() == model.checksum()
        assert load_any(tmp_path / "q").checksum() == quantized_model(model, 127).checksum()

    def test_bit_range(self, model, tmp_path):
        with pytest.raises(DomainError):
            export_quantized(model, 1, "sine", tmp_path / "q")
        with pytest.raises(DomainError):
            export_quantized(model, 17, "sine", tmp_path / "q")

    def test_large_model_ratio(self, tmp_path):
        m = Model(mlp_spec(784, [16], 10), seed=0)
        summary = export_quantized(m, 8, "sine", tmp_path / "q")
        assert summary["size_ratio"] <= 0.26
