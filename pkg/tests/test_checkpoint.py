"""Checkpoint binary format: byte layout, bit-exact round trips, and
corruption handling."""

import json
import struct

import numpy as np
import pytest

from gvtnet.checkpoint import (
    MAGIC,
    VERSION,
    CheckpointError,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from gvtnet.model import GVTNet, NetConfig


def small_net(seed=0):
    return GVTNet(NetConfig(n_groups=1, n_blocks=1, channels=4, window=2,
                            heads=2, scale=2), seed=seed)


class TestFormat:
    def test_header_layout(self, tmp_path):
        net = small_net()
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        raw = open(path, "rb").read()
        assert raw[:4] == MAGIC
        assert struct.unpack("<I", raw[4:8])[0] == VERSION
        cfg_len = struct.unpack("<I", raw[8:12])[0]
        cfg = json.loads(raw[12:12 + cfg_len].decode())
        assert cfg["channels"] == 4
        n_records = struct.unpack("<I", raw[12 + cfg_len:16 + cfg_len])[0]
        assert n_records == len(list(net.named_parameters()))

    def test_config_json_is_canonical(self, tmp_path):
        net = small_net()
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        raw = open(path, "rb").read()
        cfg_len = struct.unpack("<I", raw[8:12])[0]
        text = raw[12:12 + cfg_len].decode()
        assert text == json.dumps(json.loads(text), sort_keys=True)

    def test_infinite_minkowski_order_survives(self, tmp_path):
        from gvtnet.adjacency import AdjacencyConfig
        cfg = NetConfig(n_groups=1, n_blocks=1, channels=4, window=2,
                        heads=2, adjacency=AdjacencyConfig(p=float("inf")))
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, GVTNet(cfg))
        loaded_cfg, _ = read_checkpoint(path)
        assert loaded_cfg.adjacency.p == float("inf")


class TestRoundTrip:
    def test_parameters_bit_exact(self, tmp_path):
        net = small_net(seed=3)
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        loaded, extra = load_checkpoint(path)
        assert extra == {}
        src = dict(net.named_parameters())
        dst = dict(loaded.named_parameters())
        assert src.keys() == dst.keys()
        for k in src:
            assert src[k].data.tobytes() == dst[k].data.tobytes()

    def test_save_load_save_identical_bytes(self, tmp_path):
        net = small_net(seed=4)
        p1 = str(tmp_path / "a.gvtn")
        p2 = str(tmp_path / "b.gvtn")
        save_checkpoint(p1, net)
        loaded, _ = load_checkpoint(p1)
        save_checkpoint(p2, loaded)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_extra_records_round_trip(self, tmp_path):
        net = small_net()
        extra = {"optim.step": np.array(17.0),
                 "optim.m.shallow.w": np.random.default_rng(5)
                     .standard_normal((4, 3, 3, 3))}
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net, extra)
        _, back = load_checkpoint(path)
        assert set(back) == set(extra)
        for k in extra:
            assert back[k].tobytes() == np.asarray(extra[k]).tobytes()

    def test_loaded_model_same_outputs(self, tmp_path):
        from gvtnet.tensor import Tensor
        net = small_net(seed=6)
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        loaded, _ = load_checkpoint(path)
        x = Tensor(np.random.default_rng(7).random((1, 3, 4, 4)))
        np.testing.assert_array_equal(net(x).data, loaded(x).data)


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gvtn"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            read_checkpoint(str(path))

    def test_bad_version(self, tmp_path):
        net = small_net()
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        raw = bytearray(open(path, "rb").read())
        raw[4:8] = struct.pack("<I", 99)
        open(path, "wb").write(bytes(raw))
        with pytest.raises(CheckpointError):
            read_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        net = small_net()
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:len(raw) // 2])
        with pytest.raises(CheckpointError):
            read_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        net = small_net()
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        with open(path, "ab") as f:
            f.write(b"junk")
        with pytest.raises(CheckpointError):
            read_checkpoint(path)

    def test_missing_parameter(self, tmp_path):
        # rewrite the file with one parameter record dropped
        import gvtnet.checkpoint as cp
        net = small_net()
        path = str(tmp_path / "m.gvtn")
        save_checkpoint(path, net)
        cfg, records = read_checkpoint(path)
        records.pop(next(iter(records)))
        cfg_json = json.dumps(cfg.to_dict(), sort_keys=True).encode()
        blob = [cp.MAGIC, struct.pack("<I", cp.VERSION),
                struct.pack("<I", len(cfg_json)), cfg_json,
                struct.pack("<I", len(records))]
        blob += [cp._encode_record(n, a) for n, a in records.items()]
        open(path, "wb").write(b"".join(blob))
        with pytest.raises(CheckpointError, match="missing parameter"):
            load_checkpoint(path)

    def test_no_temp_file_left_behind(self, tmp_path):
        net = small_net()
        save_checkpoint(str(tmp_path / "m.gvtn"), net)
        leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
        assert leftovers == []
