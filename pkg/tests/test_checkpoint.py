"""Checkpoint files: round trips and rejection of damaged input."""
import struct

import numpy as np
import pytest

from radarodom.neural.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from radarodom.neural.gradcheck import tiny_config
from radarodom.neural.model import NetworkConfig, build_network


def test_round_trip(tmp_path):
    net = build_network(NetworkConfig.toy(), 7)
    net.buffers.update(mm_mean=12.5, fitted=1.0)
    opt = {"head.fc0.w": np.random.default_rng(0).random(net.params["head.fc0.w"].shape)}
    path = save_checkpoint(tmp_path / "m.ckpt", net, opt, epoch=4, train={"lr": 1e-3}, extra={"note": "x"})
    ck = load_checkpoint(path)
    assert ck.epoch == 4 and ck.train == {"lr": 1e-3} and ck.extra == {"note": "x"}
    assert ck.model.config == net.config and ck.model.buffers["mm_mean"] == 12.5
    for k, p in net.params.items():
        np.testing.assert_array_equal(ck.model.params[k].data, p.data)
    np.testing.assert_array_equal(ck.opt_state["head.fc0.w"], opt["head.fc0.w"])


def test_saving_twice_is_byte_identical(tmp_path):
    net = build_network(tiny_config(), 1)
    a = save_checkpoint(tmp_path / "a", net).read_bytes()
    b = save_checkpoint(tmp_path / "b", net).read_bytes()
    assert a == b and a.startswith(MAGIC)


def test_layout_header(tmp_path):
    raw = save_checkpoint(tmp_path / "c", build_network(tiny_config(), 1)).read_bytes()
    version, hlen = struct.unpack_from("<II", raw, 8)
    assert version == 1
    assert raw[16:16 + hlen].startswith(b"{")


def test_bad_magic(tmp_path):
    p = tmp_path / "bad"
    raw = save_checkpoint(p, build_network(tiny_config(), 1)).read_bytes()
    p.write_bytes(b"X" + raw[1:])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


@pytest.mark.parametrize("cut", [12, 200, -1])
def test_truncation(tmp_path, cut):
    p = tmp_path / "t"
    raw = save_checkpoint(p, build_network(tiny_config(), 1)).read_bytes()
    p.write_bytes(raw[:cut])
    with pytest.raises((CheckpointError, ValueError)):
        load_checkpoint(p)


def test_trailing_bytes(tmp_path):
    p = tmp_path / "t"
    raw = save_checkpoint(p, build_network(tiny_config(), 1)).read_bytes()
    p.write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
