import struct

import numpy as np
import pytest

from conftest import tiny_config
from tblgen.model.checkpoint import FormatVersionMismatch, IoFailure, load_checkpoint, read_header, save_checkpoint
from tblgen.model.transformer import ShapeMismatch, init_params


@pytest.fixture
def saved(tmp_path):
    cfg = tiny_config(20)
    p = init_params(cfg, 3)
    p["dec0.tau.rk"][:] = np.arange(cfg.d_k, dtype=np.float32)
    path = tmp_path / "m.ckpt"
    save_checkpoint(p, cfg, path, "v.txt", ["a", "b"], {"note": 1})
    return cfg, p, path


def test_round_trip_is_bit_exact(saved):
    cfg, p, path = saved
    q, cfg2, header = load_checkpoint(path)
    assert cfg2 == cfg
    assert set(q) == set(p)
    for k in p:
        assert q[k].dtype == np.float32 and q[k].tobytes() == p[k].tobytes()
    assert header["vocab"] == ["a", "b"] and header["extra"] == {"note": 1}
    assert path.read_bytes()[:6] == b"TBLGEN"
    assert not list(path.parent.glob("*.tmp"))


def test_wrong_config_is_rejected(saved):
    _, _, path = saved
    with pytest.raises(ShapeMismatch):
        load_checkpoint(path, expect=tiny_config(21))
    with pytest.raises(ShapeMismatch):
        save_checkpoint(init_params(tiny_config(21)), tiny_config(20), path.parent / "x.ckpt")


def test_corrupt_files(saved, tmp_path):
    _, _, path = saved
    raw = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTCKP" + raw[6:])
    with pytest.raises(FormatVersionMismatch):
        load_checkpoint(bad)
    bad.write_bytes(raw[:6] + struct.pack("<I", 99) + raw[10:])
    with pytest.raises(FormatVersionMismatch):
        read_header(bad)
    bad.write_bytes(raw[:-4])
    with pytest.raises(FormatVersionMismatch):
        load_checkpoint(bad)
    bad.write_bytes(raw[:8])
    with pytest.raises(FormatVersionMismatch):
        load_checkpoint(bad)
    with pytest.raises(IoFailure):
        load_checkpoint(tmp_path / "missing.ckpt")
