import json
import struct

import pytest
import torch

from lexcon.checkpoint import MAGIC, load_checkpoint, read_header, save_checkpoint
from lexcon.errors import DataError
from lexcon.model import ModelConfig, init_model


@pytest.fixture
def model():
    return init_model(ModelConfig(vocab_size=20, d_model=16, n_heads=2, ffn_dim=32, use_pointer=True), 3)


def test_round_trip(tmp_path, model):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model, {"steps": 7})
    loaded, extra = load_checkpoint(p)
    assert extra == {"steps": 7}
    assert loaded.cfg == model.cfg
    a, b = model.state_dict(), loaded.state_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert torch.equal(a[k], b[k]), k


def test_bytes_are_deterministic(tmp_path, model):
    save_checkpoint(tmp_path / "a", model)
    save_checkpoint(tmp_path / "b", model)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_header_layout(tmp_path, model):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model)
    raw = p.read_bytes()
    assert raw[:8] == MAGIC
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + n])
    assert header["version"] == 1
    total = sum(t["nbytes"] for t in header["tensors"])
    assert len(raw) == 12 + n + total


def test_bad_magic(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(DataError):
        read_header(p)


def test_wrong_version(tmp_path, model):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model)
    raw = p.read_bytes()
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + n])
    header["version"] = 99
    hb = json.dumps(header).encode()
    p.write_bytes(MAGIC + struct.pack("<I", len(hb)) + hb + raw[12 + n :])
    with pytest.raises(DataError):
        load_checkpoint(p)


def test_truncated(tmp_path, model):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(DataError):
        load_checkpoint(p)
