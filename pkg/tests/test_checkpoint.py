import json
import struct

import numpy as np
import pytest

from woundseg.nn.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from woundseg.nn.models import DetectorModel, SegmenterModel


@pytest.mark.parametrize("model", [SegmenterModel("convnet_lite", 2, 4, 16, seed=1),
                                   DetectorModel(8, 4, 32, seed=2)])
def test_roundtrip(model, tmp_path, rng):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, seed=5, class_weight=7.5, train_config={"batch_size": 8})
    loaded, header = load_checkpoint(path)
    assert type(loaded) is type(model) and loaded.config() == model.config()
    assert header["seed"] == 5 and header["class_weight"] == 7.5 and header["version"] == 1
    assert header["train_config"] == {"batch_size": 8}
    for k in model.params:
        assert np.array_equal(loaded.params[k].data, model.params[k].data)
    x = rng.random((1, model.input_size, model.input_size, 3))
    assert np.array_equal(loaded.forward(loaded.to_batch(x)).data, model.forward(model.to_batch(x)).data)


def test_layout_is_self_describing(tmp_path):
    m = SegmenterModel("unet_lite", 2, 4, 16, seed=0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    first = header["params"][0]
    arr = np.frombuffer(raw[12 + hlen:12 + hlen + first["nbytes"]], "<f4").reshape(first["shape"])
    assert np.array_equal(arr, m.params[first["name"]].data)
    assert len(raw) == 12 + hlen + sum(p["nbytes"] for p in header["params"])


def test_rejects_foreign_and_future_files(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    h = json.dumps({"version": 99, "params": []}).encode()
    bad.write_bytes(MAGIC + struct.pack("<I", len(h)) + h)
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    h = json.dumps({"params": []}).encode()
    bad.write_bytes(MAGIC + struct.pack("<I", len(h)) + h)
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
