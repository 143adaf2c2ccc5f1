import numpy as np
import pytest

from polarcast.checkpoint import (
    checkpoint_digest,
    load_checkpoint,
    params_digest,
    save_checkpoint,
)
from polarcast.netcore import ArchConfig, init_params

ARCH = ArchConfig(
    window_len=32,
    conv_channels=(2, 3, 4, 4, 5),
    kernel_size=3,
    pool_every_block=False,
    dense_widths=(6, 1),
    dropout_enabled=True,
)


def test_round_trip_bitwise(tmp_path):
    params = init_params(ARCH, 42)
    save_checkpoint(tmp_path / "ck", params, meta={"seed": 42, "setting": "sgdxdropoutxcomplete"})
    loaded, meta = load_checkpoint(tmp_path / "ck")
    assert meta["seed"] == 42
    for (na, ta), (nb, tb) in zip(params.tensors().items(), loaded.tensors().items()):
        assert na == nb
        assert ta.dtype == tb.dtype == np.float32
        assert np.array_equal(ta, tb)
    assert params_digest(params) == params_digest(loaded)


def test_arch_restored(tmp_path):
    params = init_params(ARCH, 0)
    save_checkpoint(tmp_path / "ck", params)
    loaded, _ = load_checkpoint(tmp_path / "ck")
    assert loaded.arch == ARCH


def test_save_load_save_is_file_stable(tmp_path):
    params = init_params(ARCH, 7)
    save_checkpoint(tmp_path / "a", params, meta={"epoch": 3})
    loaded, meta = load_checkpoint(tmp_path / "a")
    save_checkpoint(tmp_path / "b", loaded, meta=meta)
    assert checkpoint_digest(tmp_path / "a") == checkpoint_digest(tmp_path / "b")


def test_digest_distinguishes_params(tmp_path):
    a = init_params(ARCH, 1)
    b = init_params(ARCH, 2)
    assert params_digest(a) != params_digest(b)
    save_checkpoint(tmp_path / "a", a)
    save_checkpoint(tmp_path / "b", b)
    assert checkpoint_digest(tmp_path / "a") != checkpoint_digest(tmp_path / "b")


def test_rejects_foreign_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)


def test_missing_tensor_rejected(tmp_path):
    params = init_params(ARCH, 3)
    save_checkpoint(tmp_path / "ck", params)
    import json

    mf = tmp_path / "ck" / "manifest.json"
    manifest = json.loads(mf.read_text())
    manifest["tensors"] = manifest["tensors"][:-1]
    mf.write_text(json.dumps(manifest))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "ck")
