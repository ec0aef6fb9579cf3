import numpy as np
import pytest

from epdkit import checkpoint as C
from epdkit import model as M
from epdkit import tensor as T
from epdkit.tensor import Tensor

MINI = M.ModelConfig(input_size=32, backbone="toy", pyramid_channels=8, fc_hidden=8)


def test_round_trip_bit_exact_predictions(tmp_path):
    params = M.init_params(MINI, seed=6)
    path = tmp_path / "m.eiqa"
    C.save_checkpoint(path, MINI, params, metadata={"epochs": 3, "seed": 6})
    cfg2, params2, opt, meta = C.load_checkpoint(path)
    assert cfg2 == MINI
    assert opt is None
    assert meta == {"epochs": 3, "seed": 6}
    rng = np.random.default_rng(0)
    for _ in range(10):
        img = rng.random((32, 32, 3))
        assert M.predict(img, params, MINI) == M.predict(img, params2, cfg2)


def test_round_trip_preserves_arrays_bitwise(tmp_path):
    params = M.init_params(MINI, seed=1)
    path = tmp_path / "m.eiqa"
    C.save_checkpoint(path, MINI, params)
    _, params2, _, _ = C.load_checkpoint(path)
    assert set(params2) == set(params)
    for k in params:
        assert params2[k].data.dtype == np.float32
        assert (params2[k].data == params[k].data).all()


def test_optimizer_state_round_trip(tmp_path):
    params = M.init_params(MINI, seed=2)
    x = np.random.default_rng(3).normal(0, 0.3, (4, 3, 32, 32)).astype(np.float32)
    y = np.zeros((4, 1), dtype=np.float32)
    opt = T.Adam(params, lr=1e-3)
    loss = T.mse_loss(M.predict_batch(Tensor(x), params, MINI), Tensor(y))
    T.backward(loss)
    opt.step()
    path = tmp_path / "m.eiqa"
    C.save_checkpoint(path, MINI, params, optimizer_state=opt.state())
    _, params2, state, _ = C.load_checkpoint(path)
    assert state["t"] == 1
    for k in params:
        assert (np.asarray(state["m"][k]) == opt.m[k].astype(np.float32)).all()
        assert (np.asarray(state["v"][k]) == opt.v[k].astype(np.float32)).all()
    opt2 = T.Adam(params2, lr=1e-3)
    opt2.load_state(state)
    assert opt2.t == 1


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.eiqa"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(C.CheckpointError):
        C.load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    params = M.init_params(MINI, seed=0)
    path = tmp_path / "m.eiqa"
    C.save_checkpoint(path, MINI, params)
    blob = bytearray(path.read_bytes())
    blob[4:6] = (99).to_bytes(2, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(C.CheckpointError):
        C.load_checkpoint(path)


def test_save_is_deterministic(tmp_path):
    params = M.init_params(MINI, seed=4)
    p1, p2 = tmp_path / "a.eiqa", tmp_path / "b.eiqa"
    C.save_checkpoint(p1, MINI, params, metadata={"seed": 4})
    C.save_checkpoint(p2, MINI, params, metadata={"seed": 4})
    assert p1.read_bytes() == p2.read_bytes()
