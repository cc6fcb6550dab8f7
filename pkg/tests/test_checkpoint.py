import numpy as np
import pytest

from lightunetr.analysis import count_params
from lightunetr.checkpoint import CheckpointError, load_checkpoint, load_weights, read_manifest, save_checkpoint
from lightunetr.model import ModelConfig, build_model, tiny_config
from lightunetr.tensor import SGD, Tensor


def test_bin_length_matches_param_count(tmp_path):
    model = build_model(ModelConfig(), 0)
    save_checkpoint(str(tmp_path / "m"), model)
    assert (tmp_path / "m.bin").stat().st_size // 4 == count_params(model) == 1_429_818


def test_roundtrip_bitwise(tmp_path):
    model = build_model(tiny_config(), 3)
    save_checkpoint(str(tmp_path / "m"), model, iteration=17)
    back = load_checkpoint(str(tmp_path / "m"))
    for (na, pa), (nb, pb) in zip(model.named_parameters(), back.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    assert read_manifest(str(tmp_path / "m"))["iteration"] == 17


def test_buffers_and_momentum_restored(tmp_path):
    model = build_model(tiny_config(), 0)
    opt = SGD(model.parameters(), momentum=0.9)
    model.train()
    loss = model(Tensor(np.random.default_rng(0).random((1, 1, 16, 16, 16)).astype(np.float32))).logits.sum()
    opt.zero_grad()
    loss.backward()
    opt.step(0.01)
    save_checkpoint(str(tmp_path / "m"), model, 1, opt)

    other = build_model(tiny_config(), 5)
    other_opt = SGD(other.parameters(), momentum=0.9)
    load_weights(str(tmp_path / "m"), other, other_opt)
    for (_, a), (_, b) in zip(model.named_buffers(), other.named_buffers()):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(opt.state_arrays(), other_opt.state_arrays()):
        np.testing.assert_array_equal(a, b)


def test_config_mismatch_rejected(tmp_path):
    save_checkpoint(str(tmp_path / "m"), build_model(tiny_config(), 0))
    with pytest.raises(CheckpointError, match="hash"):
        load_weights(str(tmp_path / "m"), build_model(tiny_config(stage_depths=(1, 1, 1, 2)), 0))


def test_truncated_bin_rejected(tmp_path):
    save_checkpoint(str(tmp_path / "m"), build_model(tiny_config(), 0))
    path = tmp_path / "m.bin"
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(str(tmp_path / "m"))


def test_identical_state_gives_identical_bytes(tmp_path):
    import time

    model = build_model(tiny_config(), 0)
    save_checkpoint(str(tmp_path / "a"), model, 1, SGD(model.parameters()))
    time.sleep(2.1)
    save_checkpoint(str(tmp_path / "b"), model, 1, SGD(model.parameters()))
    for ext in (".json", ".bin", ".state.npz"):
        assert (tmp_path / ("a" + ext)).read_bytes() == (tmp_path / ("b" + ext)).read_bytes(), ext
