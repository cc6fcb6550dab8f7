import itertools

import numpy as np
import pytest

from lightunetr.infer import axis_origins, plan_windows, segment, sliding_window_infer
from lightunetr.model import ForwardOutput, build_model, tiny_config
from lightunetr.tensor import Tensor


class ConstantModel:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float32)

    def eval(self):
        return self

    def __call__(self, x, with_attention=True):
        b, _, z, y, w = x.shape
        return ForwardOutput(Tensor(np.broadcast_to(self.value[None, :, None, None, None],
                                                    (b, self.value.size, z, y, w)).copy()), None)


class OffsetModel:
    """Logits depend on which window is seen: input minus its own minimum."""

    def eval(self):
        return self

    def __call__(self, x, with_attention=True):
        d = x.data
        return ForwardOutput(Tensor(d - d.min(axis=(2, 3, 4), keepdims=True)), None)


def test_axis_origins():
    assert axis_origins(10, 8, 4) == [0, 2]
    assert axis_origins(16, 8, 8) == [0, 8]
    assert axis_origins(8, 8, 3) == [0]
    with pytest.raises(ValueError, match="larger"):
        axis_origins(7, 8, 4)


def test_coverage_complete():
    plan = plan_windows((10, 12, 9), 8, (4, 5, 1))
    cov = plan.coverage()
    assert cov.min() >= 1
    assert cov.sum() == len(plan.origins) * 8 ** 3


def test_constant_logits_survive_stitching():
    x = np.zeros((1, 12, 10, 9), np.float32)
    logits, seg = sliding_window_infer(ConstantModel([0.25, -1.5]), x, 8, 3)
    np.testing.assert_allclose(logits, np.broadcast_to(np.array([0.25, -1.5], np.float32)[:, None, None, None],
                                                       (2, 12, 10, 9)), rtol=1e-6)
    assert (seg == 0).all()


def test_mean_over_covering_windows():
    x = np.random.default_rng(0).random((1, 1, 10, 9, 11)).astype(np.float32)
    logits, _ = sliding_window_infer(OffsetModel(), x, (6, 5, 7), (3, 2, 4))
    total = np.zeros(x.shape, np.float64)
    count = np.zeros(x.shape, np.float64)
    for oz, oy, ox in itertools.product(range(0, 5), range(0, 5), range(0, 5)):
        if {oz} - {0, 3, 4} or {oy} - {0, 2, 4} or {ox} - {0, 4}:
            continue
        sl = (slice(None), slice(None), slice(oz, oz + 6), slice(oy, oy + 5), slice(ox, ox + 7))
        win = x[sl]
        total[sl] += win - win.min()
        count[sl] += 1
    np.testing.assert_allclose(logits, total / count, rtol=1e-6, atol=1e-7)


def test_segment_rule():
    logits = np.array([[[0.0, 1.0, 2.0], [0.0, 0.5, 3.0]]])
    # a tie is probability 0.5, which counts as foreground
    np.testing.assert_array_equal(segment(logits), [[1, 0, 1]])
    three = np.array([[[0.0, 1.0], [2.0, 0.0], [1.0, 3.0]]])
    np.testing.assert_array_equal(segment(three), [[1, 2]])


@pytest.fixture(scope="module")
def tiny():
    return build_model(tiny_config(), 0)


def test_full_window_matches_direct_forward(tiny):
    x = np.random.default_rng(1).random((1, 1, 16, 16, 16)).astype(np.float32)
    logits, _ = sliding_window_infer(tiny, x, 16, 8)
    tiny.eval()
    direct = tiny(Tensor(x), with_attention=False).logits.data
    assert logits.tobytes() == direct.tobytes()


def test_order_independent(tiny):
    x = np.random.default_rng(2).random((1, 24, 24, 20)).astype(np.float32)
    plan = plan_windows((24, 24, 20), 16, 8)
    base, seg = sliding_window_infer(tiny, x, 16, 8)
    perm = np.random.default_rng(3).permutation(len(plan.origins))
    other, _ = sliding_window_infer(tiny, x, 16, 8, order=perm)
    assert np.abs(base - other).max() <= 1e-6
    assert base.shape == (2, 24, 24, 20) and seg.shape == (24, 24, 20)


def test_window_larger_than_volume(tiny):
    with pytest.raises(ValueError, match="larger"):
        sliding_window_infer(tiny, np.zeros((1, 8, 16, 16), np.float32), 16, 8)
