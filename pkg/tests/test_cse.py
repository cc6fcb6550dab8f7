import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from lightunetr.cse import (
    NonFiniteLossError,
    Region,
    TrainConfig,
    TrainConfigError,
    TrainData,
    Trainer,
    agr_mix,
    apply_mask,
    attention_region_probs,
    dice_loss,
    gamma_adjust,
    generate_smooth_mask,
    make_streams,
    pseudo_label,
    region_starts,
    sample_region,
    strong_augment,
    total_loss,
    train_step,
    weak_augment,
)
from lightunetr.cse.augment import random_origin
from lightunetr.cse.train import labeled_batch, segment_loss
from lightunetr.data import synth_generate
from lightunetr.model import build_model, tiny_config
from lightunetr.tensor import SGD, Tensor, cosine_lr


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.alpha, c.mask_side, c.mask_ratio, c.tau) == (0.65, 16, 0.5, 0.75)
        assert (c.lambda_ext, c.lambda_int) == (4.0, 1.0)
        assert (c.iterations, c.warmup, c.lr, c.batch_size, c.labeled_per_batch) == (15000, 500, 0.01, 4, 2)

    @pytest.mark.parametrize("kw", [dict(alpha=0), dict(alpha=1.2), dict(mask_ratio=1.5), dict(tau=0.4),
                                    dict(tau=1.0), dict(lambda_ext=-1), dict(region_mode="max"),
                                    dict(labeled_per_batch=4)])
    def test_invalid(self, kw):
        with pytest.raises(TrainConfigError):
            TrainConfig(**kw)

    def test_json_roundtrip_and_unknown_keys(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(TrainConfig(alpha=0.5).to_dict()))
        assert TrainConfig.load(str(path)) == TrainConfig(alpha=0.5)
        path.write_text(json.dumps({"alpah": 0.5}))
        with pytest.raises(TrainConfigError, match="alpah"):
            TrainConfig.load(str(path))


class TestAugment:
    def test_full_crop_identity(self):
        x = np.random.default_rng(0).random((1, 6, 5, 4)).astype(np.float32)
        y = (x[0] > 0.5).astype(np.int64)
        xc, yc, origin = weak_augment(x, y, (6, 5, 4), np.random.default_rng(1))
        assert origin == (0, 0, 0)
        np.testing.assert_array_equal(xc, x)
        np.testing.assert_array_equal(yc, y)

    def test_crop_extents_and_alignment(self):
        x = np.arange(10 * 9 * 8, dtype=np.float32).reshape(1, 10, 9, 8)
        xc, yc, (oz, oy, ox) = weak_augment(x, x[0], (4, 3, 2), np.random.default_rng(2))
        assert xc.shape == (1, 4, 3, 2)
        np.testing.assert_array_equal(xc[0], yc)
        assert xc[0, 0, 0, 0] == x[0, oz, oy, ox]

    def test_crop_too_large(self):
        with pytest.raises(ValueError, match="larger"):
            weak_augment(np.zeros((1, 4, 4, 4)), None, (5, 4, 4), np.random.default_rng(0))

    def test_origin_uniform(self):
        rng = np.random.default_rng(3)
        origins = np.array([random_origin((12, 10, 9), (4, 4, 4), rng) for _ in range(10_000)])
        for axis, n in enumerate((9, 7, 6)):
            counts = np.bincount(origins[:, axis], minlength=n)
            assert chisquare(counts).pvalue > 0.01

    def test_gamma_one_identity(self):
        x = np.linspace(0, 1, 11, dtype=np.float32)
        np.testing.assert_allclose(gamma_adjust(x, 1.0), x, atol=1e-7)

    def test_endpoints_fixed(self):
        rng = np.random.default_rng(4)
        x = np.random.default_rng(5).random((1, 4, 4, 4)).astype(np.float32)
        x.flat[0], x.flat[1] = 0.0, 1.0
        for _ in range(10):
            out = strong_augment(x, rng)
            assert out.flat[0] == 0.0 and out.flat[1] == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.7, 1.5))
    def test_monotone(self, gamma):
        x = np.linspace(0, 1, 50)
        assert np.all(np.diff(gamma_adjust(x, gamma)) > 0)


class TestRegions:
    def test_uniform_attention(self):
        grid = attention_region_probs(np.ones((8, 8, 8)), 0.5)
        assert grid.patch == 4 and grid.counts == (2, 2, 2)
        np.testing.assert_allclose(grid.probs, 1 / 8, rtol=1e-12)

    def test_single_elevated_region(self):
        a = np.zeros((8, 8, 8))
        a[4:8, 0:4, 4:8] = math.log(2)
        grid = attention_region_probs(a, 0.5)
        assert grid.probs[1, 0, 1] == pytest.approx(2 / 9, abs=1e-12)
        assert grid.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_clamped_starts(self):
        assert region_starts(10, 4) == [0, 4, 6]
        assert region_starts(8, 4) == [0, 4]
        grid = attention_region_probs(np.ones((10, 7, 9)), 0.6)  # P = floor(7 * 0.6) = 4
        assert grid.patch == 4
        for idx in np.ndindex(grid.counts):
            r = grid.region(idx)
            assert all(0 <= s and s + n <= e for s, n, e in zip(r.start, r.size, (10, 7, 9)))

    def test_box_sums_match_loops(self):
        a = np.random.default_rng(0).random((9, 10, 11))
        grid = attention_region_probs(a, 0.5)
        for idx in np.ndindex(grid.counts):
            assert grid.sums[idx] == pytest.approx(a[grid.region(idx).slices].sum(), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["mean", "sum", "linear"]))
    def test_simplex(self, seed, mode):
        rng = np.random.default_rng(seed)
        a = rng.random((12, 10, 8)) * rng.uniform(0.01, 2)
        grid = attention_region_probs(a, rng.uniform(0.2, 1.0), mode)
        assert abs(grid.probs.sum() - 1) < 1e-6 and (grid.probs > 0).all()

    def test_mean_and_sum_share_argmax(self):
        a = np.random.default_rng(1).random((16, 16, 16))
        m = attention_region_probs(a, 0.25, "mean").probs
        s = attention_region_probs(a, 0.25, "sum").probs
        assert m.argmax() == s.argmax()
        # raw sums saturate toward one-hot, means stay spread out
        assert s.max() > m.max()

    def test_linear_mode(self):
        a = np.ones((8, 8, 8))
        a[:4, :4, :4] = 3
        grid = attention_region_probs(a, 0.5, "linear")
        assert grid.probs[0, 0, 0] == pytest.approx(3 / 10)

    def test_patch_too_small(self):
        with pytest.raises(ValueError, match="patch side"):
            attention_region_probs(np.ones((4, 4, 4)), 0.1)


class TestSampling:
    def make_grid(self, probs):
        grid = attention_region_probs(np.ones((8, 8, 8)), 0.5)
        grid.probs = np.asarray(probs, dtype=np.float64).reshape(2, 2, 2)
        return grid

    def test_one_hot(self):
        p = np.zeros(8)
        p[5] = 1
        grid = self.make_grid(p)
        rng = np.random.default_rng(0)
        target = grid.region(np.unravel_index(5, (2, 2, 2)))
        assert all(sample_region(grid, rng) == target for _ in range(200))

    def test_frequencies(self):
        p = np.array([0.05, 0.1, 0.2, 0.05, 0.15, 0.25, 0.1, 0.1])
        grid = self.make_grid(p)
        rng = np.random.default_rng(1)
        starts = {grid.region(np.unravel_index(k, (2, 2, 2))).start: k for k in range(8)}
        counts = np.bincount([starts[sample_region(grid, rng).start] for _ in range(10_000)], minlength=8)
        assert chisquare(counts, p * 10_000).pvalue > 0.01

    def test_reproducible(self):
        grid = self.make_grid(np.full(8, 1 / 8))
        a = [sample_region(grid, np.random.default_rng(7)) for _ in range(3)]
        r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
        assert [sample_region(grid, r1) for _ in range(20)] == [sample_region(grid, r2) for _ in range(20)]
        assert a[0] == a[1] == a[2]


class TestMix:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.iu = rng.random((1, 8, 8, 8)).astype(np.float32)
        self.yu = (rng.random((8, 8, 8)) > 0.5).astype(np.int64)
        self.il = rng.random((1, 8, 8, 8)).astype(np.float32)
        self.yl = (rng.random((8, 8, 8)) > 0.5).astype(np.int64)

    def test_partition(self):
        region = Region((2, 4, 1), (4, 4, 4))
        iu0, yu0 = self.iu.copy(), self.yu.copy()
        ir, yr = agr_mix(self.iu, self.yu, self.il, self.yl, region)
        inside = np.zeros((8, 8, 8), bool)
        inside[region.slices] = True
        np.testing.assert_array_equal(ir[:, inside], self.il[:, inside])
        np.testing.assert_array_equal(ir[:, ~inside], self.iu[:, ~inside])
        np.testing.assert_array_equal(yr[inside], self.yl[inside])
        np.testing.assert_array_equal(yr[~inside], self.yu[~inside])
        np.testing.assert_array_equal(self.iu, iu0)
        np.testing.assert_array_equal(self.yu, yu0)

    def test_idempotent_source(self):
        ir, _ = agr_mix(self.iu, self.yu, self.iu, self.yu, Region((0, 0, 0), (4, 4, 4)))
        np.testing.assert_array_equal(ir, self.iu)

    def test_replaced_count(self):
        grid = attention_region_probs(np.ones((8, 8, 8)), 0.5)
        zeros = np.zeros_like(self.iu)
        ir, _ = agr_mix(zeros, self.yu, np.ones_like(self.iu), self.yl, grid.region((1, 0, 1)))
        assert int(ir.sum()) == 64

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            agr_mix(self.iu, self.yu, self.il[:, :7], self.yl, Region((0, 0, 0), (2, 2, 2)))


class TestSmoothMask:
    def test_v0_all_ones(self):
        m = generate_smooth_mask((20, 17, 9), 4, 0.0, np.random.default_rng(0))
        assert (m.mask == 1).all() and m.zero_count == 0

    def test_v1_all_zeros(self):
        m = generate_smooth_mask((20, 17, 9), 4, 1.0, np.random.default_rng(0))
        assert (m.mask == 0).all() and m.coarse.shape == (5, 5, 3)

    def test_default_side_geometry(self):
        means = []
        for seed in range(100):
            m = generate_smooth_mask((64, 64, 64), 16, 0.5, np.random.default_rng(seed))
            assert m.coarse.shape == (4, 4, 4) and m.zero_count == 32
            means.append(m.mask.mean())
        assert 0.4 <= np.mean(means) <= 0.6

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 30), st.integers(1, 30), st.integers(1, 8), st.floats(0, 1),
           st.integers(0, 1000))
    def test_exact_zero_count_and_range(self, z, y, x, side, v, seed):
        m = generate_smooth_mask((z, y, x), side, v, np.random.default_rng(seed))
        n = m.coarse.size
        assert m.zero_count == math.floor(v * n)
        assert m.mask.shape == (z, y, x)
        assert m.mask.min() >= 0 and m.mask.max() <= 1

    def test_apply(self):
        x = np.random.default_rng(1).random((1, 8, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(apply_mask(x, np.ones((8, 8, 8), np.float32)), x)
        assert (apply_mask(x, np.zeros((8, 8, 8), np.float32)) == 0).all()
        m = generate_smooth_mask((8, 8, 8), 4, 0.5, np.random.default_rng(2)).mask
        np.testing.assert_allclose(apply_mask(apply_mask(x, m), m), apply_mask(x, m * m), rtol=1e-6)
        with pytest.raises(ValueError):
            apply_mask(x, np.ones((7, 8, 8)))


class TestLosses:
    def test_pseudo_label(self):
        np.testing.assert_array_equal(pseudo_label(np.array([0.8, 0.7, 0.75]), 0.75), [1, 0, 1])

    def probs(self, fg):
        fg = np.asarray(fg, dtype=np.float64)[None]
        return Tensor(np.stack([1 - fg, fg], axis=1))

    def test_dice_perfect(self):
        y = np.zeros((1, 4, 4, 4), np.int64)
        y[0, 1:3, 1:3, 1:3] = 1
        assert dice_loss(self.probs(y[0]), y).item() <= 1e-4

    def test_dice_disjoint(self):
        y = np.zeros((1, 4, 4, 4), np.int64)
        y[0, 0] = 1
        pred = np.zeros((4, 4, 4))
        pred[3] = 1
        assert dice_loss(self.probs(pred), y).item() == pytest.approx(1.0, abs=1e-6)

    def test_dice_half(self):
        y = np.array([[1, 1, 0, 0]])
        pred = np.array([0.0, 1.0, 1.0, 0.0])
        assert dice_loss(self.probs(pred), y).item() == pytest.approx(0.5, abs=1e-5)

    def test_multiclass_average(self):
        y = np.array([[0, 1, 2, 2]])
        onehot = np.eye(3)[y[0]].T[None]
        probs = onehot.copy()
        probs[0, :, 0] = [0, 0, 1]  # voxel 0 wrongly assigned to class 2
        loss = dice_loss(Tensor(probs), y).item()
        d1 = 1 - (2 * 1 + 1e-5) / (1 + 1 + 1e-5)
        d2 = 1 - (2 * 2 + 1e-5) / (3 + 2 + 1e-5)
        assert loss == pytest.approx((d1 + d2) / 2, rel=1e-9)

    def test_dice_shape_mismatch(self):
        with pytest.raises(ValueError, match="labels shape"):
            dice_loss(self.probs(np.zeros((4, 4, 4))), np.zeros((1, 4, 4, 3)))

    def test_total(self):
        assert total_loss(0.2, 0.1, 0.3) == pytest.approx(0.9)
        assert total_loss(0.4, 0.0, 0.0) == 0.4
        with pytest.raises(NonFiniteLossError, match="L_int"):
            total_loss(0.1, 0.2, float("nan"))


@pytest.fixture(scope="module")
def toy_data():
    samples = synth_generate(8, (16, 16, 16), 0)
    images = [img[None] for img, _ in samples]
    labels = [lbl.astype(np.int64) for _, lbl in samples]
    return TrainData(images[:2], labels[:2], images[2:])


def tiny_train_config(**kw):
    base = dict(crop_size=(16, 16, 16), iterations=50, warmup=5, alpha=0.5, mask_side=4, weight_decay=1e-4)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainStep:
    def test_zero_weights_equal_supervised_step(self, toy_data):
        cfg = tiny_train_config(lambda_ext=0.0, lambda_int=0.0)
        a, b = build_model(tiny_config(), 1), build_model(tiny_config(), 1)
        opt_a = SGD(a.parameters(), cfg.momentum, cfg.weight_decay)
        opt_b = SGD(b.parameters(), cfg.momentum, cfg.weight_decay)
        streams_a, streams_b = make_streams(3), make_streams(3)
        for _ in range(2):
            train_step(a, opt_a, toy_data, cfg, streams_a, 0.01)
            # hand-written supervised-only step
            b.train()
            x, y = labeled_batch(toy_data, cfg, streams_b)
            opt_b.zero_grad()
            segment_loss(b, x, y).backward()
            opt_b.step(0.01)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_perturbed_views_leave_running_stats(self, toy_data):
        cfg = tiny_train_config()
        semi, sup = build_model(tiny_config(), 1), build_model(tiny_config(), 1)
        train_step(semi, SGD(semi.parameters()), toy_data, cfg, make_streams(3), 0.01)
        sup_cfg = cfg.replace(lambda_ext=0.0, lambda_int=0.0)
        train_step(sup, SGD(sup.parameters()), toy_data, sup_cfg, make_streams(3), 0.01)
        for (name, a), (_, b) in zip(semi.named_buffers(), sup.named_buffers()):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_loss_ranges(self, toy_data):
        cfg = tiny_train_config()
        model = build_model(tiny_config(), 0)
        r = train_step(model, SGD(model.parameters()), toy_data, cfg, make_streams(0), 0.01)
        for v in (r.l_sup, r.l_ext, r.l_int):
            assert 0 <= v <= 1 + 1e-5
        assert r.total == pytest.approx(r.l_sup + 4 * r.l_ext + r.l_int, rel=1e-6)

    def test_determinism(self, toy_data):
        def trace():
            t = Trainer(build_model(tiny_config(), 2), toy_data, tiny_train_config(seed=4))
            return [t.step().log_line() for _ in range(10)]

        assert trace() == trace()

    def test_lr_trace(self, toy_data):
        cfg = tiny_train_config(iterations=12, warmup=3)
        t = Trainer(build_model(tiny_config(), 0), toy_data, cfg)
        t.run()
        assert [r.lr for r in t.trace] == [cosine_lr(i, 12, 3, 0.01) for i in range(1, 13)]
        assert t.iteration == 12

    def test_log_format(self, toy_data):
        import io
        import re

        buf = io.StringIO()
        Trainer(build_model(tiny_config(), 0), toy_data, tiny_train_config(iterations=2, warmup=1)).run(log=buf)
        pattern = r"iter=\d+ lr=\S+ L_sup=\S+ L_ext=\S+ L_int=\S+ total=\S+"
        assert all(re.fullmatch(pattern, line) for line in buf.getvalue().splitlines())

    def test_resume_bit_identical(self, toy_data, tmp_path):
        cfg = tiny_train_config(seed=5)
        ref = Trainer(build_model(tiny_config(), 0), toy_data, cfg)
        for _ in range(3):
            ref.step()
        ref.save(str(tmp_path / "ck"))
        expected = ref.step()

        resumed = Trainer(build_model(tiny_config(), 9), toy_data, cfg)
        resumed.resume(str(tmp_path / "ck"))
        assert resumed.iteration == 3
        got = resumed.step()
        assert (got.l_sup, got.l_ext, got.l_int, got.total) == (expected.l_sup, expected.l_ext, expected.l_int,
                                                                expected.total)
        for pa, pb in zip(ref.model.parameters(), resumed.model.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_non_finite_aborts(self, toy_data):
        model = build_model(tiny_config(), 0)
        model.head.bias.data[...] = np.nan
        with pytest.raises(NonFiniteLossError, match="iteration 7"):
            train_step(model, SGD(model.parameters()), toy_data, tiny_train_config(), make_streams(0), 0.01, 7)


def test_toy_run_reduces_supervised_loss():
    """200 CSE iterations on 32^3 volumes lower L_sup (median over three seeds)."""
    samples = synth_generate(12, (32, 32, 32), 1)
    data = TrainData([s[0][None] for s in samples[:4]], [s[1].astype(np.int64) for s in samples[:4]],
                     [s[0][None] for s in samples[4:]])
    drops = []
    for seed in range(3):
        cfg = TrainConfig(crop_size=(32, 32, 32), iterations=200, warmup=10, seed=seed)
        trainer = Trainer(build_model(tiny_config(crop_size=(32, 32, 32)), seed), data, cfg)
        trace = trainer.run()
        first = np.mean([r.l_sup for r in trace[:10]])
        last = np.mean([r.l_sup for r in trace[-10:]])
        drops.append(first - last)
    assert np.median(drops) > 0
