import pytest

from lightunetr.analysis import CostReport, cost_report, count_flops, count_params
from lightunetr.model import CGLU, ModelConfig, build_model, tiny_config
from lightunetr.nn import Conv3d, ConvTranspose3d


@pytest.fixture(scope="module")
def model():
    return build_model(ModelConfig(), 0)


def conv_rows(report):
    return [r for r in report.rows if r.kind in ("conv", "conv_transposed")]


class TestParams:
    def test_pointwise_conv(self):
        assert Conv3d(4, 6, 1).num_parameters() == 30

    def test_cglu(self):
        assert CGLU(24).num_parameters() == 3 * 24 * 48 + 48 + 48 + 24 == 3576

    def test_report_matches_registered(self, model):
        report = cost_report(model, (32, 32, 32))
        assert report.total_params == count_params(model)

    def test_shape_independent(self, model):
        assert cost_report(model, (32, 32, 32)).total_params == cost_report(model, (96, 96, 96)).total_params

    def test_default_budget(self, model):
        assert 1.07e6 <= count_params(model) <= 1.61e6


class TestFlops:
    def test_pointwise_definition(self):
        conv = Conv3d(4, 6, 1)
        report = CostReport()
        conv.cost((4, 5, 6, 7), report)
        v = 5 * 6 * 7
        assert report.total_flops("mac2") == 2 * v * 4 * 6
        assert report.total_flops("mac1") == v * 4 * 6

    def test_grouped_strided_conv(self):
        conv = Conv3d(8, 12, 3, stride=2, padding=1, groups=4)
        report = CostReport()
        assert conv.cost((8, 10, 10, 10), report) == (12, 5, 5, 5)
        assert report.total_macs == 125 * 12 * 2 * 27

    def test_transposed_counted_on_input_grid(self):
        conv = ConvTranspose3d(6, 6, 2, stride=2, groups=6)
        report = CostReport()
        assert conv.cost((6, 4, 4, 4), report) == (6, 8, 8, 8)
        assert report.total_macs == 64 * 6 * 1 * 8

    def test_rows_sum_to_total(self, model):
        report = cost_report(model, (64, 64, 64))
        assert report.total_flops() == sum(r.flops() for r in report.rows)

    def test_mac2_is_twice_mac1_for_mac_layers(self, model):
        report = cost_report(model, (64, 64, 64))
        for r in conv_rows(report):
            assert r.flops("mac2") == 2 * r.flops("mac1")
        assert report.total_flops("mac2") == report.total_flops("mac1") + report.total_macs

    def test_doubling_extent_scales_convs_by_8(self, model):
        small = cost_report(model, (32, 32, 32))
        big = cost_report(model, (64, 64, 64))
        # squeeze-excitation convs act on pooled 1x1x1 features and do not scale
        small_conv = sum(r.macs for r in conv_rows(small) if ".se." not in r.name)
        big_conv = sum(r.macs for r in conv_rows(big) if ".se." not in r.name)
        assert big_conv == 8 * small_conv

    def test_costable_beyond_forward_legality(self, model):
        assert ModelConfig().extent_problem(80) is not None
        assert count_flops(model, (112, 112, 80)) > count_flops(model, (64, 64, 64))

    def test_attention_row(self):
        tiny = build_model(tiny_config(), 0)
        report = cost_report(tiny, (16, 16, 16))
        att = [r for r in report.rows if r.kind == "attention"]
        # stage 1 (4^3 grid, r=2): T = 8 tokens, width 1
        assert att[0].macs == 2 * 8 * 8 * 1

    def test_summary_format(self, model):
        line = cost_report(model, (112, 112, 80)).summary("mac1")
        assert line.startswith("params=") and line.endswith("@112,112,80 convention=mac1")

    def test_unknown_convention(self, model):
        with pytest.raises(ValueError, match="convention"):
            count_flops(model, (32, 32, 32), "mac3")

    def test_tsv_has_row_per_layer(self, model):
        report = cost_report(model, (32, 32, 32))
        assert len(report.to_tsv().splitlines()) == len(report.rows) + 1
