import pytest

from tools.errors import ConfigError
from tools.memory_model import (
    CATALOGS,
    adaptation_flop_model,
    catalog_report,
    format_mb,
    full_report,
    gmlstm_param_count,
    ours_report,
)


def test_gmlstm_count_of_largest_vgg_layer():
    assert gmlstm_param_count(4608, 512) == 3137864704


@pytest.mark.parametrize("d,p", [(0, 1), (3, 0)])
def test_gmlstm_count_rejects_empty_shapes(d, p):
    with pytest.raises(ValueError):
        gmlstm_param_count(d, p)


@pytest.mark.parametrize(
    "model,params,mb",
    [
        ("vgg16", 5989817344, "22849"),
        ("resnet18", 6000186866, "22889"),
        ("resnet50", 6534384640, "24927"),
    ],
)
def test_catalog_totals(model, params, mb):
    report = catalog_report(model)
    row = report.row(model, "gmlstm")
    assert row.params == params
    assert row.bytes == 4 * params
    assert format_mb(row) == mb


def test_resnet18_adds_stem_to_vgg():
    assert catalog_report("resnet18").row("resnet18", "gmlstm").params == (
        catalog_report("vgg16").row("vgg16", "gmlstm").params + gmlstm_param_count(147, 64)
    )


def test_ours_row_is_constant():
    for model in CATALOGS:
        row = catalog_report(model).row(model, "ours")
        assert row.params == 10442
        assert row.bytes == 41768
        assert format_mb(row) == "0.039833"
    assert ours_report(hidden=1, layers=1).rows[0].params == 36


def test_vgg16_ratio():
    report = catalog_report("vgg16")
    ratio = report.row("vgg16", "gmlstm").params / report.row("vgg16", "ours").params
    assert ratio > 5e5


def test_unknown_model():
    with pytest.raises(ConfigError):
        catalog_report("resnet99")


def test_custom_catalog():
    report = catalog_report("tiny", shapes=[(2, 1), (3, 2)])
    assert report.row("tiny", "gmlstm").params == gmlstm_param_count(2, 1) + gmlstm_param_count(3, 2)
    with pytest.raises(ConfigError):
        catalog_report("empty", shapes=[])


def test_full_report_rows():
    report = full_report(list(CATALOGS))
    assert [(r.model, r.method) for r in report.rows] == [
        ("vgg16", "gmlstm"), ("resnet18", "gmlstm"), ("resnet50", "gmlstm"), ("all", "ours"),
    ]
    single = full_report(["vgg16"])
    assert single.rows[-1].model == "vgg16"


def test_flop_model():
    assert adaptation_flop_model(1, 1) == (32, 35)
    sub, full = adaptation_flop_model(1024, 64)
    assert sub == 16 * 1024 + 16 * 64
    assert full > 1000 * sub
