import pytest

from models.schemas import MetaConfig, ShapeSpec
from optimizers.baselines import RASALike, RSGD, RSGDM
from optimizers.subspace import OptimizerParams, SubspaceOptimizer
from tools.errors import ConfigError
from training.evaluation import curve_filename, evaluate, make_optimizer


@pytest.fixture
def eval_config():
    return MetaConfig(shapes=[ShapeSpec(task="pca", d=8, p=2), ShapeSpec(task="classifier", d=6, p=3)],
                      dataset_size=40, batch_size=40, hidden_size=2, num_layers=1)


def test_make_optimizer_defaults_and_overrides():
    assert isinstance(make_optimizer("rsgd"), RSGD)
    assert make_optimizer("rsgd", alpha=0.3).alpha == 0.3
    assert isinstance(make_optimizer("rsgdm"), RSGDM)
    assert isinstance(make_optimizer("rasa-like"), RASALike)
    learned = make_optimizer("col-only", OptimizerParams.zeros(2, 1))
    assert isinstance(learned, SubspaceOptimizer) and learned.mode == "col-only"
    assert make_optimizer("learned", OptimizerParams.zeros(2, 1)).mode == "full"


def test_make_optimizer_errors():
    with pytest.raises(ConfigError):
        make_optimizer("row-only")
    with pytest.raises(ConfigError):
        make_optimizer("adamw")


def test_zero_step_size_keeps_loss_flat(eval_config):
    curves, summary = evaluate(make_optimizer("rsgd", alpha=0.0), eval_config, [101, 102], steps=5)
    for rows in curves.values():
        assert len(rows) == 2 * 6
        for seed in (101, 102):
            losses = {r.loss for r in rows if r.seed == seed}
            assert len(losses) == 1
    assert all(s.initial_loss == s.final_loss for s in summary)


def test_zero_learned_optimizer_keeps_loss_flat(eval_config):
    _, summary = evaluate(make_optimizer("learned", OptimizerParams.zeros(2, 1)), eval_config, [7], steps=3)
    assert all(s.initial_loss == s.final_loss for s in summary)


def test_rsgd_descends_toward_oracle(eval_config):
    curves, summary = evaluate(make_optimizer("rsgd", alpha=0.05), eval_config, [101], steps=40)
    pca = next(s for s in summary if s.shape == "pca-8x2")
    assert pca.final_loss < pca.initial_loss
    assert pca.final_loss >= pca.oracle_loss - 1e-10
    clf = next(s for s in summary if s.shape == "classifier-6x3")
    assert clf.oracle_loss is None
    assert max(r.feasibility for r in curves["classifier-6x3"]) <= 1e-8


def test_evaluation_is_deterministic(eval_config):
    first = evaluate(make_optimizer("rsgdm", alpha=0.05), eval_config, [3], steps=4)[0]
    second = evaluate(make_optimizer("rsgdm", alpha=0.05), eval_config, [3], steps=4)[0]
    for pid in first:
        assert [r.loss for r in first[pid]] == [r.loss for r in second[pid]]


def test_zero_steps_give_only_initial_rows(eval_config):
    curves, summary = evaluate(make_optimizer("rsgd"), eval_config, [1], steps=0)
    assert [r.step for r in curves["pca-8x2"]] == [0]
    assert summary[0].initial_loss == summary[0].final_loss


def test_curve_filename():
    assert curve_filename(ShapeSpec(task="pca", d=20, p=4)) == "eval-pca-20x4.csv"
