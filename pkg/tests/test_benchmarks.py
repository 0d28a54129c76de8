"""Desk-scale runs; deselected by default, run with `pytest -m slow`.

Each training seed in 1..5 gets its own checkpoint, scored on the matching
held-out seed 101..105 against RSGD on the same data and start point.
"""

import numpy as np
import pytest

from models.schemas import MetaConfig, ShapeSpec
from training.evaluation import evaluate, make_optimizer
from training.meta_trainer import train

pytestmark = pytest.mark.slow

PCA = ShapeSpec(task="pca", d=20, p=4)
CLASSIFIER = ShapeSpec(task="classifier", d=32, p=8)
TRAIN_SEEDS = [1, 2, 3, 4, 5]
HELD_OUT = [101, 102, 103, 104, 105]
RSGD_GRID = [0.5, 0.1, 0.01]


def _benchmark_config(seed: int) -> MetaConfig:
    return MetaConfig(shapes=[PCA], inner_steps=5, outer_steps=300, seed=seed, objective_data="full")


def _curve(optimizer, seed: int, steps: int, shapes=(PCA,)):
    return evaluate(optimizer, MetaConfig(shapes=list(shapes)), [seed], steps)


@pytest.fixture(scope="module")
def trained():
    return {seed: train(_benchmark_config(seed)) for seed in TRAIN_SEEDS}


def test_meta_objective_is_finite_throughout(trained):
    for result in trained.values():
        assert len(result.trajectory.outer) == 300
        assert all(np.isfinite(o.meta_objective) for o in result.trajectory.outer)
        assert result.adam.t == 300


def test_learned_matches_tuned_rsgd_at_step_100(trained):
    wins = 0
    for train_seed, seed in zip(TRAIN_SEEDS, HELD_OUT):
        curves, summary = _curve(make_optimizer("learned", trained[train_seed].params), seed, steps=200)
        learned = curves[PCA.param_id][100].loss
        best_rsgd = min(_curve(make_optimizer("rsgd", alpha=alpha), seed, steps=100)[0][PCA.param_id][100].loss
                        for alpha in RSGD_GRID)
        wins += learned <= best_rsgd
        (row,) = summary
        assert row.final_loss <= 1.5 * row.oracle_loss, (seed, row)
    assert wins >= 3


def test_full_adaptation_beats_single_sided_ablations(trained):
    wins = 0
    for train_seed, seed in zip(TRAIN_SEEDS, HELD_OUT):
        params = trained[train_seed].params
        final = {name: _curve(make_optimizer(name, params), seed, steps=200)[1][0].final_loss
                 for name in ("learned", "row-only", "col-only")}
        wins += final["learned"] <= final["row-only"] and final["learned"] <= final["col-only"]
    assert wins >= 3


def test_one_checkpoint_drives_two_shapes(trained):
    params = trained[1].params
    before = params.scalar_count()
    curves, summary = _curve(make_optimizer("learned", params), HELD_OUT[0], steps=200, shapes=(PCA, CLASSIFIER))
    assert params.scalar_count() == before == 10442
    assert {s.shape for s in summary} == {"pca-20x4", "classifier-32x8"}
    for rows in curves.values():
        assert len(rows) == 201
        assert all(np.isfinite(r.loss) and r.feasibility <= 1e-8 for r in rows)
    for row in summary:
        assert row.final_loss <= 0.5 * row.initial_loss, row
