import math

import numpy as np
import pytest

from optimizers.baselines import rsgd_step
from optimizers.subspace import (
    AdaptationOutput,
    CoordinateState,
    OptimizerParams,
    RecurrentNetParams,
    SubspaceOptimizer,
    adapt,
    cell_forward,
    count_parameters,
    covariance_diagonals,
    optimizer_step,
    refine_gradient,
)
from tools.errors import DimensionError, StateError
from tools.manifolds import feasibility_violation

G22 = np.array([[1.0, 2.0], [3.0, 4.0]])


def test_parameter_count_defaults():
    assert count_parameters(20, 2) == 10442
    assert count_parameters(1, 1) == 36


def test_parameter_count_matches_stored_scalars():
    for hidden, layers in [(20, 2), (1, 1), (3, 4)]:
        params = OptimizerParams.zeros(hidden, layers)
        assert params.scalar_count() == count_parameters(hidden, layers)


def test_parameter_count_independent_of_shapes(rng):
    params = OptimizerParams.initialize(4, 2, seed=0)
    state = CoordinateState(4, 2)
    before = params.scalar_count()
    for d, p in [(3, 2), (10, 4), (2, 5)]:
        adapt(params, rng.standard_normal((d, p)), state, f"w{d}x{p}")
    assert params.scalar_count() == before


def test_covariance_diagonals_examples():
    rhat, chat = covariance_diagonals(G22)
    np.testing.assert_allclose(rhat, [2.5, 12.5])
    np.testing.assert_allclose(chat, [5.0, 10.0])

    rhat, chat = covariance_diagonals(np.eye(2))
    np.testing.assert_allclose(rhat, [0.5, 0.5])
    np.testing.assert_allclose(chat, [0.5, 0.5])

    rhat, chat = covariance_diagonals(np.zeros((3, 2)))
    assert not rhat.any() and not chat.any()


def test_cell_forward_zero_network():
    net = RecurrentNetParams.zeros(3, 2)
    y, h, c = cell_forward(net, 0.7, np.zeros((2, 3)), np.zeros((2, 3)))
    assert y == 0.0
    assert not h.any() and not c.any()


def test_cell_forward_candidate_bias_example():
    net = RecurrentNetParams.zeros(1, 1)
    net.layers[0].b_ih[2] = 0.25
    net.layers[0].b_hh[2] = 0.75
    y, h, c = cell_forward(net, 0.0, np.zeros((1, 1)), np.zeros((1, 1)))
    assert c[0, 0] == pytest.approx(0.5 * math.tanh(1.0), abs=1e-7)
    assert c[0, 0] == pytest.approx(0.3807970, abs=1e-7)
    assert h[0, 0] == pytest.approx(0.5 * math.tanh(0.5 * math.tanh(1.0)), abs=1e-12)
    assert h[0, 0] == pytest.approx(0.1816997, abs=1e-7)
    assert y == 0.0


def test_cell_forward_is_deterministic():
    params = OptimizerParams.initialize(5, 2, seed=11)
    state = np.full((2, 5), 0.1)
    first = cell_forward(params.net_r, 0.3, state, state)
    second = cell_forward(params.net_r, 0.3, state, state)
    assert first[0] == second[0]
    assert np.array_equal(first[1], second[1]) and np.array_equal(first[2], second[2])


def test_cell_forward_checks_state_shape():
    with pytest.raises(StateError):
        cell_forward(RecurrentNetParams.zeros(2, 1), 0.0, np.zeros((2, 2)), np.zeros((2, 2)))


def test_zero_params_give_zero_diagonals(rng):
    out, state = adapt(OptimizerParams.zeros(4, 2), rng.standard_normal((5, 3)), CoordinateState(4, 2), "w")
    assert not out.rdiag.any() and not out.cdiag.any()


def test_adapt_counts_d_plus_p_forwards(rng):
    state = CoordinateState(4, 2)
    adapt(OptimizerParams.initialize(4, 2, seed=1), rng.standard_normal((7, 3)), state, "w")
    assert state.coordinate_forwards == 10


def test_identical_rows_get_identical_scales(rng):
    G = rng.standard_normal((4, 3))
    G[2] = G[0]
    out, _ = adapt(OptimizerParams.initialize(6, 2, seed=2), G, CoordinateState(6, 2), "w")
    assert out.rdiag[0] == pytest.approx(out.rdiag[2], abs=1e-14)


def test_row_permutation_equivariance(rng):
    params = OptimizerParams.initialize(6, 2, seed=3)
    G = rng.standard_normal((5, 3))
    perm = np.array([3, 0, 4, 1, 2])

    state_a, state_b = CoordinateState(6, 2), CoordinateState(6, 2)
    # warm both states so the permutation also has to carry hidden state
    G0 = rng.standard_normal((5, 3))
    adapt(params, G0, state_a, "w")
    adapt(params, G0[perm], state_b, "w")

    out_a, _ = adapt(params, G, state_a, "w")
    out_b, _ = adapt(params, G[perm], state_b, "w")
    np.testing.assert_allclose(out_b.rdiag, out_a.rdiag[perm], rtol=0, atol=1e-14)
    np.testing.assert_allclose(out_b.cdiag, out_a.cdiag, rtol=0, atol=1e-14)


def test_refine_gradient_examples():
    np.testing.assert_array_equal(refine_gradient(AdaptationOutput(np.ones(2), np.ones(2)), G22), G22)
    refined = refine_gradient(AdaptationOutput(np.array([2.0, 3.0]), np.array([1.0, 0.5])), G22)
    np.testing.assert_allclose(refined, [[2.0, 2.0], [9.0, 6.0]])


def test_refine_gradient_is_kronecker_structured(rng):
    for _ in range(100):
        d, p = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        r, c, G = rng.standard_normal(d), rng.standard_normal(p), rng.standard_normal((d, p))
        refined = refine_gradient(AdaptationOutput(r, c), G)
        np.testing.assert_allclose(refined.ravel(), np.kron(np.diag(r), np.diag(c)) @ G.ravel(), atol=1e-12)


def test_refine_gradient_checks_lengths():
    with pytest.raises(DimensionError):
        refine_gradient(AdaptationOutput(np.ones(3), np.ones(2)), G22)


def test_state_shape_drift_is_rejected(rng):
    params, state = OptimizerParams.initialize(3, 1, seed=0), CoordinateState(3, 1)
    adapt(params, rng.standard_normal((4, 2)), state, "w")
    with pytest.raises(StateError):
        adapt(params, rng.standard_normal((5, 2)), state, "w")


@pytest.mark.parametrize("family", ["stiefel", "grassmann"])
def test_zero_gradient_leaves_point(family, point_factory):
    point = point_factory(family, 6, 2, seed=4)
    moved, _ = optimizer_step(OptimizerParams.initialize(4, 2, seed=0), point, np.zeros((6, 2)),
                              CoordinateState(4, 2), "w")
    assert np.array_equal(moved.W, point.W)


def test_zero_params_leave_point(rng, point_factory):
    point = point_factory("grassmann", 6, 3, seed=1)
    moved, _ = optimizer_step(OptimizerParams.zeros(4, 2), point, rng.standard_normal((6, 3)),
                              CoordinateState(4, 2), "w")
    assert np.array_equal(moved.W, point.W)


@pytest.mark.parametrize("family", ["stiefel", "grassmann"])
def test_identity_mode_matches_rsgd(family, rng, point_factory):
    point = point_factory(family, 7, 3, seed=2)
    egrad = 0.3 * rng.standard_normal((7, 3))
    moved, _ = optimizer_step(OptimizerParams.initialize(4, 2, seed=0), point, egrad,
                              CoordinateState(4, 2), "w", mode="identity")
    np.testing.assert_allclose(moved.W, rsgd_step(point, egrad, alpha=1.0).W, rtol=0, atol=1e-14)


@pytest.mark.parametrize("family", ["stiefel", "grassmann"])
@pytest.mark.parametrize("mode", ["full", "row-only", "col-only", "no-subspace-lstm"])
def test_steps_stay_feasible(mode, family, rng, point_factory):
    opt = SubspaceOptimizer(OptimizerParams.initialize(4, 2, seed=5, init_scale=0.5), mode=mode)
    point = point_factory(family, 8, 3, seed=0)
    for _ in range(1000):
        point = opt.step(point, rng.standard_normal((8, 3)), "w")
        assert feasibility_violation(point) <= 1e-8


def test_ablation_modes_pin_diagonals(rng):
    params = OptimizerParams.initialize(4, 2, seed=6)
    G = rng.standard_normal((5, 3))
    row_only, _ = adapt(params, G, CoordinateState(4, 2), "w", mode="row-only")
    col_only, _ = adapt(params, G, CoordinateState(4, 2), "w", mode="col-only")
    full, _ = adapt(params, G, CoordinateState(4, 2), "w")
    np.testing.assert_array_equal(row_only.cdiag, np.ones(3))
    np.testing.assert_array_equal(col_only.rdiag, np.ones(5))
    np.testing.assert_array_equal(row_only.rdiag, full.rdiag)
    np.testing.assert_array_equal(col_only.cdiag, full.cdiag)


def test_entrywise_mode_costs_d_times_p_forwards(rng, point_factory):
    state = CoordinateState(3, 1)
    point = point_factory("grassmann", 5, 2)
    optimizer_step(OptimizerParams.initialize(3, 1, seed=0), point, rng.standard_normal((5, 2)), state, "w",
                   mode="no-subspace-lstm")
    assert state.coordinate_forwards == 10


def test_with_arrays_rejects_wrong_names_and_shapes():
    params = OptimizerParams.zeros(2, 1)
    arrays = params.named_arrays()
    with pytest.raises(KeyError):
        params.with_arrays({k: v for k, v in arrays.items() if k != "net_r.head.b"})
    bad = dict(arrays)
    bad["net_c.l0.w_hh"] = np.zeros((3, 3))
    with pytest.raises(DimensionError):
        params.with_arrays(bad)


def test_initialize_sets_forget_bias():
    params = OptimizerParams.initialize(3, 2, seed=0)
    for net in (params.net_r, params.net_c):
        for layer in net.layers:
            np.testing.assert_array_equal(layer.b_ih[3:6], np.ones(3))
            assert not layer.b_hh.any()
            assert np.all(np.abs(layer.w_ih) <= 0.1)
        assert net.head_b[0] == 0.0


@pytest.mark.parametrize("d,p", [(4, 2), (8, 3), (64, 16)])
def test_one_forward_per_row_and_column(d, p, rng):
    state = CoordinateState(3, 1)
    params = OptimizerParams.initialize(3, 1, seed=0)
    for call in range(1, 3):
        adapt(params, rng.standard_normal((d, p)), state, "w")
        assert state.coordinate_forwards == call * (d + p)
