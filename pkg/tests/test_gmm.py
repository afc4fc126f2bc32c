import numpy as np
import pytest

from netdid.dgp import PanelDataset, SimConfig, simulate
from netdid.errors import EstimationError
from netdid.exposure import ANY_TREATED, ExposureSpec, ExposureVector, compute_exposure
from netdid.gmm import (
    MomentContext,
    build_ait_moment_context,
    build_moment_context,
    fit_bridge,
    gmm_objective,
    moment_h,
    moment_q,
    optimal_weight,
    per_row_moments_h,
)
from netdid.graph import bfs_distances, erdos_renyi, interference_sets
from netdid.nn import BridgeNet, bridge_forward


def hand_context(instruments, g0, g1, target_g=1.0):
    instruments = np.asarray(instruments, dtype=np.float64)
    return MomentContext(
        target_g=target_g,
        exposure=None,
        instruments_h=instruments,
        instruments_q=instruments,
        indicator_1g0=np.asarray(g0, dtype=np.float64),
        indicator_1g1=np.asarray(g1, dtype=np.float64),
        n_units=len(g0),
    )


def loop_moment_h(instruments, g0, h_vals, dY):
    n, k = np.asarray(instruments).shape
    out = [0.0] * k
    for i in range(n):
        for c in range(k):
            out[c] += (dY[i] - h_vals[i]) * g0[i] * instruments[i][c]
    return np.array(out) / n


def loop_moment_q(instruments, g0, g1, q_vals):
    n, k = np.asarray(instruments).shape
    out = [0.0] * k
    for i in range(n):
        for c in range(k):
            out[c] += (q_vals[i] * g0[i] - g1[i]) * instruments[i][c]
    return np.array(out) / n


class TestMomentH:
    def test_zero_residuals(self):
        ctx = hand_context(np.ones((4, 2)), [1, 1, 0, 0], [0, 0, 1, 1])
        dY = np.array([1.0, 2.0, 3.0, 4.0])
        assert np.array_equal(moment_h(ctx, dY.copy(), dY), np.zeros(2))

    def test_empty_control_cell(self):
        ctx = hand_context(np.ones((4, 2)), [0, 0, 0, 0], [1, 1, 1, 1])
        m = moment_h(ctx, np.zeros(4), np.ones(4))
        assert np.array_equal(m, np.zeros(2))

    def test_hand_built_instance(self):
        instruments = [[1.0, 2.0], [0.5, -1.0], [2.0, 0.0], [-1.0, 1.0]]
        g0 = [1, 0, 1, 1]
        dY = [1.0, 5.0, -2.0, 0.5]
        h = [0.5, 1.0, 1.0, -0.5]
        ctx = hand_context(instruments, g0, [0, 1, 0, 0])
        assert np.allclose(
            moment_h(ctx, np.array(h), np.array(dY)),
            loop_moment_h(instruments, g0, h, dY),
        )

    def test_linear_in_h(self):
        rng = np.random.default_rng(0)
        ctx = hand_context(rng.standard_normal((10, 3)), rng.integers(0, 2, 10), np.zeros(10))
        dY = rng.standard_normal(10)
        h1, h2 = rng.standard_normal(10), rng.standard_normal(10)
        a, b = 0.3, -1.7
        lhs = moment_h(ctx, a * h1 + b * h2, dY)
        rhs = (
            a * moment_h(ctx, h1, dY)
            + b * moment_h(ctx, h2, dY)
            + (1 - a - b) * moment_h(ctx, np.zeros(10), dY)
        )
        assert np.allclose(lhs, rhs)


class TestMomentQ:
    def test_balanced_ratio_with_constant_instrument(self):
        g0 = np.array([1, 1, 1, 0, 0, 0], dtype=float)
        g1 = np.array([0, 0, 0, 1, 1, 0], dtype=float)
        ctx = hand_context(np.ones((6, 1)), g0, g1)
        q = np.full(6, g1.sum() / g0.sum())
        assert abs(moment_q(ctx, q)[0]) < 1e-15

    def test_both_cells_empty(self):
        ctx = hand_context(np.ones((3, 2)), [0, 0, 0], [0, 0, 0])
        assert np.array_equal(moment_q(ctx, np.ones(3)), np.zeros(2))

    def test_hand_built_instance(self):
        instruments = [[1.0, -1.0], [2.0, 0.5], [0.0, 1.0], [1.0, 1.0]]
        g0 = [1, 0, 1, 0]
        g1 = [0, 1, 0, 0]
        q = [0.5, 2.0, 1.5, -1.0]
        ctx = hand_context(instruments, g0, g1)
        assert np.allclose(
            moment_q(ctx, np.array(q)), loop_moment_q(instruments, g0, g1, q)
        )


class TestGmmObjective:
    def test_zero_moment(self):
        assert gmm_objective(np.zeros(3), np.eye(3)) == 0.0

    def test_identity_weight_is_squared_norm(self):
        m = np.array([1.0, -2.0, 3.0])
        assert gmm_objective(m, np.eye(3)) == pytest.approx(14.0)

    def test_diagonal_weight(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal(4)
        w = rng.uniform(0.5, 2.0, 4)
        assert gmm_objective(m, np.diag(w)) == pytest.approx(float(np.sum(w * m**2)))

    def test_rejects_indefinite_weight(self):
        with pytest.raises(ValueError):
            gmm_objective(np.ones(2), np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = rng.standard_normal(3)
            A = rng.standard_normal((3, 3))
            omega = A @ A.T + 0.1 * np.eye(3)
            assert gmm_objective(m, omega) >= 0.0


class TestOptimalWeight:
    def test_zero_moments_scaled_identity(self):
        Lambda, omega = optimal_weight(np.zeros((10, 3)))
        assert np.array_equal(Lambda, np.zeros((3, 3)))
        assert np.allclose(omega, np.eye(3) * 1e8)

    def test_single_nonzero_row(self):
        v = np.array([1.0, 2.0])
        M = np.zeros((5, 2))
        M[2] = v
        Lambda, _ = optimal_weight(M)
        assert np.allclose(Lambda, np.outer(v, v) / 5)

    def test_iid_normal_moments_near_identity(self):
        M = np.random.default_rng(3).standard_normal((20000, 3))
        Lambda, omega = optimal_weight(M)
        assert np.max(np.abs(Lambda - np.eye(3))) < 0.1
        assert np.max(np.abs(omega - np.eye(3))) < 0.15

    def test_symmetric_psd(self):
        M = np.random.default_rng(4).standard_normal((50, 4))
        Lambda, omega = optimal_weight(M)
        assert np.allclose(Lambda, Lambda.T)
        assert np.all(np.linalg.eigvalsh(Lambda) >= -1e-12)
        assert np.allclose(omega, omega.T)


def small_problem(n=300, seed=0):
    g, ds = simulate(SimConfig(n=n, p_edge=0.05, seed=seed))
    ev = compute_exposure(ExposureSpec(ANY_TREATED), ds.D, g)
    ctx = build_moment_context(ds, g, ev, target_g=1.0)
    return g, ds, ev, ctx


class TestBuildMomentContext:
    def test_indicators_partition(self):
        g, ds, ev, ctx = small_problem()
        at_g = ev.values == 1.0
        assert np.array_equal(ctx.indicator_1g1, (at_g & (ds.D == 1)).astype(float))
        assert np.array_equal(ctx.indicator_1g0, (at_g & (ds.D == 0)).astype(float))
        assert np.all(ctx.indicator_1g0 * ctx.indicator_1g1 == 0)

    def test_instrument_stack_contents(self):
        from netdid.nn import standardize_columns

        g, ds, ev, ctx = small_problem()
        ax = g.adjacency.astype(float) @ standardize_columns(ds.X)
        assert np.allclose(ctx.instruments_h[:, 0], ds.Z)
        assert np.allclose(ctx.instruments_q[:, 0], ds.W)
        assert np.allclose(ctx.instruments_h[:, 1:], ax)

    def test_intercept_flag(self):
        g, ds, ev, _ = small_problem()
        ctx = build_moment_context(ds, g, ev, 1.0, instrument_intercept=True)
        assert ctx.n_moments == 12
        assert np.array_equal(ctx.instruments_h[:, -1], np.ones(ds.n))

    def test_ait_context_rows(self):
        g, ds, _, _ = small_problem(n=60, seed=2)
        ig = interference_sets(g, bfs_distances(g), K=1)
        ctx = build_ait_moment_context(ds, g, ig)
        src, dst = ig.pairs()
        assert ctx.n_rows == src.size
        assert np.array_equal(ctx.indicator_1g1, ds.D[src])
        assert np.array_equal(ctx.indicator_1g0, 1.0 - ds.D[src])
        assert np.allclose(ctx.instruments_h[:, 0], ds.Z[dst])
        assert np.array_equal(ctx.unit_index, dst)
        # rows() replicates unit values onto pairs
        v = np.arange(ds.n, dtype=float)
        assert np.array_equal(ctx.rows(v), v[dst])


class TestFitBridge:
    def test_zero_init_zero_outcome_is_stationary(self):
        g, ds0, ev, _ = small_problem(n=80, seed=3)
        ds = PanelDataset.from_arrays(ds0.D, ds0.Y0, ds0.Y0, ds0.X, ds0.W, ds0.Z)
        ctx = build_moment_context(ds, g, ev, 1.0)
        net = BridgeNet(in_dim=10)
        zero = np.zeros(net.n_params)
        fit = fit_bridge(net, ds, g, ctx, "h", epochs=5, seed=0, init=zero)
        assert fit.step1_objective == 0.0
        assert fit.step2_objective == 0.0
        assert np.array_equal(fit.params, zero)

    def test_two_step_monotone_and_deterministic(self):
        g, ds, ev, ctx = small_problem(n=250, seed=4)
        net = BridgeNet(in_dim=10)
        fit_a = fit_bridge(net, ds, g, ctx, "h", epochs=60, seed=1)
        fit_b = fit_bridge(net, ds, g, ctx, "h", epochs=60, seed=1)
        assert fit_a.step2_objective <= fit_a.step1_objective_optimal
        assert np.array_equal(fit_a.params, fit_b.params)
        assert fit_a.to_json() == fit_b.to_json()
        assert fit_a.converged

    def test_q_fit_runs_and_improves(self):
        g, ds, ev, ctx = small_problem(n=250, seed=5)
        net = BridgeNet(in_dim=10)
        fit = fit_bridge(net, ds, g, ctx, "q", epochs=60, seed=2)
        assert fit.step2_objective <= fit.step1_objective_optimal
        assert np.isfinite(fit.step2_objective)

    def test_mean_residual_balance_with_constant_instrument(self):
        g, ds, ev, _ = small_problem(n=300, seed=6)
        at_g = ev.values == 1.0
        ctx = MomentContext(
            target_g=1.0,
            exposure=ev,
            instruments_h=np.ones((ds.n, 1)),
            instruments_q=np.ones((ds.n, 1)),
            indicator_1g0=(at_g & (ds.D == 0)).astype(float),
            indicator_1g1=(at_g & (ds.D == 1)).astype(float),
            n_units=ds.n,
        )
        net = BridgeNet(in_dim=10)
        fit = fit_bridge(net, ds, g, ctx, "h", epochs=500, seed=3)
        h_vals, _ = bridge_forward(net, ds, g, fit.params)
        assert abs(moment_h(ctx, h_vals, ds.dY)[0]) < 1e-3

    def test_empty_cells_raise(self):
        g, ds, ev, _ = small_problem(n=80, seed=7)
        ctx = MomentContext(
            target_g=1.0,
            exposure=ev,
            instruments_h=np.ones((ds.n, 1)),
            instruments_q=np.ones((ds.n, 1)),
            indicator_1g0=np.zeros(ds.n),
            indicator_1g1=np.ones(ds.n),
            n_units=ds.n,
        )
        net = BridgeNet(in_dim=10)
        with pytest.raises(EstimationError, match="control cell"):
            fit_bridge(net, ds, g, ctx, "h", epochs=5, seed=0)
        ctx2 = MomentContext(
            target_g=1.0,
            exposure=ev,
            instruments_h=np.ones((ds.n, 1)),
            instruments_q=np.ones((ds.n, 1)),
            indicator_1g0=np.ones(ds.n),
            indicator_1g1=np.zeros(ds.n),
            n_units=ds.n,
        )
        with pytest.raises(EstimationError, match="treated cell"):
            fit_bridge(net, ds, g, ctx2, "q", epochs=5, seed=0)

    def test_gradient_matches_finite_differences_on_gmm_objective(self):
        from test_nn import finite_difference, relative_errors, kink_margin
        from netdid.nn import PnaGraphContext, init_params, standardize_columns
        from netdid.gmm import _make_loss

        g, ds, ev, ctx = small_problem(n=40, seed=8)
        net = BridgeNet(in_dim=10, embed_dim=4, hidden_dim=4)
        gctx = PnaGraphContext.from_graph(g)
        features = standardize_columns(ds.X)
        omega = np.eye(ctx.n_moments)
        loss = _make_loss(ctx, "h", ds.dY, omega)
        checked = 0
        for point in range(40):
            theta = init_params(net, seed=300 + point)
            if kink_margin(net, theta, features, gctx, ds.W, ds.Z) < 1e-3:
                continue
            _, grad = net.value_and_grad(theta, features, gctx, ds.W, ds.Z, loss)
            fd = finite_difference(
                lambda t: net.value_and_grad(t, features, gctx, ds.W, ds.Z, loss)[0],
                theta,
            )
            assert relative_errors(grad, fd).max() < 1e-4
            checked += 1
            if checked >= 3:
                break
        assert checked == 3
