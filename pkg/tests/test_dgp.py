import numpy as np
import pytest

from netdid.dgp import PanelDataset, SimConfig, neighbor_mean, oracle_adt, simulate
from netdid.errors import EstimationError
from netdid.graph import erdos_renyi

from test_graph import graph_from_edges


class TestNeighborMean:
    def test_complete_graph_hand_arithmetic(self):
        g = erdos_renyi(3, 1.0, seed=0)
        out = neighbor_mean(np.array([1.0, 2.0, 3.0]), g)
        assert list(out) == [2.5, 2.0, 1.5]

    def test_isolated_unit_zero(self):
        g = graph_from_edges(3, [(0, 1)])
        out = neighbor_mean(np.array([5.0, 7.0, 9.0]), g)
        assert out[2] == 0.0

    def test_constant_vector(self):
        g = erdos_renyi(20, 0.5, seed=3)
        assert np.allclose(neighbor_mean(np.full(20, 2.5), g), 2.5)

    def test_matrix_input(self):
        g = erdos_renyi(10, 0.4, seed=1)
        V = np.random.default_rng(0).standard_normal((10, 3))
        out = neighbor_mean(V, g)
        for k in range(3):
            assert np.allclose(out[:, k], neighbor_mean(V[:, k], g))


class TestSimulate:
    def test_deterministic(self):
        cfg = SimConfig(n=200, seed=42)
        g1, d1 = simulate(cfg)
        g2, d2 = simulate(cfg)
        assert np.array_equal(g1.adjacency, g2.adjacency)
        for name in ("D", "Y0", "Y1", "dY", "X", "W", "Z", "U"):
            assert np.array_equal(getattr(d1, name), getattr(d2, name))

    def test_graph_matches_standalone_generator(self):
        cfg = SimConfig(n=150, p_edge=0.3, seed=9)
        g, _ = simulate(cfg)
        assert np.array_equal(g.adjacency, erdos_renyi(150, 0.3, 9).adjacency)

    def test_tau_zero_removes_direct_effect(self):
        # with tau=0 the outcome difference is exactly the sum of the known
        # non-treatment terms, so the residual regression on D is ~0
        cfg = SimConfig(n=800, tau=0.0, seed=5)
        g, ds = simulate(cfg)
        bX = np.asarray(cfg.beta_X)
        bU = np.asarray(cfg.beta_U)
        known = (
            0.2 * neighbor_mean(ds.U[:, 0], g) ** 2
            + 0.2 * neighbor_mean(ds.X[:, 0], g) ** 2
            + 0.5 * neighbor_mean(ds.D, g)
            + 0.2 * ds.X @ bX
            + 0.3 * ds.U @ bU
            + 0.3 * ds.W
        )
        resid = ds.dY - known
        coef = np.dot(ds.D, resid) / np.dot(ds.D, ds.D)
        assert abs(coef) < 1e-12

    def test_treated_share_interior(self):
        for seed in range(10):
            _, ds = simulate(SimConfig(n=1500, seed=seed))
            assert 0.2 < ds.D.mean() < 0.8

    def test_covariate_moments(self):
        n = 4000
        _, ds = simulate(SimConfig(n=n, seed=11))
        tol = 5.0 / np.sqrt(n)
        assert np.all(np.abs(ds.X.mean(axis=0)) < tol)
        assert np.all(np.abs(ds.X.var(axis=0) - 1.0) < 5 * tol)

    def test_dy_identity(self):
        _, ds = simulate(SimConfig(n=100, seed=1))
        assert np.array_equal(ds.dY, ds.Y1 - ds.Y0)

    def test_confounding_channel_present(self):
        # the treatment loads on the latent index everywhere; the
        # neighbor-mean channel concentrates to zero variance on dense
        # graphs, so its correlation bound is checked on a sparser network
        _, ds_dense = simulate(SimConfig(n=1500, seed=3))
        own_idx = ds_dense.U @ np.asarray(SimConfig(n=2).beta_U)
        assert np.corrcoef(ds_dense.D, own_idx)[0, 1] > 0.1
        for seed in range(3):
            g, ds = simulate(SimConfig(n=1500, p_edge=0.05, seed=seed))
            c = np.corrcoef(ds.D, neighbor_mean(ds.U[:, 0], g))[0, 1]
            assert c > 0.1

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SimConfig(n=1)
        with pytest.raises(ValueError):
            SimConfig(n=10, noise_sd=0.0)
        with pytest.raises(ValueError):
            SimConfig(n=10, beta_X=(1.0, 2.0))


class TestOracleAdt:
    def test_default(self):
        _, ds = simulate(SimConfig(n=50, seed=0))
        assert oracle_adt(ds) == 0.5

    @pytest.mark.parametrize("tau", [0.0, -1.25])
    def test_pass_through(self, tau):
        _, ds = simulate(SimConfig(n=50, tau=tau, seed=0))
        assert oracle_adt(ds) == tau

    def test_ingested_data_errors(self):
        _, ds = simulate(SimConfig(n=50, seed=0))
        stripped = PanelDataset.from_arrays(ds.D, ds.Y0, ds.Y1, ds.X, ds.W, ds.Z)
        with pytest.raises(EstimationError):
            oracle_adt(stripped)


class TestPanelDataset:
    def test_rejects_inconsistent_dy(self):
        n = 4
        with pytest.raises(ValueError):
            PanelDataset(
                D=np.zeros(n),
                Y0=np.zeros(n),
                Y1=np.ones(n),
                dY=np.zeros(n),
                X=np.zeros((n, 2)),
                W=np.zeros(n),
                Z=np.zeros(n),
            )

    def test_rejects_nonbinary_treatment(self):
        n = 4
        with pytest.raises(ValueError):
            PanelDataset.from_arrays(
                D=np.full(n, 0.5),
                Y0=np.zeros(n),
                Y1=np.zeros(n),
                X=np.zeros((n, 2)),
                W=np.zeros(n),
                Z=np.zeros(n),
            )

    def test_immutable(self):
        _, ds = simulate(SimConfig(n=20, seed=0))
        with pytest.raises(ValueError):
            ds.dY[0] = 99.0
