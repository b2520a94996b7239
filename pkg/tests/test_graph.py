import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stkd import tensor as T
from stkd.errors import DataError, DimensionError, FormatError, ParameterError
from stkd.graph import (Graph, connected_component_count, erdos_renyi_geometric,
                        load_edge_csv, save_edge_csv, spmm, symmetric_normalize)
from stkd.tensor import Tensor


class TestSymmetricNormalize:
    def test_two_node_hand_computed(self):
        # A=[[0,1],[1,0]], A+I all-ones, D=diag(2,2) -> every entry 0.5
        g = Graph.from_edge_list(2, [(0, 1, 1.0)])
        dense = symmetric_normalize(g).to_dense()
        assert np.abs(dense - 0.5).max() < 1e-15

    def test_isolated_single_node(self):
        g = Graph.from_edge_list(1, [])
        assert symmetric_normalize(g).to_dense().tolist() == [[1.0]]

    def test_edgeless_graph_is_identity(self):
        g = Graph.from_edge_list(3, [])
        assert (symmetric_normalize(g).to_dense() == np.eye(3)).all()

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_symmetry_and_spectral_radius(self, seed):
        g = erdos_renyi_geometric(30, 0.5, seed)
        dense = symmetric_normalize(g).to_dense()
        assert np.abs(dense - dense.T).max() <= 1e-12
        assert np.abs(np.linalg.eigvalsh(dense)).max() <= 1.0 + 1e-9

    def test_negative_weight_rejected(self):
        with pytest.raises(DataError):
            Graph.from_edge_list(2, [(0, 1, -0.5)])

    def test_self_loop_rejected(self):
        with pytest.raises(DataError):
            Graph.from_edge_list(2, [(1, 1, 1.0)])

    def test_edges_are_mirrored(self):
        g = Graph.from_edge_list(3, [(0, 2, 0.7)])
        assert (0, 2, 0.7) in g.edges and (2, 0, 0.7) in g.edges


class TestSpmm:
    def test_identity_adjacency_is_noop(self):
        adj = symmetric_normalize(Graph.from_edge_list(3, []))
        x = np.random.default_rng(0).random((3, 4))
        assert (spmm(adj, Tensor(x)).data == x).all()

    def test_two_node_average(self):
        adj = symmetric_normalize(Graph.from_edge_list(2, [(0, 1, 1.0)]))
        out = spmm(adj, Tensor([[1.0], [3.0]]))
        assert np.abs(out.data - [[2.0], [2.0]]).max() < 1e-15

    def test_dimension_check(self):
        adj = symmetric_normalize(Graph.from_edge_list(2, [(0, 1, 1.0)]))
        with pytest.raises(DimensionError):
            spmm(adj, Tensor(np.ones((3, 2))))

    @pytest.mark.parametrize("n,seed", [(8, 0), (33, 1), (64, 2)])
    def test_matches_dense_matmul(self, n, seed):
        # brute-force equivalence oracle against the densified operator
        g = erdos_renyi_geometric(n, 0.4, seed)
        adj = symmetric_normalize(g)
        x = np.random.default_rng(seed).random((n, 5))
        dense = adj.to_dense() @ x
        assert np.abs(spmm(adj, Tensor(x)).data - dense).max() <= 1e-12

    def test_repeated_application_contracts_mad(self):
        from stkd.distill import mad_metric
        g = erdos_renyi_geometric(40, 0.4, 9)
        assert connected_component_count(g) == 1
        adj = symmetric_normalize(g)
        x = Tensor(np.random.default_rng(9).standard_normal((40, 6)))
        mads = [mad_metric(x.data)]
        for _ in range(6):
            x = spmm(adj, x)
            mads.append(mad_metric(x.data))
        assert mads[-1] < mads[0]
        assert all(b <= a + 1e-9 for a, b in zip(mads, mads[1:]))

    def test_constant_vector_preserved_on_regular_graph(self):
        # 4-cycle is 2-regular; symmetric normalization keeps row sums 1
        g = Graph.from_edge_list(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)])
        adj = symmetric_normalize(g)
        out = spmm(adj, Tensor(np.full((4, 1), 2.5)))
        assert np.abs(out.data - 2.5).max() <= 1e-9


class TestGeometricGenerator:
    def test_same_seed_identical(self):
        a = erdos_renyi_geometric(40, 0.3, 11)
        b = erdos_renyi_geometric(40, 0.3, 11)
        assert a.edges == b.edges

    def test_different_seed_differs(self):
        a = erdos_renyi_geometric(40, 0.3, 11)
        b = erdos_renyi_geometric(40, 0.3, 12)
        assert a.edges != b.edges

    def test_radius_out_of_range_is_error(self):
        with pytest.raises(ParameterError):
            erdos_renyi_geometric(10, 1.5, 0)
        with pytest.raises(ParameterError):
            erdos_renyi_geometric(10, 0.0, 0)
        with pytest.raises(ParameterError):
            erdos_renyi_geometric(1, 0.5, 0)

    def test_component_count_regression(self):
        # pinned once from the seeded generator; change means the stream moved
        g = erdos_renyi_geometric(50, 0.3, 7)
        assert connected_component_count(g) == COMPONENT_COUNT_N50_R03_SEED7

    def test_weights_in_unit_interval(self):
        g = erdos_renyi_geometric(50, 0.4, 3)
        ws = [w for _, _, w in g.edges]
        assert all(np.exp(-4.0) < w <= 1.0 for w in ws)


# frozen from the first run of the seeded generator (n=50, radius=0.3, seed=7)
COMPONENT_COUNT_N50_R03_SEED7 = 1


class TestEdgeCsv:
    def test_round_trip(self, tmp_path):
        g = erdos_renyi_geometric(25, 0.4, 5)
        path = tmp_path / "edges.csv"
        save_edge_csv(g, path)
        loaded = load_edge_csv(path, n_nodes=25)
        assert loaded.edges == g.edges

    def test_bad_header(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("a,b,c\n0,1,1.0\n")
        with pytest.raises(FormatError):
            load_edge_csv(path)

    def test_bad_field_count_names_line(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("src,dst,weight\n0,1\n")
        with pytest.raises(FormatError, match="line 2"):
            load_edge_csv(path)

    def test_node_count_inferred(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("src,dst,weight\n0,4,1.0\n")
        assert load_edge_csv(path).n_nodes == 5

    def test_conflicting_duplicate_weight(self):
        with pytest.raises(DataError):
            Graph.from_edge_list(3, [(0, 1, 1.0), (1, 0, 2.0)])


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_generator_always_valid(seed):
    g = erdos_renyi_geometric(12, 0.45, seed)
    dense = symmetric_normalize(g).to_dense()
    assert np.abs(dense - dense.T).max() <= 1e-12
    assert np.all(np.isfinite(dense))
