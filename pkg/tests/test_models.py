import numpy as np
import pytest

from stkd import tensor as T
from stkd.errors import DimensionError, FormatError, ParameterError
from stkd.graph import erdos_renyi_geometric, symmetric_normalize
from stkd.models import (StudentConfig, StudentModel, TeacherConfig, TeacherModel,
                         load_checkpoint, param_count, save_checkpoint)
from stkd.tensor import Tensor, grad_check


@pytest.fixture(scope="module")
def small_graph():
    g = erdos_renyi_geometric(6, 0.9, 3)
    return g, symmetric_normalize(g)


def _teacher6():
    return TeacherModel.init(TeacherConfig(L=2, h_T=8, K_t=2, T_p=2, steps_per_day=288),
                             seed=11)


def _window(t_len=4, n=6, seed=0):
    return Tensor(np.random.default_rng(seed).random((t_len, n, 1)))


class TestTeacherForward:
    def test_output_shapes(self, small_graph):
        _, adj = small_graph
        pred, reps = _teacher6().forward(adj, _window(), 40)
        assert pred.shape == (2, 6)
        assert [r.shape for r in reps] == [(6, 8), (6, 8)]

    def test_zero_parameters_give_bias_output(self, small_graph):
        _, adj = small_graph
        m = _teacher6()
        for p in m.params.values():
            p.data = np.zeros_like(p.data)
        m.params["head.b"].data = np.array([1.5, -2.0])
        pred, _ = m.forward(adj, _window(), 40)
        assert np.abs(pred.data - np.array([[1.5], [-2.0]])).max() < 1e-15

    def test_window_too_short(self, small_graph):
        _, adj = small_graph
        m = TeacherModel.init(TeacherConfig(L=2, h_T=8, K_t=3, T_p=2), seed=0)
        with pytest.raises(DimensionError, match="too short"):
            m.forward(adj, _window(t_len=4), 40)

    def test_adjacency_node_mismatch(self):
        adj = symmetric_normalize(erdos_renyi_geometric(5, 0.9, 1))
        with pytest.raises(DimensionError):
            _teacher6().forward(adj, _window(n=6), 40)

    def test_negative_time_index(self, small_graph):
        _, adj = small_graph
        with pytest.raises(ParameterError):
            _teacher6().forward(adj, _window(), -1)

    def test_identity_adjacency_equals_no_graph_forward(self):
        # edgeless graph normalizes to the exact identity operator
        from stkd.graph import Graph
        adj_i = symmetric_normalize(Graph.from_edge_list(6, []))
        m = _teacher6()
        w = _window(seed=5)
        with_adj, _ = m.forward(adj_i, w, 17)
        without, _ = m.forward(None, w, 17)
        assert np.abs(with_adj.data - without.data).max() <= 1e-12

    def test_gradient_check_full_forward(self, small_graph):
        _, adj = small_graph
        m = _teacher6()
        w = _window(seed=7)
        tgt = Tensor(np.random.default_rng(8).random((2, 6)))

        def f(params):
            pred, _ = m.forward(adj, w, 33)
            d = T.sub(pred, tgt)
            return T.sum_all(T.mul(d, d))

        assert grad_check(f, list(m.params.values())) <= 1e-5


class TestStudentForward:
    CFG = StudentConfig(n_nodes=6, T_h=4, T_p=2, h_S=8, d_e=3, n_layers=2,
                        h_T=8, steps_per_day=288)

    def test_output_shapes(self):
        m = StudentModel.init(self.CFG, seed=2)
        pred, z, proj = m.forward(_window(), 40)
        assert pred.shape == (2, 6) and z.shape == (6, 8) and proj.shape == (6, 8)

    def test_permutation_equivariance(self):
        m = StudentModel.init(self.CFG, seed=3)
        w = np.random.default_rng(4).random((4, 6, 1))
        perm = np.array([3, 0, 5, 1, 4, 2])
        pred, _, _ = m.forward(Tensor(w), 40)
        m.params["embed"].data = m.params["embed"].data[perm]
        pred_p, _, _ = m.forward(Tensor(w[:, perm, :]), 40)
        assert np.abs(pred_p.data - pred.data[:, perm]).max() <= 1e-12

    def test_per_node_independence_is_exact(self):
        m = StudentModel.init(self.CFG, seed=5)
        w = np.random.default_rng(6).random((4, 6, 1))
        pred, _, _ = m.forward(Tensor(w), 40)
        w2 = w.copy()
        w2[:, 1:, :] = 9.9  # clobber every other node's history
        pred2, _, _ = m.forward(Tensor(w2), 40)
        assert (pred2.data[:, 0] == pred.data[:, 0]).all()

    def test_zero_embedding_dim_runs(self):
        cfg = StudentConfig(n_nodes=6, T_h=4, T_p=2, h_S=8, d_e=0, n_layers=2,
                            h_T=8, steps_per_day=288)
        m = StudentModel.init(cfg, seed=6)
        assert "embed" not in m.params
        pred, _, _ = m.forward(_window(), 0)
        assert pred.shape == (2, 6)

    def test_time_index_validation(self):
        m = StudentModel.init(self.CFG, seed=7)
        with pytest.raises(ParameterError):
            m.forward(_window(), -3)

    def test_gradient_check(self):
        m = StudentModel.init(self.CFG, seed=8)
        w = _window(seed=9)
        tgt = Tensor(np.random.default_rng(10).random((2, 6)))

        def f(params):
            pred, _, proj = m.forward(w, 21)
            d = T.sub(pred, tgt)
            return T.add(T.sum_all(T.mul(d, d)), T.mean_all(T.mul(proj, proj)))

        assert grad_check(f, list(m.params.values())) <= 1e-5


class TestInitAndCount:
    def test_same_seed_identical_parameters(self):
        a = TeacherModel.init(TeacherConfig(), seed=42)
        b = TeacherModel.init(TeacherConfig(), seed=42)
        for k in a.params:
            assert (a.params[k].data == b.params[k].data).all()
        sa = StudentModel.init(StudentConfig(n_nodes=10), seed=1)
        sb = StudentModel.init(StudentConfig(n_nodes=10), seed=1)
        for k in sa.params:
            assert (sa.params[k].data == sb.params[k].data).all()

    def test_hand_counted_minimal_student(self):
        # T_h=1, d_e=0, one hidden unit, one layer, T_p=1, h_T=1:
        # input = history(1) + sin/cos(2) = 3
        # layer0: 3*1+1 = 4; head: 1*1+1 = 2; projection: 1*1+1 = 2 -> 8
        cfg = StudentConfig(n_nodes=1, T_h=1, T_p=1, h_S=1, d_e=0, n_layers=1,
                            h_T=1, steps_per_day=288)
        assert param_count(StudentModel.init(cfg, seed=0)) == 8

    def test_hand_counted_teacher(self):
        # L=1, h=2, K=2, T_p=1, in_channels=3:
        # conv banks: 2 * (2*3*2 + 2) = 28; graph: 2*2+2 = 6; head: 2*1+1 = 3
        cfg = TeacherConfig(L=1, h_T=2, K_t=2, T_p=1)
        assert param_count(TeacherModel.init(cfg, seed=0)) == 37

    def test_default_capacity_ratio_at_least_5x(self):
        teacher = TeacherModel.init(TeacherConfig(), seed=0)
        student = StudentModel.init(StudentConfig(n_nodes=200), seed=0)
        assert param_count(teacher) >= 5 * param_count(student)
        assert param_count(student) < param_count(teacher)


class TestCheckpoints:
    def test_round_trip_teacher_bitwise(self, tmp_path):
        m = TeacherModel.init(TeacherConfig(L=2, h_T=8, K_t=2, T_p=2), seed=20)
        path = tmp_path / "t.ckpt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, TeacherModel)
        assert loaded.cfg == m.cfg
        for k in m.params:
            assert loaded.params[k].data.tobytes() == m.params[k].data.tobytes()

    def test_round_trip_student_bitwise(self, tmp_path):
        m = StudentModel.init(StudentConfig(n_nodes=7), seed=21)
        path = tmp_path / "s.ckpt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, StudentModel)
        assert loaded.cfg == m.cfg
        for k in m.params:
            assert loaded.params[k].data.tobytes() == m.params[k].data.tobytes()

    def test_kinds_are_distinguishable(self, tmp_path):
        t_path, s_path = tmp_path / "t.ckpt", tmp_path / "s.ckpt"
        save_checkpoint(TeacherModel.init(TeacherConfig(L=1, h_T=2, K_t=2, T_p=1), 0), t_path)
        save_checkpoint(StudentModel.init(StudentConfig(n_nodes=2), 0), s_path)
        assert isinstance(load_checkpoint(t_path), TeacherModel)
        assert isinstance(load_checkpoint(s_path), StudentModel)

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        m = StudentModel.init(StudentConfig(n_nodes=2), 0)
        save_checkpoint(m, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        m = StudentModel.init(StudentConfig(n_nodes=2), 0)
        save_checkpoint(m, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 7])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "v.ckpt"
        m = StudentModel.init(StudentConfig(n_nodes=2), 0)
        save_checkpoint(m, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)
