import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revelight import streams
from revelight.errors import DomainError, ShapeError
from revelight.models import (
    GlobalModel,
    LocalModel,
    ModelState,
    PartitionedDataset,
    composite_objective,
    global_value,
    init_state,
    local_forward,
    nonconvex_reg,
    partition_features,
)


class TestLocalForward:
    def test_linear_inner_product(self):
        m = LocalModel(kind="linear")
        out = local_forward(m, np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        assert out.shape == (1,)
        assert out[0] == 11.0

    def test_linear_zero_weights(self):
        m = LocalModel(kind="linear")
        x = np.array([5.0, -3.0, 2.0])
        assert local_forward(m, np.zeros(3), x)[0] == 0.0

    def test_mlp_hand_evaluated(self):
        # 2 -> 2 -> 1, all weights one, biases zero: relu((2,2)) dot (1,1) = 4
        m = LocalModel(kind="mlp", layer_sizes=(2, 1))
        w = np.array([1, 1, 1, 1, 0, 0, 1, 1, 0], dtype=float)
        out = local_forward(m, w, np.array([1.0, 1.0]))
        assert out.shape == (1,)
        assert out[0] == pytest.approx(4.0, abs=0)

    def test_mlp_zero_weights_gives_zero_vector(self):
        m = LocalModel(kind="mlp", layer_sizes=(4, 3))
        w = np.zeros(m.param_dim(5))
        assert np.all(local_forward(m, w, np.ones(5)) == 0.0)

    def test_dimension_mismatch(self):
        m = LocalModel(kind="linear")
        with pytest.raises(ShapeError):
            local_forward(m, np.zeros(3), np.zeros(4))

    def test_mlp_rectifier_kills_negative_preactivations(self):
        m = LocalModel(kind="mlp", layer_sizes=(1, 1))
        # W1 = -1, b1 = 0, W2 = 5, b2 = 0.25: relu(-x) = 0 for x > 0
        w = np.array([-1.0, 0.0, 5.0, 0.25])
        assert local_forward(m, w, np.array([2.0]))[0] == 0.25


class TestGlobalValue:
    def test_symmetry_point(self):
        g = GlobalModel(kind="logistic", q=2)
        v = global_value(g, np.zeros(0), [np.array([1.0]), np.array([-1.0])], 1)
        assert v == pytest.approx(np.log(2.0), abs=1e-15)

    def test_saturated_margin(self):
        g = GlobalModel(kind="logistic", q=1)
        v = global_value(g, np.zeros(0), [np.array([50.0])], 1)
        assert 0.0 <= v < 1e-20

    def test_sign_symmetry(self):
        g = GlobalModel(kind="logistic", q=1)
        a = global_value(g, np.zeros(0), [np.array([1.3])], -1)
        b = global_value(g, np.zeros(0), [np.array([-1.3])], 1)
        assert a == b

    def test_unknown_label(self):
        g = GlobalModel(kind="logistic", q=1)
        with pytest.raises(DomainError):
            global_value(g, np.zeros(0), [np.array([0.0])], 2)

    def test_softmax_head_uniform_logits(self):
        g = GlobalModel(kind="softmax_fcn", q=2, party_output_dim=1, classes=4)
        w0 = np.zeros(g.d0)
        v = global_value(g, w0, [np.array([0.3]), np.array([-0.2])], 3)
        assert v == pytest.approx(np.log(4.0), abs=1e-12)

    def test_softmax_label_out_of_range(self):
        g = GlobalModel(kind="softmax_fcn", q=1, party_output_dim=1, classes=3)
        with pytest.raises(DomainError):
            global_value(g, np.zeros(g.d0), [np.array([0.0])], 3)


class TestNonconvexReg:
    def test_zero(self):
        assert nonconvex_reg(np.zeros(7)) == 0.0

    def test_plug_in(self):
        assert nonconvex_reg(np.array([1.0])) == 0.5

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=32))
    def test_bounded_and_even(self, vals):
        w = np.array(vals)
        g = nonconvex_reg(w)
        assert 0.0 <= g < w.size
        assert g == nonconvex_reg(-w)


class TestPartitionFeatures:
    def test_nearly_equal_127_8(self):
        assert partition_features(127, 8) == [16, 16, 16, 16, 16, 16, 16, 15]

    def test_identity(self):
        assert partition_features(33, 1) == [33]

    @given(st.integers(1, 500), st.integers(1, 64))
    def test_conservation_and_balance(self, d, q):
        if q > d:
            with pytest.raises(DomainError):
                partition_features(d, q)
            return
        dims = partition_features(d, q)
        assert sum(dims) == d
        assert max(dims) - min(dims) <= 1

    def test_q_too_large(self):
        with pytest.raises(DomainError):
            partition_features(3, 4)


def _random_instance(rng, n, d, q):
    X = rng.standard_normal((n, d))
    y = rng.choice([-1, 1], size=n)
    dims = partition_features(d, q)
    data = PartitionedDataset.from_matrix(X, y, dims)
    state = ModelState(np.zeros(0), [rng.standard_normal(dm) * 0.3 for dm in dims])
    return data, state


class TestCompositeObjective:
    def test_zero_weights_balanced_data(self):
        rng = np.random.default_rng(0)
        data, state = _random_instance(rng, 12, 8, 2)
        state = ModelState(np.zeros(0), [np.zeros(d) for d in data.block_dims])
        v = composite_objective(state, data, 1e-4, LocalModel(), GlobalModel(kind="logistic", q=2))
        assert v == pytest.approx(np.log(2.0), abs=1e-15)

    def test_single_sample_reduction(self):
        rng = np.random.default_rng(1)
        data, state = _random_instance(rng, 1, 6, 3)
        lam = 0.37
        lm, gm = LocalModel(), GlobalModel(kind="logistic", q=3)
        c = [local_forward(lm, state.w[m], data.blocks[m][0]) for m in range(3)]
        expect = global_value(gm, state.w0, c, data.labels[0]) + lam * sum(
            nonconvex_reg(wm) for wm in state.w
        )
        assert composite_objective(state, data, lam, lm, gm) == pytest.approx(expect, abs=1e-15)

    def test_against_per_sample_oracle_n16(self):
        # independent oracle: explicit per-sample summation over concatenated w
        rng = np.random.default_rng(2)
        data, state = _random_instance(rng, 16, 10, 4)
        lam = 1e-3
        X = data.concatenated()
        w_cat = np.concatenate(state.w)
        acc = 0.0
        for i in range(16):
            z = -data.labels[i] * float(X[i] @ w_cat)
            acc += np.logaddexp(0.0, z)
        oracle = acc / 16 + lam * float(np.sum(w_cat**2 / (1 + w_cat**2)))
        got = composite_objective(state, data, lam, LocalModel(), GlobalModel(kind="logistic", q=4))
        assert got == pytest.approx(oracle, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        data, state = _random_instance(rng, 20, 8, 2)
        lm, gm = LocalModel(), GlobalModel(kind="logistic", q=2)
        v1 = composite_objective(state, data, 1e-4, lm, gm)
        perm = rng.permutation(20)
        data2 = PartitionedDataset(
            blocks=[b[perm] for b in data.blocks], labels=data.labels[perm]
        )
        v2 = composite_objective(state, data2, 1e-4, lm, gm)
        assert v1 == pytest.approx(v2, abs=1e-12)

    @settings(deadline=None, max_examples=100)
    @given(st.integers(0, 10**6))
    def test_federated_equals_centralized_logistic(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 64))
        d = int(rng.integers(2, 32))
        q = int(rng.integers(1, min(d, 6) + 1))
        data, state = _random_instance(rng, n, d, q)
        lam = float(rng.uniform(0, 1e-2))
        fed = composite_objective(state, data, lam, LocalModel(), GlobalModel(kind="logistic", q=q))
        X = data.concatenated()
        w_cat = np.concatenate(state.w)
        cent = float(
            np.mean(np.logaddexp(0.0, -data.labels * (X @ w_cat)))
        ) + lam * float(np.sum(w_cat**2 / (1 + w_cat**2)))
        assert abs(fed - cent) <= 1e-12


class TestInitState:
    def test_linear_init_is_zero(self):
        rng = np.random.default_rng(0)
        data, _ = _random_instance(rng, 4, 8, 2)
        st_ = init_state(data, LocalModel(), GlobalModel(kind="logistic", q=2), seed=7)
        assert all(np.all(w == 0) for w in st_.w)
        assert st_.d0 == 0 and st_.all_finite()

    def test_mlp_init_deterministic(self):
        rng = np.random.default_rng(0)
        data, _ = _random_instance(rng, 4, 8, 2)
        lm = LocalModel(kind="mlp", layer_sizes=(3, 1))
        gm = GlobalModel(kind="softmax_fcn", q=2, party_output_dim=1, classes=2)
        a = init_state(data, lm, gm, seed=11)
        b = init_state(data, lm, gm, seed=11)
        assert all(np.array_equal(x, y) for x, y in zip(a.w, b.w))
        assert np.array_equal(a.w0, b.w0)
        assert a.w0.size == gm.d0 == 4

    def test_stream_determinism(self):
        u = streams.stream(3, streams.DIRECTION, party=2, step=5).standard_normal(4)
        v = streams.stream(3, streams.DIRECTION, party=2, step=5).standard_normal(4)
        assert np.array_equal(u, v)
        w = streams.stream(3, streams.DIRECTION, party=2, step=6).standard_normal(4)
        assert not np.array_equal(u, w)
