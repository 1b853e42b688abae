import numpy as np
import pytest

from htkit.gradients import (
    conv_backward,
    fc_backward,
    format_gradients,
    gradient_shape,
    lstm_cell_backward,
)
from htkit.ht import HTFormat, random_ht_format
from htkit.layers import (
    ConvKernelSpec,
    LSTMCellParams,
    LSTMGate,
    TensorizedFCSpec,
    conv_forward,
    factor_arrays,
    fc_forward,
    fuse_matrix,
    init_conv_params,
    init_fc_params,
    lstm_cell_forward,
)
from htkit.tree import build_tree
from htkit.tt import random_tt_format

from oracles import (
    finite_diff_grads,
    ht_leaf_oracle_shape,
    ht_oracle_gradients,
    max_rel_err,
    tt_grads_from_kron,
    tt_oracle_gradients,
    tt_oracle_kron_matrices,
)


class TestFCBackwardFiniteDifferences:
    @pytest.mark.parametrize("kind,mode", [
        ("ht", "chain"),
        ("ht", "recovery"),
        ("tt", "chain"),
        ("tt", "recovery"),
    ])
    def test_small_spec(self, kind, mode):
        spec = TensorizedFCSpec(m=(2, 2), n=(2, 3), format_kind=kind, rank=2)
        rng = np.random.default_rng(hash((kind, mode)) % 2**32)
        params = init_fc_params(spec, rng)
        x = rng.standard_normal((2, spec.N))
        dl_dy = rng.standard_normal((2, spec.M))
        bundle = fc_backward(spec, params, x, dl_dy, mode=mode)
        arrays = factor_arrays(params)

        def loss():
            return float(np.sum(dl_dy * fc_forward(spec, params, x, mode=mode)))

        fd = finite_diff_grads(loss, arrays, step=1e-5)
        for name in arrays:
            assert max_rel_err(bundle.factor_grads[name], fd[name]) <= 1e-4

    def test_input_gradient(self):
        spec = TensorizedFCSpec(m=(2, 2), n=(2, 2), format_kind="ht", rank=2)
        rng = np.random.default_rng(1)
        params = init_fc_params(spec, rng)
        x = rng.standard_normal((1, spec.N))
        dl_dy = rng.standard_normal((1, spec.M))
        bundle = fc_backward(spec, params, x, dl_dy)

        def loss():
            return float(np.sum(dl_dy * fc_forward(spec, params, x)))

        fd = finite_diff_grads(loss, {"x": x}, step=1e-5)
        assert max_rel_err(bundle.dx, fd["x"]) <= 1e-4

    @pytest.mark.parametrize("kind", ["ht", "tt"])
    def test_chain_recovery_grads_agree(self, kind):
        spec = TensorizedFCSpec(m=(2, 2, 2), n=(2, 2, 2), format_kind=kind,
                                rank=2)
        rng = np.random.default_rng(2)
        params = init_fc_params(spec, rng)
        x = rng.standard_normal((3, spec.N))
        dl_dy = rng.standard_normal((3, spec.M))
        chain = fc_backward(spec, params, x, dl_dy, mode="chain")
        rec = fc_backward(spec, params, x, dl_dy, mode="recovery")
        for name in chain.factor_grads:
            num = np.linalg.norm(chain.factor_grads[name] - rec.factor_grads[name])
            den = max(np.linalg.norm(rec.factor_grads[name]), 1e-12)
            assert num / den <= 1e-8

    def test_d2_scalar_hand_example(self):
        tree = build_tree(2, "balanced")
        tree.assign_uniform_ranks((1, 1), 1)
        fmt = HTFormat(
            tree,
            {0: np.array([[2.0]]), 1: np.array([[5.0]])},
            {(0, 1): np.array([[[3.0]]])},
        )
        grads = format_gradients(fmt, np.ones((1, 1)))
        assert grads["U1"][0, 0] == pytest.approx(15.0)
        assert grads["B_1_2"][0, 0, 0] == pytest.approx(10.0)
        assert grads["U2"][0, 0] == pytest.approx(6.0)


class TestFormulaOracles:
    def test_ht_format_gradients_match_environment_oracle(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            fmt = random_ht_format((3, 2, 4, 3), 2, rng=rng)
            upstream = rng.standard_normal(fmt.dims)
            got = format_gradients(fmt, upstream)
            want = ht_oracle_gradients(fmt, upstream)
            for name in want:
                assert np.max(np.abs(got[name] - want[name])) <= 1e-10

    def test_ht_d3_tree(self):
        rng = np.random.default_rng(11)
        fmt = random_ht_format((3, 4, 2), 2, rng=rng)
        upstream = rng.standard_normal(fmt.dims)
        got = format_gradients(fmt, upstream)
        want = ht_oracle_gradients(fmt, upstream)
        for name in want:
            assert np.max(np.abs(got[name] - want[name])) <= 1e-10

    def test_tt_format_gradients_match_product_oracle(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            fmt = random_tt_format((3, 4, 2, 3), 2, rng=rng)
            upstream = rng.standard_normal(fmt.dims)
            got = format_gradients(fmt, upstream)
            want = tt_oracle_gradients(fmt, upstream)
            for name in want:
                assert np.max(np.abs(got[name] - want[name])) <= 1e-10

    def test_tt_kron_materialization_agrees(self):
        rng = np.random.default_rng(12)
        fmt = random_tt_format((3, 2, 4), 2, rng=rng)
        upstream = rng.standard_normal(fmt.dims)
        got = format_gradients(fmt, upstream)
        want = tt_grads_from_kron(fmt, upstream)
        for name in want:
            assert np.max(np.abs(got[name] - want[name])) <= 1e-10

    def test_d2_literal_kron_forms(self):
        # two-mode case written exactly as the identity-padded products
        rng = np.random.default_rng(13)
        fmt = random_ht_format((3, 4), 2, rng=rng)
        u1, u2 = fmt.leaf_factors[0], fmt.leaf_factors[1]
        b = fmt.transfer_tensors[(0, 1)][:, :, 0]
        upstream = rng.standard_normal((3, 4))
        got = format_gradients(fmt, upstream)
        # dW/dU1 factor: [B W2] with W2 = U2^T; dU1 = dW (B U2^T)^T
        f1 = b @ u2.T
        j1 = np.kron(np.eye(3), f1.T)  # maps vec(U1) -> vec(W)
        du1 = (j1.T @ upstream.reshape(-1)).reshape(u1.shape)
        np.testing.assert_allclose(got["U1"], du1, atol=1e-10)
        # dW/dU2 factor: [W1 B]^T with W1 = U1
        f2 = (u1 @ b).T
        du2 = upstream.T @ (u1 @ b)
        np.testing.assert_allclose(got["U2"], du2, atol=1e-10)
        assert f1.shape == gradient_shape(
            "ht", TensorizedFCSpec(m=(1, 1), n=(3, 4), format_kind="ht", rank=2), 0
        )
        assert f2.shape == gradient_shape(
            "ht", TensorizedFCSpec(m=(1, 1), n=(3, 4), format_kind="ht", rank=2), 1
        )

    def test_fc_layer_grads_match_oracle_through_fused_layout(self):
        # compose upstream dL/dW = dY^T X, push through the dense oracle,
        # compare with the layer backward
        for kind in ("ht", "tt"):
            spec = TensorizedFCSpec(m=(2, 3), n=(3, 2), format_kind=kind, rank=2)
            rng = np.random.default_rng(14)
            params = init_fc_params(spec, rng)
            x = rng.standard_normal((4, spec.N))
            dl_dy = rng.standard_normal((4, spec.M))
            bundle = fc_backward(spec, params, x, dl_dy, mode="chain")
            dl_dw = dl_dy.T @ x
            upstream = fuse_matrix(dl_dw, spec.m, spec.n)
            if kind == "ht":
                want = ht_oracle_gradients(params, upstream)
            else:
                want = tt_oracle_gradients(params, upstream)
            for name in want:
                assert np.max(np.abs(bundle.factor_grads[name] - want[name])) <= 1e-10


class TestGradientShapes:
    def test_ht_fused_example(self):
        spec = TensorizedFCSpec(m=(2, 2, 2, 2), n=(2, 2, 2, 2),
                                format_kind="ht", rank=2)
        assert spec.fused_dims == (4, 4, 4, 4)
        assert gradient_shape("ht", spec, 1) == (2, 64)

    def test_tt_boundary_and_interior(self):
        spec = TensorizedFCSpec(m=(2, 2, 2, 2), n=(2, 2, 2, 2),
                                format_kind="tt", rank=2)
        assert gradient_shape("tt", spec, 0) == (4 * 2, 256)
        assert gradient_shape("tt", spec, 1) == (2 * 2, 64)
        assert gradient_shape("tt", spec, 3) == (4 * 2, 256)

    def test_out_of_range(self):
        spec = TensorizedFCSpec(m=(2, 2), n=(2, 2), format_kind="ht", rank=2)
        with pytest.raises(IndexError):
            gradient_shape("ht", spec, 5)

    def test_oracle_shapes_match_formulas(self):
        rng = np.random.default_rng(15)
        spec = TensorizedFCSpec(m=(2, 2, 2, 2), n=(2, 2, 2, 2),
                                format_kind="ht", rank=2)
        fmt = init_fc_params(spec, rng)
        for k in range(4):
            assert ht_leaf_oracle_shape(fmt, k) == gradient_shape("ht", spec, k)
        spec_tt = TensorizedFCSpec(m=(2, 2, 2), n=(2, 2, 2),
                                   format_kind="tt", rank=2)
        fmt_tt = init_fc_params(spec_tt, rng)
        mats = tt_oracle_kron_matrices(fmt_tt)
        for k in range(3):
            formula = gradient_shape("tt", spec_tt, k)
            assert mats[k].shape[0] == formula[0]
            assert mats[k].shape[1] == formula[1]


class TestConvBackward:
    def test_zero_upstream(self):
        spec = ConvKernelSpec(l=3, c=(2,), s=(2,), format_kind="tt", rank=2)
        rng = np.random.default_rng(20)
        params = init_conv_params(spec, rng)
        img = rng.standard_normal((1, 4, 4, 2))
        out = conv_forward(spec, params, img)
        bundle = conv_backward(spec, params, img, np.zeros_like(out))
        assert all(not g.any() for g in bundle.factor_grads.values())
        assert not bundle.dx.any()

    def test_one_by_one_rank_one_hand_case(self):
        spec = ConvKernelSpec(l=1, c=(1,), s=(1,), format_kind="tt", rank=1)
        g1, g2 = 1.7, -0.6
        params = init_conv_params(spec, np.random.default_rng(21))
        arrays = factor_arrays(params)
        arrays["G1"][:] = g1
        arrays["G2"][:] = g2
        rng = np.random.default_rng(22)
        img = rng.standard_normal((2, 3, 3, 1))
        upstream = rng.standard_normal((2, 3, 3, 1))
        bundle = conv_backward(spec, params, img, upstream, padding="valid")
        s = float(np.sum(img * upstream))
        assert bundle.factor_grads["G1"][0, 0, 0] == pytest.approx(g2 * s)
        assert bundle.factor_grads["G2"][0, 0, 0] == pytest.approx(g1 * s)

    @pytest.mark.parametrize("kind", ["ht", "tt"])
    def test_finite_differences(self, kind):
        spec = ConvKernelSpec(l=3, c=(2,), s=(2,), format_kind=kind, rank=2)
        rng = np.random.default_rng(23)
        params = init_conv_params(spec, rng)
        img = rng.standard_normal((2, 4, 4, 2))
        out = conv_forward(spec, params, img)
        upstream = rng.standard_normal(out.shape)
        bundle = conv_backward(spec, params, img, upstream)
        arrays = factor_arrays(params)

        def loss():
            return float(np.sum(upstream * conv_forward(spec, params, img)))

        fd = finite_diff_grads(loss, arrays, step=1e-5)
        for name in arrays:
            assert max_rel_err(bundle.factor_grads[name], fd[name]) <= 1e-4


class TestLSTMBackward:
    def _cell(self, rng):
        input_spec = TensorizedFCSpec(m=(2, 2), n=(2, 2), format_kind="ht",
                                      rank=2)
        recurrent_spec = TensorizedFCSpec(m=(2, 2), n=(2, 2), format_kind="ht",
                                          rank=2)
        gates = {
            name: LSTMGate(
                w=init_fc_params(input_spec, rng),
                r=init_fc_params(recurrent_spec, rng),
                b=0.1 * rng.standard_normal(4),
            )
            for name in LSTMCellParams.GATE_NAMES
        }
        return LSTMCellParams(input_spec, recurrent_spec, gates)

    def test_finite_differences(self):
        rng = np.random.default_rng(30)
        cell = self._cell(rng)
        x = rng.standard_normal((2, 4))
        a_prev = rng.standard_normal((2, 4))
        c_prev = rng.standard_normal((2, 4))
        dl_da = rng.standard_normal((2, 4))
        bundle = lstm_cell_backward(cell, x, a_prev, c_prev, dl_da)

        arrays = {}
        for name in LSTMCellParams.GATE_NAMES:
            gate = cell.gates[name]
            for prefix, fmt in ((f"W{name}", gate.w), (f"R{name}", gate.r)):
                for fid, arr in factor_arrays(fmt).items():
                    arrays[f"{prefix}.{fid}"] = arr
            arrays[f"b{name}"] = gate.b

        def loss():
            a_t, _ = lstm_cell_forward(cell, x, a_prev, c_prev)
            return float(np.sum(dl_da * a_t))

        fd = finite_diff_grads(loss, arrays, step=1e-5)
        for name in arrays:
            assert max_rel_err(bundle.factor_grads[name], fd[name]) <= 1e-4
