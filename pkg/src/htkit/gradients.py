"""Analytic backward passes for the compressed layers.

Gradients come from reverse-mode traversal of the same contraction graph
the forward pass builds, so every stored factor (leaf matrices, transfer
tensors, train cores) receives an exact gradient without materializing
any Kronecker-structured Jacobian. :func:`gradient_shape` reports the
closed-form size of the weight-by-factor Jacobian factor used in the
gradient-transfer analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError
from .ht import HTFormat
from .layers import (
    HT,
    TT,
    ConvKernelSpec,
    LSTMCellParams,
    TensorizedFCSpec,
    check_params_match,
    conv_forward_var,
    factor_arrays,
    fc_forward_var,
    lstm_cell_forward_var,
)
from .tt import TTFormat

__all__ = [
    "GradientBundle",
    "fc_backward",
    "conv_backward",
    "lstm_cell_backward",
    "format_gradients",
    "gradient_shape",
]


@dataclass
class GradientBundle:
    """Per-factor gradients plus the input gradient of one backward pass."""

    factor_grads: dict[str, np.ndarray]
    dx: np.ndarray

    def validate_against(self, arrays: dict[str, np.ndarray]) -> None:
        for name, g in self.factor_grads.items():
            if g.shape != arrays[name].shape:
                raise ShapeMismatchError(
                    f"gradient for {name} has shape {g.shape}, factor has "
                    f"{arrays[name].shape}"
                )


def _collect(grads, factor_vars: dict[str, ad.Var]) -> dict[str, np.ndarray]:
    out = {}
    for name, var in factor_vars.items():
        g = grads.get(id(var))
        out[name] = g if g is not None else np.zeros(var.shape)
    return out


def fc_backward(
    spec: TensorizedFCSpec,
    params: HTFormat | TTFormat,
    x: np.ndarray,
    dl_dy: np.ndarray,
    mode: str = "chain",
) -> GradientBundle:
    """Gradients of every factor and of the input for y = W x."""
    check_params_match(spec, params)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dl_dy = np.atleast_2d(np.asarray(dl_dy, dtype=np.float64))
    if x.shape != (dl_dy.shape[0], spec.N) or dl_dy.shape[1] != spec.M:
        raise ShapeMismatchError(
            f"batch shapes {x.shape} / {dl_dy.shape} do not match spec "
            f"N={spec.N}, M={spec.M}"
        )
    factor_vars = {k: ad.constant(v) for k, v in factor_arrays(params).items()}
    x_var = ad.constant(x)
    y = fc_forward_var(spec, factor_vars, x_var, mode=mode)
    grads = ad.backward(y, seed=dl_dy)
    bundle = GradientBundle(_collect(grads, factor_vars), grads[id(x_var)])
    bundle.validate_against(factor_arrays(params))
    return bundle


def conv_backward(
    spec: ConvKernelSpec,
    params: HTFormat | TTFormat,
    images: np.ndarray,
    dl_dout: np.ndarray,
    stride: int = 1,
    padding="same",
) -> GradientBundle:
    """Gradients through the recovery-computation convolution."""
    check_params_match(spec, params)
    images = np.asarray(images, dtype=np.float64)
    dl_dout = np.asarray(dl_dout, dtype=np.float64)
    factor_vars = {k: ad.constant(v) for k, v in factor_arrays(params).items()}
    x_var = ad.constant(images)
    out = conv_forward_var(spec, factor_vars, x_var, stride, padding)
    if out.shape != dl_dout.shape:
        raise ShapeMismatchError(
            f"upstream gradient {dl_dout.shape} does not match conv output "
            f"{out.shape}"
        )
    grads = ad.backward(out, seed=dl_dout)
    bundle = GradientBundle(_collect(grads, factor_vars), grads[id(x_var)])
    bundle.validate_against(factor_arrays(params))
    return bundle


def lstm_cell_backward(
    cell: LSTMCellParams,
    x_t: np.ndarray,
    a_prev: np.ndarray,
    c_prev: np.ndarray,
    dl_da: np.ndarray,
    dl_dc: np.ndarray | None = None,
) -> GradientBundle:
    """Gradients of all gate factors and biases for one LSTM step.

    Factor names are prefixed by the gate parameter, e.g. ``Wu.U1`` or
    ``Rc.G2``; biases are ``bu`` .. ``bc``. ``dx`` is the gradient with
    respect to x_t.
    """
    cell.validate()
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    a_prev = np.atleast_2d(np.asarray(a_prev, dtype=np.float64))
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    dl_da = np.atleast_2d(np.asarray(dl_da, dtype=np.float64))

    factors: dict[str, dict[str, ad.Var]] = {}
    biases: dict[str, ad.Var] = {}
    flat: dict[str, ad.Var] = {}
    for name in LSTMCellParams.GATE_NAMES:
        gate = cell.gates[name]
        for prefix, fmt in ((f"W{name}", gate.w), (f"R{name}", gate.r)):
            factors[prefix] = {
                k: ad.constant(v) for k, v in factor_arrays(fmt).items()
            }
            for k, var in factors[prefix].items():
                flat[f"{prefix}.{k}"] = var
        biases[f"b{name}"] = ad.constant(gate.b)
        flat[f"b{name}"] = biases[f"b{name}"]

    x_var = ad.constant(x_t)
    a_var = ad.constant(a_prev)
    c_var = ad.constant(c_prev)
    a_t, c_t = lstm_cell_forward_var(cell, factors, biases, x_var, a_var, c_var)
    if dl_dc is None:
        grads = ad.backward(a_t, seed=dl_da)
    else:
        # two heads: backpropagate each seed separately and sum
        dl_dc = np.atleast_2d(np.asarray(dl_dc, dtype=np.float64))
        grads = ad.backward(a_t, seed=dl_da)
        for key, val in ad.backward(c_t, seed=dl_dc).items():
            grads[key] = grads.get(key, 0) + val
    return GradientBundle(
        _collect(grads, flat), grads.get(id(x_var), np.zeros_like(x_t))
    )


def format_gradients(
    params: HTFormat | TTFormat, dl_dt: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of the reconstructed tensor with respect to each factor.

    ``dl_dt`` has the format's native (fused) dims. Reverse mode runs over
    the same merge/chain graph reconstruction uses.
    """
    from .layers import _ht_dense_var, _tt_dense_var

    dl_dt = np.asarray(dl_dt, dtype=np.float64)
    factor_vars = {k: ad.constant(v) for k, v in factor_arrays(params).items()}
    if isinstance(params, HTFormat):
        t = ad.reshape(_ht_dense_var(params.tree, factor_vars, None), params.dims)
    else:
        cores = [factor_vars[f"G{k + 1}"] for k in range(params.order)]
        t = ad.reshape(_tt_dense_var(cores, None), params.dims)
    if t.shape != dl_dt.shape:
        raise ShapeMismatchError(
            f"upstream {dl_dt.shape} does not match reconstructed tensor "
            f"{t.shape}"
        )
    grads = ad.backward(t, seed=dl_dt)
    return _collect(grads, factor_vars)


def gradient_shape(method: str, spec: TensorizedFCSpec, k: int) -> tuple[int, int]:
    """Closed-form size of the weight-by-factor Jacobian factor.

    For fused fully connected modes the formula's mode lengths are the
    fused lengths m_k n_k. HT leaves: (r_k, product of the other modes).
    TT cores: boundary cores couple to the full mode product, interior
    cores to the product of the other modes.
    """
    dims = spec.fused_dims
    d = len(dims)
    if not 0 <= k < d:
        raise IndexError(f"factor index {k} out of range for {d} modes")
    total = prod(dims)
    others = total // dims[k]
    if method == HT:
        tree = spec.tree()
        leaf = tree.node((k,))
        return (leaf.rank, others)
    if method == TT:
        ranks = spec.tt_ranks()
        if k == 0:
            return (dims[0] * ranks[1], total)
        if k == d - 1:
            return (dims[d - 1] * ranks[d - 1], total)
        return (ranks[k] * ranks[k + 1], others)
    raise ValueError(f"unknown method {method!r}")
