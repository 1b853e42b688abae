"""Finite-difference verification of the analytic backward passes."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .gradients import conv_backward, fc_backward, lstm_cell_backward
from .layers import (
    ConvKernelSpec,
    LSTMCellParams,
    LSTMGate,
    TensorizedFCSpec,
    conv_forward,
    factor_arrays,
    fc_forward,
    init_conv_params,
    init_fc_params,
    lstm_cell_forward,
)

__all__ = ["central_differences", "relative_errors", "run_gradcheck", "DEFAULT_LAYERS"]

DEFAULT_LAYERS = [
    {"kind": "fc", "format": "ht", "m": [2, 2, 2, 2], "n": [2, 2, 2, 2], "rank": 2},
    {"kind": "fc", "format": "tt", "m": [2, 2, 2, 2], "n": [2, 2, 2, 2], "rank": 2},
    {"kind": "conv", "format": "tt", "l": 3, "c": [2], "s": [2], "rank": 2},
]


def central_differences(loss_fn, arrays: dict[str, np.ndarray], step: float = 1e-5):
    """Per-entry central differences of a scalar loss; mutates in place
    and restores each entry."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def relative_errors(analytic: dict, numeric: dict) -> dict[str, float]:
    out = {}
    for name, a in analytic.items():
        b = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
        out[name] = float(np.max(np.abs(a - b) / denom))
    return out


def _check_fc(entry, rng, step):
    spec = TensorizedFCSpec(
        m=tuple(entry["m"]), n=tuple(entry["n"]),
        format_kind=entry["format"], rank=entry.get("rank", 2),
    )
    params = init_fc_params(spec, rng)
    mode = entry.get("mode", "chain")
    x = rng.standard_normal((2, spec.N))
    dl_dy = rng.standard_normal((2, spec.M))
    bundle = fc_backward(spec, params, x, dl_dy, mode=mode)

    def loss():
        return float(np.sum(dl_dy * fc_forward(spec, params, x, mode=mode)))

    numeric = central_differences(loss, factor_arrays(params), step)
    return bundle.factor_grads, numeric


def _check_conv(entry, rng, step):
    spec = ConvKernelSpec(
        l=entry["l"], c=tuple(entry["c"]), s=tuple(entry["s"]),
        format_kind=entry["format"], rank=entry.get("rank", 2),
    )
    params = init_conv_params(spec, rng)
    size = entry.get("image_size", 4)
    img = rng.standard_normal((2, size, size, spec.C))
    out = conv_forward(spec, params, img)
    upstream = rng.standard_normal(out.shape)
    bundle = conv_backward(spec, params, img, upstream)

    def loss():
        return float(np.sum(upstream * conv_forward(spec, params, img)))

    numeric = central_differences(loss, factor_arrays(params), step)
    return bundle.factor_grads, numeric


def _check_lstm(entry, rng, step):
    input_spec = TensorizedFCSpec(
        m=tuple(entry["m"]), n=tuple(entry["n"]),
        format_kind=entry["format"], rank=entry.get("rank", 2),
    )
    hidden = input_spec.M
    recurrent_spec = TensorizedFCSpec(
        m=tuple(entry["m"]), n=tuple(entry["m"]),
        format_kind=entry["format"], rank=entry.get("rank", 2),
    )
    gates = {
        name: LSTMGate(
            w=init_fc_params(input_spec, rng),
            r=init_fc_params(recurrent_spec, rng),
            b=0.1 * rng.standard_normal(hidden),
        )
        for name in LSTMCellParams.GATE_NAMES
    }
    cell = LSTMCellParams(input_spec, recurrent_spec, gates)
    x = rng.standard_normal((2, input_spec.N))
    a_prev = rng.standard_normal((2, hidden))
    c_prev = rng.standard_normal((2, hidden))
    dl_da = rng.standard_normal((2, hidden))
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

    numeric = central_differences(loss, arrays, step)
    analytic = {name: bundle.factor_grads[name] for name in arrays}
    return analytic, numeric


_CHECKERS = {"fc": _check_fc, "conv": _check_conv, "lstm": _check_lstm}


def run_gradcheck(
    layers: list[dict] | None = None,
    seed: int = 0,
    step: float = 1e-5,
    threshold: float = 1e-4,
    corrupt_factor: str | None = None,
) -> list[dict]:
    """Check every configured layer; one result row per factor.

    ``corrupt_factor`` perturbs the analytic gradient of the named factor
    before comparison (a negative control for the harness itself).
    """
    if layers is None:
        layers = DEFAULT_LAYERS
    if not layers:
        raise ConfigError("gradient check needs at least one layer")
    rows = []
    for i, entry in enumerate(layers):
        kind = entry.get("kind")
        if kind not in _CHECKERS:
            raise ConfigError(f"layer {i}: unknown kind {kind!r}")
        rng = np.random.default_rng(seed + i)
        analytic, numeric = _CHECKERS[kind](entry, rng, step)
        if corrupt_factor is not None and corrupt_factor in analytic:
            analytic = dict(analytic)
            analytic[corrupt_factor] = analytic[corrupt_factor] + 1.0
        errs = relative_errors(analytic, numeric)
        label = f"{kind}-{entry.get('format', '?')}-{i}"
        for factor, err in sorted(errs.items()):
            rows.append(
                {
                    "layer": label,
                    "factor": factor,
                    "max_rel_err": err,
                    "passed": err <= threshold,
                }
            )
    return rows
