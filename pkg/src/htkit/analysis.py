"""Complexity calculators, compression reporting, and the
gradient-transfer profiler.

The complexity numbers are closed-form evaluations of the standard
forward-cost and storage expressions for each decomposition family with
all constants set to 1; reports label them formula values, never
measurements. The profiler complements them with measured gradient norms
and update sizes from actual backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import log2, prod

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .gradients import fc_backward, gradient_shape
from .ht import HTFormat
from .layers import (
    ConvKernelSpec,
    TensorizedFCSpec,
    factor_arrays,
    init_fc_params,
)
from .models import CompressedConv, CompressedFC, DenseFC, Flatten, MaxPool2, Model, ReLU
from .tt import TTFormat

__all__ = [
    "ComplexityQuery",
    "complexity_estimate",
    "format_stats",
    "space_bound_check",
    "complexity_query_for",
    "TransferProbe",
    "TransferProfile",
    "gradient_transfer_profile",
    "hybrid_model_build",
]

METHODS = ("fc", "ht", "tt", "tr", "btd")


@dataclass(frozen=True)
class ComplexityQuery:
    """Symbol values for the closed-form cost table.

    ``m`` and ``n`` are the maximal output/input mode lengths, ``r`` the
    maximal rank, and ``C`` the CP-rank (required for btd only).
    """

    method: str
    M: int = 1
    N: int = 1
    d: int = 2
    m: int = 1
    n: int = 1
    r: int = 1
    C: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(
                f"unknown method {self.method!r}; choose one of {METHODS}"
            )
        for name in ("M", "N", "d", "m", "n", "r"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.method == "btd" and (self.C is None or self.C < 1):
            raise ConfigError("btd queries need a positive CP-rank C")


def complexity_estimate(q: ComplexityQuery) -> dict[str, int]:
    """Forward-compute and storage formula values for one method."""
    big = max(q.M, q.N)
    if q.method == "fc":
        compute = q.M * q.N
        space = q.M * q.N
    elif q.method == "ht":
        compute = (2 * q.d - 1) * q.n * big * q.r ** (1 + log2(q.d))
        space = q.d * q.m * q.n * q.r + (q.d - 1) * q.r**3
    elif q.method == "tt":
        compute = q.d * q.n * big * q.r**2
        space = (q.d - 2) * q.m * q.n * q.r**2 + 2 * q.m * q.n * q.r
    elif q.method == "tr":
        compute = q.d * (q.M + q.N) * q.r**3
        space = q.d * (q.m + q.n) * q.r**2
    else:  # btd
        compute = q.d * q.n * big * q.r**q.d * q.C
        space = (q.d * q.m * q.n * q.r + q.r**q.d) * q.C
    return {"compute": int(round(compute)), "space": int(round(space))}


def format_stats(fmt: HTFormat | TTFormat, original_dims) -> dict:
    """Exact stored-parameter count and the compression factor
    (uncompressed elements / stored parameters)."""
    original_dims = tuple(int(v) for v in original_dims)
    if prod(original_dims) != prod(fmt.dims):
        raise ShapeMismatchError(
            f"original dims {original_dims} hold {prod(original_dims)} "
            f"elements, format reconstructs {prod(fmt.dims)}"
        )
    count = fmt.param_count()
    return {
        "param_count": count,
        "compression_factor": prod(original_dims) / count,
    }


def complexity_query_for(fmt: HTFormat | TTFormat, M=None, N=None) -> ComplexityQuery:
    """Query derived from a format's maxima (mode lengths as m*n, max rank)."""
    dims = fmt.dims
    if isinstance(fmt, HTFormat):
        method = "ht"
        r = max(node.rank for node in fmt.tree.nodes())
    else:
        method = "tt"
        r = max(fmt.ranks)
    return ComplexityQuery(
        method=method,
        M=int(M) if M is not None else 1,
        N=int(N) if N is not None else prod(dims),
        d=len(dims),
        m=1,
        n=max(dims),
        r=max(r, 1),
    )


def space_bound_check(fmt: HTFormat | TTFormat, q: ComplexityQuery) -> dict:
    """Exact parameter count against the closed-form storage bound."""
    space = complexity_estimate(q)["space"]
    count = fmt.param_count()
    return {
        "param_count": count,
        "space_formula": space,
        "within_bound": count <= space,
    }


# ---------------------------------------------------------------------------
# Gradient-transfer profiler


@dataclass(frozen=True)
class TransferProbe:
    """Shared random forward/backward probe for profiling specs."""

    seed: int = 0
    batch: int = 4
    lr: float = 0.01


@dataclass
class TransferProfile:
    label: str
    method: str
    fused_dims: tuple[int, ...]
    records: list[dict] = field(default_factory=list)

    def total_gradient_elements(self) -> int:
        return sum(r["elements"] for r in self.records)


def gradient_transfer_profile(
    specs: list[TensorizedFCSpec],
    probe: TransferProbe = TransferProbe(),
    labels: list[str] | None = None,
) -> list[TransferProfile]:
    """One forward/backward per spec with a shared probe.

    Per factor: its shape and element count, the closed-form Jacobian
    factor shape for leaves/cores, the measured gradient Frobenius norm,
    and the mean absolute parameter update after one momentum-free
    gradient step at the probe's learning rate. All specs must act on the
    same weight-matrix size so the comparison is like for like.
    """
    if not specs:
        raise ConfigError("no specs to profile")
    sizes = {(s.M, s.N) for s in specs}
    if len({m * n for m, n in sizes}) != 1:
        raise ConfigError(
            f"specs must share the weight element count M*N, got {sorted(sizes)}"
        )
    if labels is None:
        labels = [
            f"{s.format_kind}-{'x'.join(map(str, s.fused_dims))}" for s in specs
        ]
    profiles = []
    for label, spec in zip(labels, specs):
        rng = np.random.default_rng(probe.seed)
        params = init_fc_params(spec, rng)
        x = rng.standard_normal((probe.batch, spec.N))
        dl_dy = rng.standard_normal((probe.batch, spec.M))
        bundle = fc_backward(spec, params, x, dl_dy, mode="chain")
        arrays = factor_arrays(params)
        profile = TransferProfile(label, spec.format_kind, spec.fused_dims)
        leaf_ids = {
            ("U" if spec.format_kind == "ht" else "G") + str(k + 1): k
            for k in range(spec.d)
        }
        for name in sorted(arrays):
            g = bundle.factor_grads[name]
            oracle = (
                gradient_shape(spec.format_kind, spec, leaf_ids[name])
                if name in leaf_ids
                else None
            )
            profile.records.append(
                {
                    "factor": name,
                    "rows": arrays[name].shape[0],
                    "cols": int(prod(arrays[name].shape[1:])),
                    "elements": int(arrays[name].size),
                    "oracle_rows": oracle[0] if oracle else "",
                    "oracle_cols": oracle[1] if oracle else "",
                    "grad_norm": float(np.linalg.norm(g)),
                    "mean_abs_update": float(probe.lr * np.mean(np.abs(g))),
                }
            )
        profiles.append(profile)
    return profiles


# ---------------------------------------------------------------------------
# Strategy builder


def _factorization_error(layer_name, what, total, factors):
    return ConfigError(
        f"layer {layer_name!r}: {what} factors {tuple(factors)} do not "
        f"multiply to {total}"
    )


def hybrid_model_build(config: dict) -> Model:
    """Build a sequential model under a compression strategy.

    ``config['strategy']`` selects the format pairing: ``hybrid`` stores
    convolution kernels as tensor trains and fully connected weights in
    the hierarchical format on balanced trees; ``ht`` and ``tt`` apply a
    single format everywhere. Layer entries carry their shape plans and
    ranks; factorizations that do not multiply out are rejected with the
    offending layer named.
    """
    strategy = config.get("strategy", "hybrid")
    if strategy not in ("hybrid", "ht", "tt"):
        raise ConfigError(f"unknown strategy {strategy!r}")
    conv_kind = "tt" if strategy in ("hybrid", "tt") else "ht"
    fc_kind = "ht" if strategy in ("hybrid", "ht") else "tt"

    layers = []
    for i, entry in enumerate(config["layers"]):
        kind = entry.get("type")
        name = entry.get("name", f"layer{i}")
        if kind == "conv":
            c, s = tuple(entry["c"]), tuple(entry["s"])
            if prod(c) != entry["in_channels"]:
                raise _factorization_error(name, "input channel", entry["in_channels"], c)
            if prod(s) != entry["out_channels"]:
                raise _factorization_error(name, "output channel", entry["out_channels"], s)
            spec = ConvKernelSpec(
                l=entry["l"], c=c, s=s,
                format_kind=entry.get("format", conv_kind),
                rank=entry.get("rank", 2),
            )
            layers.append(
                CompressedConv(
                    name, spec,
                    stride=entry.get("stride", 1),
                    padding=entry.get("padding", "same"),
                )
            )
        elif kind == "fc":
            m, n = tuple(entry["m"]), tuple(entry["n"])
            if prod(m) != entry["out"]:
                raise _factorization_error(name, "output", entry["out"], m)
            if prod(n) != entry["in"]:
                raise _factorization_error(name, "input", entry["in"], n)
            spec = TensorizedFCSpec(
                m=m, n=n, format_kind=entry.get("format", fc_kind),
                rank=entry.get("rank", 2),
            )
            layers.append(CompressedFC(name, spec, mode=entry.get("mode", "chain")))
        elif kind == "fc_dense":
            layers.append(DenseFC(name, entry["in"], entry["out"]))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "maxpool2":
            layers.append(MaxPool2())
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            raise ConfigError(f"layer {name!r}: unknown type {kind!r}")
    return Model(layers, config.get("input_shape", ()))
