"""Tensorized neural-network layers.

Weight matrices are regrouped into tensors whose mode k fuses the output
factor m_k with the input factor n_k (output-major within each fused
mode), then stored in the hierarchical Tucker or tensor-train format.
Fully connected layers support two forward paths:

* ``chain``: the tensorized input is contracted through the factors one
  by one (inorder over the dimension tree for HT, left to right for TT)
  and the dense weight never exists in memory;
* ``recovery``: the dense weight is rebuilt from its factors and applied
  as an ordinary matrix product.

Convolution supports only the recovery path; the sliding window does not
commute with the factor chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import log2, prod

import numpy as np

from . import autodiff as ad
from .autodiff import MultiplyCounter, Var
from .errors import ShapeMismatchError
from .ht import HTFormat, random_ht_format
from .tree import BALANCED, DimensionTree, build_tree
from .tt import TTFormat, clipped_tt_ranks, random_tt_format

__all__ = [
    "TensorizedFCSpec",
    "ConvKernelSpec",
    "LSTMGate",
    "LSTMCellParams",
    "tensorize_vector",
    "fuse_matrix",
    "defuse_matrix",
    "fuse_kernel",
    "defuse_kernel",
    "factor_arrays",
    "replace_factors",
    "init_fc_params",
    "init_conv_params",
    "fc_forward",
    "fc_forward_var",
    "fc_cost_estimate",
    "conv_forward",
    "conv_forward_var",
    "lstm_cell_forward",
    "lstm_cell_forward_var",
]

HT = "ht"
TT = "tt"


# ---------------------------------------------------------------------------
# Specs


@dataclass(frozen=True)
class TensorizedFCSpec:
    """Shape plan for a compressed fully connected layer (out = M, in = N)."""

    m: tuple[int, ...]
    n: tuple[int, ...]
    format_kind: str = HT
    rank: int = 2
    tree_kind: str = BALANCED

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        if len(self.m) != len(self.n) or len(self.m) < 2:
            raise ShapeMismatchError(
                f"need matching output/input factorizations of length >= 2, "
                f"got m={self.m}, n={self.n}"
            )
        if self.format_kind not in (HT, TT):
            raise ValueError(f"unknown format kind {self.format_kind!r}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")

    @property
    def d(self) -> int:
        return len(self.m)

    @property
    def M(self) -> int:
        return prod(self.m)

    @property
    def N(self) -> int:
        return prod(self.n)

    @property
    def fused_dims(self) -> tuple[int, ...]:
        return tuple(mk * nk for mk, nk in zip(self.m, self.n))

    def tree(self) -> DimensionTree:
        tree = build_tree(self.d, self.tree_kind)
        tree.assign_uniform_ranks(self.fused_dims, self.rank)
        return tree

    def tt_ranks(self) -> tuple[int, ...]:
        return clipped_tt_ranks(self.fused_dims, self.rank)


@dataclass(frozen=True)
class ConvKernelSpec:
    """Shape plan for a compressed convolution kernel (C in, S out).

    The kernel tensor has a leading filter-volume mode followed by fused
    channel modes c_k s_k (input-major). ``filter_shape`` defaults to a
    square 2-D window of side ``l``; higher-order windows reuse the same
    tensorization with the volume in the leading mode.
    """

    l: int
    c: tuple[int, ...]
    s: tuple[int, ...]
    format_kind: str = TT
    rank: int = 2
    tree_kind: str = BALANCED
    filter_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(int(v) for v in self.c))
        object.__setattr__(self, "s", tuple(int(v) for v in self.s))
        if self.filter_shape is None:
            object.__setattr__(self, "filter_shape", (int(self.l), int(self.l)))
        else:
            object.__setattr__(
                self, "filter_shape", tuple(int(v) for v in self.filter_shape)
            )
        if len(self.c) != len(self.s) or not self.c:
            raise ShapeMismatchError(
                f"need matching channel factorizations, got c={self.c}, s={self.s}"
            )
        if self.format_kind not in (HT, TT):
            raise ValueError(f"unknown format kind {self.format_kind!r}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")

    @property
    def C(self) -> int:
        return prod(self.c)

    @property
    def S(self) -> int:
        return prod(self.s)

    @property
    def filter_volume(self) -> int:
        return prod(self.filter_shape)

    @property
    def d(self) -> int:
        return 1 + len(self.c)

    @property
    def kernel_dims(self) -> tuple[int, ...]:
        return (self.filter_volume,) + tuple(
            ck * sk for ck, sk in zip(self.c, self.s)
        )

    def tree(self) -> DimensionTree:
        tree = build_tree(self.d, self.tree_kind)
        tree.assign_uniform_ranks(self.kernel_dims, self.rank)
        return tree

    def tt_ranks(self) -> tuple[int, ...]:
        return clipped_tt_ranks(self.kernel_dims, self.rank)


@dataclass
class LSTMGate:
    w: HTFormat | TTFormat
    r: HTFormat | TTFormat
    b: np.ndarray


@dataclass
class LSTMCellParams:
    """Compressed LSTM cell: per gate an input weight, a recurrent weight
    and a dense bias. All four input weights share one spec, as do the
    recurrent weights."""

    input_spec: TensorizedFCSpec
    recurrent_spec: TensorizedFCSpec
    gates: dict[str, LSTMGate] = field(default_factory=dict)

    GATE_NAMES = ("u", "f", "o", "c")

    def validate(self) -> None:
        if self.input_spec.M != self.recurrent_spec.M:
            raise ShapeMismatchError(
                "input and recurrent weights must produce the same hidden size"
            )
        if self.recurrent_spec.N != self.recurrent_spec.M:
            raise ShapeMismatchError("recurrent weight must be square")
        for name in self.GATE_NAMES:
            if name not in self.gates:
                raise ShapeMismatchError(f"missing gate {name!r}")
            if self.gates[name].b.shape != (self.input_spec.M,):
                raise ShapeMismatchError(f"gate {name!r} bias has wrong length")


# ---------------------------------------------------------------------------
# Tensorization


def tensorize_vector(x: np.ndarray, n) -> np.ndarray:
    """Regroup a length-N vector as an order-d tensor; order preserving."""
    n = tuple(int(v) for v in n)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != prod(n):
        raise ShapeMismatchError(
            f"cannot tensorize length-{x.size} vector into modes {n}"
        )
    return x.reshape(n)


def _interleave_perm(d: int) -> list[int]:
    perm = []
    for k in range(d):
        perm += [k, d + k]
    return perm


def fuse_matrix(w: np.ndarray, m, n) -> np.ndarray:
    """(M, N) matrix -> tensor with fused modes (m_k n_k), output-major."""
    m, n = tuple(m), tuple(n)
    d = len(m)
    if w.shape != (prod(m), prod(n)):
        raise ShapeMismatchError(
            f"matrix {w.shape} does not factor as {m} x {n}"
        )
    t = w.reshape(*m, *n)
    t = np.transpose(t, _interleave_perm(d))
    return t.reshape([mk * nk for mk, nk in zip(m, n)])


def defuse_matrix(t: np.ndarray, m, n) -> np.ndarray:
    m, n = tuple(m), tuple(n)
    d = len(m)
    pairs = []
    for k in range(d):
        pairs += [m[k], n[k]]
    t = t.reshape(pairs)
    t = np.transpose(t, list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2)))
    return t.reshape(prod(m), prod(n))


def fuse_kernel(k: np.ndarray, c, s) -> np.ndarray:
    """(*filter, C, S) kernel -> (filter volume, c_1 s_1, ...), input-major."""
    c, s = tuple(c), tuple(s)
    dcs = len(c)
    vol = prod(k.shape[:-2])
    if k.shape[-2:] != (prod(c), prod(s)):
        raise ShapeMismatchError(
            f"kernel {k.shape} does not factor channels as {c} x {s}"
        )
    t = k.reshape(vol, *c, *s)
    perm = [0]
    for i in range(dcs):
        perm += [1 + i, 1 + dcs + i]
    t = np.transpose(t, perm)
    return t.reshape([vol] + [ck * sk for ck, sk in zip(c, s)])


def defuse_kernel(t: np.ndarray, filter_shape, c, s) -> np.ndarray:
    c, s = tuple(c), tuple(s)
    dcs = len(c)
    pairs = [prod(filter_shape)]
    for i in range(dcs):
        pairs += [c[i], s[i]]
    t = t.reshape(pairs)
    perm = [0] + list(range(1, 2 * dcs + 1, 2)) + list(range(2, 2 * dcs + 1, 2))
    t = np.transpose(t, perm)
    return t.reshape(*filter_shape, prod(c), prod(s))


# ---------------------------------------------------------------------------
# Factor naming and parameter construction


def transfer_id(indices) -> str:
    return "B_" + "_".join(str(i + 1) for i in indices)


def factor_arrays(params: HTFormat | TTFormat) -> dict[str, np.ndarray]:
    """Name each stored factor: leaves U1..Ud and transfers B_i_j for HT,
    cores G1..Gd for TT."""
    if isinstance(params, HTFormat):
        out = {f"U{k + 1}": u for k, u in sorted(params.leaf_factors.items())}
        for idx, b in params.transfer_tensors.items():
            out[transfer_id(idx)] = b
        return out
    return {f"G{k + 1}": core for k, core in enumerate(params.cores)}


def replace_factors(
    params: HTFormat | TTFormat, arrays: dict[str, np.ndarray]
) -> HTFormat | TTFormat:
    if isinstance(params, HTFormat):
        leaves = {
            k: np.asarray(arrays[f"U{k + 1}"]) for k in params.leaf_factors
        }
        transfers = {
            idx: np.asarray(arrays[transfer_id(idx)])
            for idx in params.transfer_tensors
        }
        return HTFormat(params.tree, leaves, transfers)
    cores = [np.asarray(arrays[f"G{k + 1}"]) for k in range(params.order)]
    return TTFormat(cores)


def format_from_arrays(spec, arrays: dict[str, np.ndarray]) -> HTFormat | TTFormat:
    """Assemble a format object for ``spec`` from named factor arrays."""
    if spec.format_kind == HT:
        tree = spec.tree()
        leaves = {
            n.indices[0]: np.asarray(arrays[f"U{n.indices[0] + 1}"])
            for n in tree.leaves()
        }
        transfers = {
            n.indices: np.asarray(arrays[transfer_id(n.indices)])
            for n in tree.internal_nodes()
        }
        return HTFormat(tree, leaves, transfers)
    cores = [np.asarray(arrays[f"G{k + 1}"]) for k in range(spec.d)]
    return TTFormat(cores)


def _chain_length(spec) -> int:
    d = spec.d
    return 2 * d - 1 if spec.format_kind == HT else d


def _contraction_paths(spec) -> int:
    """Number of rank paths summed when the dense weight is recovered.

    Each recovered entry is a sum over this many factor-entry products,
    so its variance is paths * std**(2 * chain length).
    """
    if spec.format_kind == HT:
        tree = spec.tree()
        paths = 1
        for node in tree.nodes():
            if node is not tree.root:
                paths *= node.rank
        return paths
    ranks = spec.tt_ranks()
    paths = 1
    for r in ranks[1:-1]:
        paths *= r
    return paths


def _init_std(spec, fan_in: int) -> float:
    # per-factor std chosen so the recovered weight's entry variance is
    # ~1/fan_in, matching a dense layer's init scale at every rank
    chain = _chain_length(spec)
    return float((fan_in * _contraction_paths(spec)) ** (-0.5 / chain))


def init_fc_params(
    spec: TensorizedFCSpec, rng: np.random.Generator, std: float | None = None
) -> HTFormat | TTFormat:
    """Random factors scaled so the recovered weight sits at dense-init
    scale (entry std about 1/sqrt(N))."""
    if std is None:
        std = _init_std(spec, spec.N)
    if spec.format_kind == HT:
        return random_ht_format(
            spec.fused_dims, spec.rank, rng=rng, std=std, tree=spec.tree()
        )
    return random_tt_format(
        spec.fused_dims, spec.rank, rng=rng, std=std, ranks=spec.tt_ranks()
    )


def init_conv_params(
    spec: ConvKernelSpec, rng: np.random.Generator, std: float | None = None
) -> HTFormat | TTFormat:
    if std is None:
        std = _init_std(spec, spec.filter_volume * spec.C)
    if spec.format_kind == HT:
        return random_ht_format(
            spec.kernel_dims, spec.rank, rng=rng, std=std, tree=spec.tree()
        )
    return random_tt_format(
        spec.kernel_dims, spec.rank, rng=rng, std=std, ranks=spec.tt_ranks()
    )


def check_params_match(spec, params) -> None:
    expected_kind = HTFormat if spec.format_kind == HT else TTFormat
    if not isinstance(params, expected_kind):
        raise ShapeMismatchError(
            f"spec expects {spec.format_kind} parameters, got {type(params).__name__}"
        )
    dims = spec.fused_dims if isinstance(spec, TensorizedFCSpec) else spec.kernel_dims
    if tuple(params.dims) != tuple(dims):
        raise ShapeMismatchError(
            f"parameter dims {params.dims} do not match spec modes {dims}"
        )


# ---------------------------------------------------------------------------
# Chain computation

_BATCH = ("batch", -1)


def _pop_tags(tags, positions, new):
    kept = [t for i, t in enumerate(tags) if i not in positions]
    return kept + list(new)


def _ht_chain(
    tree: DimensionTree,
    factors: dict[str, Var],
    state: Var,
    tags: list,
    m,
    n,
    counter,
):
    def visit(node, state, tags, pending):
        if node.is_leaf:
            k = node.indices[0]
            u = factors[f"U{k + 1}"]
            u3 = ad.reshape(u, (m[k], n[k], u.shape[1]))
            jpos = tags.index(("n", k))
            if pending is None:
                state = ad.tensordot(state, u3, ([jpos], [1]), counter)
                tags = _pop_tags(tags, {jpos}, [("m", k), ("r", node.indices)])
            else:
                ppos = tags.index(pending)
                state = ad.tensordot(state, u3, ([jpos, ppos], [1, 2]), counter)
                tags = _pop_tags(tags, {jpos, ppos}, [("m", k)])
            return state, tags
        state, tags = visit(node.left, state, tags, None)
        b = factors[transfer_id(node.indices)]
        lpos = tags.index(("r", node.left.indices))
        rv = ("rv", node.indices)
        if pending is None:
            state = ad.tensordot(state, b, ([lpos], [0]), counter)
            tags = _pop_tags(tags, {lpos}, [rv, ("r", node.indices)])
        else:
            ppos = tags.index(pending)
            state = ad.tensordot(state, b, ([lpos, ppos], [0, 2]), counter)
            tags = _pop_tags(tags, {lpos, ppos}, [rv])
        return visit(node.right, state, tags, rv)

    return visit(tree.root, state, tags, None)


def _tt_chain(
    cores: list[Var], state: Var, tags: list, m, n, counter
):
    d = len(cores)
    for k in range(d):
        core = cores[k]
        r_prev, _, r_next = core.shape[0], core.shape[1], core.shape[2]
        jpos = tags.index(("n", k))
        if k == 0:
            core3 = ad.reshape(core, (m[0], n[0], r_next))
            state = ad.tensordot(state, core3, ([jpos], [1]), counter)
            tags = _pop_tags(tags, {jpos}, [("m", 0), ("r", 0)])
        else:
            core4 = ad.reshape(core, (r_prev, m[k], n[k], r_next))
            rpos = tags.index(("r", k - 1))
            state = ad.tensordot(state, core4, ([jpos, rpos], [2, 0]), counter)
            tags = _pop_tags(tags, {jpos, rpos}, [("m", k), ("r", k)])
    return state, tags


def _finalize_chain(state: Var, tags: list, d: int, batch: int, M: int) -> Var:
    order = [tags.index(_BATCH)] + [tags.index(("m", k)) for k in range(d)]
    # one trailing rank axis of size 1 survives; put it last and fold it away
    rank_pos = [i for i in range(len(tags)) if i not in order]
    state = ad.transpose(state, order + rank_pos)
    return ad.reshape(state, (batch, M))


# ---------------------------------------------------------------------------
# Recovery computation


def _ht_dense_var(tree, factors: dict[str, Var], counter) -> Var:
    def node_matrix(node) -> Var:
        if node.is_leaf:
            return factors[f"U{node.indices[0] + 1}"]
        left = node_matrix(node.left)
        right = node_matrix(node.right)
        b = factors[transfer_id(node.indices)]
        t1 = ad.tensordot(left, b, ([1], [0]), counter)  # (p, rv, q)
        t2 = ad.tensordot(t1, right, ([1], [1]), counter)  # (p, q, s)
        t2 = ad.transpose(t2, (0, 2, 1))
        return ad.reshape(t2, (left.shape[0] * right.shape[0], b.shape[2]))

    return node_matrix(tree.root)


def _tt_dense_var(cores: list[Var], counter) -> Var:
    out = cores[0]
    for core in cores[1:]:
        out = ad.tensordot(out, core, ([out.ndim - 1], [0]), counter)
    return out


def recovered_weight_var(spec, factors: dict[str, Var], counter=None) -> Var:
    """Dense weight/kernel tensor rebuilt on the tape from its factors."""
    if isinstance(spec, TensorizedFCSpec):
        dims, d = spec.fused_dims, spec.d
    else:
        dims, d = spec.kernel_dims, spec.d
    if spec.format_kind == HT:
        mat = _ht_dense_var(spec.tree(), factors, counter)
        fused = ad.reshape(mat, dims)
    else:
        cores = [factors[f"G{k + 1}"] for k in range(d)]
        fused = ad.reshape(_tt_dense_var(cores, counter), dims)
    if isinstance(spec, TensorizedFCSpec):
        pairs = []
        for k in range(d):
            pairs += [spec.m[k], spec.n[k]]
        t = ad.reshape(fused, pairs)
        t = ad.transpose(
            t, list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
        )
        return ad.reshape(t, (spec.M, spec.N))
    dcs = len(spec.c)
    pairs = [spec.filter_volume]
    for i in range(dcs):
        pairs += [spec.c[i], spec.s[i]]
    t = ad.reshape(fused, pairs)
    perm = [0] + list(range(1, 2 * dcs + 1, 2)) + list(range(2, 2 * dcs + 1, 2))
    t = ad.transpose(t, perm)
    return ad.reshape(t, spec.filter_shape + (spec.C, spec.S))


# ---------------------------------------------------------------------------
# Forward passes


def fc_forward_var(
    spec: TensorizedFCSpec,
    factors: dict[str, Var],
    x: Var,
    mode: str = "chain",
    counter: MultiplyCounter | None = None,
) -> Var:
    batch = x.shape[0]
    if x.shape[1] != spec.N:
        raise ShapeMismatchError(
            f"input length {x.shape[1]} does not match spec N={spec.N}"
        )
    if mode == "recovery":
        w = recovered_weight_var(spec, factors, counter)
        if counter is not None:
            counter.add_contraction(batch * spec.M, spec.N)
        return ad.tensordot(x, w, ([1], [1]))
    if mode != "chain":
        raise ValueError(f"unknown forward mode {mode!r}")
    state = ad.reshape(x, (batch,) + spec.n)
    tags = [_BATCH] + [("n", k) for k in range(spec.d)]
    if spec.format_kind == HT:
        state, tags = _ht_chain(
            spec.tree(), factors, state, tags, spec.m, spec.n, counter
        )
    else:
        cores = [factors[f"G{k + 1}"] for k in range(spec.d)]
        state, tags = _tt_chain(cores, state, tags, spec.m, spec.n, counter)
    return _finalize_chain(state, tags, spec.d, batch, spec.M)


def _as_batch(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def fc_forward(
    spec: TensorizedFCSpec,
    params: HTFormat | TTFormat,
    x: np.ndarray,
    mode: str = "chain",
    counter: MultiplyCounter | None = None,
) -> np.ndarray:
    """Apply the compressed layer: y = W x per sample."""
    check_params_match(spec, params)
    xb, squeeze = _as_batch(x)
    factors = {k: ad.constant(v) for k, v in factor_arrays(params).items()}
    y = fc_forward_var(spec, factors, ad.constant(xb), mode, counter)
    return y.value[0] if squeeze else y.value


def fc_cost_estimate(spec: TensorizedFCSpec, mode: str = "chain") -> dict:
    """Closed-form multiply estimate plus an instrumented count.

    The chain estimate is (2d-1) n max(M, N) r^(1+log2 d) and the
    recovery estimate is (log2 d - 1) M N (r^3 + r^2), with n the largest
    input factor and r the largest resolved rank. The measured count
    comes from one instrumented single-sample forward pass.
    """
    d = spec.d
    n = max(spec.n)
    if spec.format_kind == HT:
        tree = spec.tree()
        r = max(node.rank for node in tree.nodes())
    else:
        r = max(spec.tt_ranks())
    big = max(spec.M, spec.N)
    if mode == "chain":
        formula = (2 * d - 1) * n * big * r ** (1.0 + log2(d))
    elif mode == "recovery":
        formula = (log2(d) - 1.0) * spec.M * spec.N * (r**3 + r**2)
    else:
        raise ValueError(f"unknown forward mode {mode!r}")
    counter = MultiplyCounter()
    params = init_fc_params(spec, np.random.default_rng(0))
    fc_forward(spec, params, np.zeros(spec.N), mode=mode, counter=counter)
    return {
        "formula_flops": int(round(formula)),
        "measured_multiplies": counter.multiplies,
    }


def _resolve_padding(padding, filter_shape):
    if padding == "valid":
        return (0, 0)
    if padding == "same":
        if any(f % 2 == 0 for f in filter_shape):
            raise ValueError("'same' padding needs odd filter sizes")
        return tuple((f - 1) // 2 for f in filter_shape)
    p = int(padding)
    if p < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    return (p, p)


def conv_forward_var(
    spec: ConvKernelSpec,
    factors: dict[str, Var],
    images: Var,
    stride: int = 1,
    padding="same",
    counter: MultiplyCounter | None = None,
) -> Var:
    if len(spec.filter_shape) != 2:
        raise ShapeMismatchError(
            "2-D convolution needs a 2-D filter window, got "
            f"{spec.filter_shape}"
        )
    b, h, w, c_in = images.shape
    if c_in != spec.C:
        raise ShapeMismatchError(
            f"images have {c_in} channels, spec expects {spec.C}"
        )
    lh, lw = spec.filter_shape
    ph, pw = _resolve_padding(padding, spec.filter_shape)
    kernel = recovered_weight_var(spec, factors, counter)
    padded = ad.zero_pad2d(images, ph, pw)
    out_h = (h + 2 * ph - lh) // stride + 1
    out_w = (w + 2 * pw - lw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(
            f"filter {spec.filter_shape} does not fit {h}x{w} input "
            f"with stride {stride} and padding {(ph, pw)}"
        )
    out = None
    for u in range(lh):
        for v in range(lw):
            window = ad.getitem(
                padded,
                (
                    slice(None),
                    slice(u, u + stride * (out_h - 1) + 1, stride),
                    slice(v, v + stride * (out_w - 1) + 1, stride),
                    slice(None),
                ),
            )
            tap = ad.getitem(kernel, (u, v))
            term = ad.tensordot(window, tap, ([3], [0]), counter)
            out = term if out is None else ad.add(out, term)
    return out


def conv_forward(
    spec: ConvKernelSpec,
    params: HTFormat | TTFormat,
    images: np.ndarray,
    stride: int = 1,
    padding="same",
    mode: str = "recovery",
    counter: MultiplyCounter | None = None,
) -> np.ndarray:
    """2-D cross-correlation with the kernel recovered from its factors."""
    if mode == "chain":
        raise ValueError(
            "chain computation is unavailable for convolution: the sliding "
            "window does not distribute over the factor contractions; "
            "use recovery mode"
        )
    if mode != "recovery":
        raise ValueError(f"unknown forward mode {mode!r}")
    check_params_match(spec, params)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeMismatchError(
            f"expected images of shape (batch, H, W, C), got {images.shape}"
        )
    factors = {k: ad.constant(v) for k, v in factor_arrays(params).items()}
    out = conv_forward_var(
        spec, factors, ad.constant(images), stride, padding, counter
    )
    return out.value


def lstm_cell_forward_var(
    cell: LSTMCellParams,
    factors: dict[str, dict[str, Var]],
    biases: dict[str, Var],
    x_t: Var,
    a_prev: Var,
    c_prev: Var,
) -> tuple[Var, Var]:
    def gate_pre(name: str) -> Var:
        wx = fc_forward_var(cell.input_spec, factors[f"W{name}"], x_t)
        ra = fc_forward_var(cell.recurrent_spec, factors[f"R{name}"], a_prev)
        return ad.add(ad.add(wx, ra), biases[f"b{name}"])

    gamma_u = ad.sigmoid(gate_pre("u"))
    gamma_f = ad.sigmoid(gate_pre("f"))
    gamma_o = ad.sigmoid(gate_pre("o"))
    c_tilde = ad.tanh(gate_pre("c"))
    c_t = ad.add(ad.mul(gamma_u, c_tilde), ad.mul(gamma_f, c_prev))
    a_t = ad.mul(gamma_o, ad.tanh(c_t))
    return a_t, c_t


def lstm_factor_vars(cell: LSTMCellParams):
    factors: dict[str, dict[str, Var]] = {}
    biases: dict[str, Var] = {}
    for name in LSTMCellParams.GATE_NAMES:
        gate = cell.gates[name]
        factors[f"W{name}"] = {
            k: ad.constant(v) for k, v in factor_arrays(gate.w).items()
        }
        factors[f"R{name}"] = {
            k: ad.constant(v) for k, v in factor_arrays(gate.r).items()
        }
        biases[f"b{name}"] = ad.constant(gate.b)
    return factors, biases


def lstm_cell_forward(
    cell: LSTMCellParams,
    x_t: np.ndarray,
    a_prev: np.ndarray,
    c_prev: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step with compressed input/recurrent weights.

    Gate order: update, forget, output, candidate; chain-mode forwards
    throughout; elementwise products combine the gates.
    """
    cell.validate()
    xb, squeeze = _as_batch(x_t)
    ab, _ = _as_batch(a_prev)
    cb, _ = _as_batch(c_prev)
    if ab.shape[1] != cell.recurrent_spec.N or cb.shape[1] != cell.input_spec.M:
        raise ShapeMismatchError(
            f"state shapes {ab.shape}, {cb.shape} do not match hidden size "
            f"{cell.input_spec.M}"
        )
    factors, biases = lstm_factor_vars(cell)
    a_t, c_t = lstm_cell_forward_var(
        cell, factors, biases,
        ad.constant(xb), ad.constant(ab), ad.constant(cb),
    )
    if squeeze:
        return a_t.value[0], c_t.value[0]
    return a_t.value, c_t.value
