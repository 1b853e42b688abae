"""Hierarchical Tucker and tensor-train compressed neural-network layers.

The package provides dense tensor primitives, the two storage formats
with decomposition and reconstruction, compressed fully connected /
convolutional / LSTM layers with exact analytic gradients, a small
training loop, and complexity/gradient-transfer analysis tools. The
``htkit`` command wires them into file-based experiments.
"""

from .dense import (
    ModeSplit,
    as_tensor,
    contract,
    dematricize,
    kron,
    matricize,
    mode1_contract,
    permute,
    reshape,
)
from .errors import (
    ConfigError,
    ContainerFormatError,
    NumericalError,
    ShapeMismatchError,
)
from .ht import HTFormat, ht_decompose, ht_node_merge, ht_reconstruct, random_ht_format
from .tree import DimensionTree, TreeNode, build_tree
from .tt import (
    TTFormat,
    random_tt_format,
    tt_decompose,
    tt_from_degenerate_ht,
    tt_reconstruct,
)
from .layers import (
    ConvKernelSpec,
    LSTMCellParams,
    LSTMGate,
    TensorizedFCSpec,
    conv_forward,
    fc_cost_estimate,
    fc_forward,
    lstm_cell_forward,
    tensorize_vector,
)
from .gradients import (
    GradientBundle,
    conv_backward,
    fc_backward,
    format_gradients,
    gradient_shape,
    lstm_cell_backward,
)
from .training import TrainSchedule, lr_at_epoch, sgd_momentum_step, train
from .analysis import (
    ComplexityQuery,
    complexity_estimate,
    format_stats,
    gradient_transfer_profile,
    hybrid_model_build,
    space_bound_check,
)
from .htz import load_format, save_format
from .tensor_io import read_htk, write_htk

__version__ = "0.1.0"
