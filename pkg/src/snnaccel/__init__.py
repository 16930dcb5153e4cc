"""Fixed-point residual SNN golden model and PE-array accelerator simulator."""

from .errors import (
    BadLabel,
    CapacityExceeded,
    CorruptFile,
    DegenerateRange,
    GeometryMismatch,
    IndivisibleGroups,
    InvalidConfig,
    ScaleMismatch,
    ShapeMismatch,
    SnnAccelError,
)
from .quant import (
    IntTensor,
    QuantParams,
    compute_scale,
    dequantize,
    fake_quantize,
    quantize,
)
from .model import (
    BnParams,
    ConvLayerSpec,
    FcSpec,
    LifParams,
    NetworkConfig,
    NetworkGraph,
    ResidualBlock,
    bn_forward,
    build_resnet10,
    conv_param_count,
    count_params,
    fuse_bn,
    lif_step,
    threshold_activate,
)
from .engine import (
    AccMap,
    InferenceResult,
    PooledSpikes,
    conv2d_grouped,
    fully_connected,
    global_avg_pool,
    infer,
    pad2d,
    residual_add,
)
from .prepare import (
    FloatNetwork,
    fuse_network,
    make_random_model,
    quantize_network,
    random_float_network,
)

__version__ = "0.1.0"
