from .autograd import (
    NumericsError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    affine,
    apply_rotary,
    attention,
    bce_with_logits,
    check_finite,
    concat,
    cross_entropy,
    embedding,
    gelu,
    grid_sample,
    layer_norm,
    log_softmax,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    tanh,
    texp,
    tlog,
    tmean,
    transpose,
    tsum,
    upsample_nearest2x,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_params
from .nn import (
    LayerNorm,
    Linear,
    Mlp,
    MultiHeadAttention,
    ParameterStore,
    TransformerBlock,
    merge_heads,
    split_heads,
)
from .optim import AdamW, cosine_lr
