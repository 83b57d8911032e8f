"""maskedit: single-pass multi-instruction image editing with attention control."""

from .attention import (
    AttentionControlConfig,
    BackgroundPolicy,
    CrossAttentionBias,
    SelfAttentionBias,
    biased_attention,
    boost_schedule,
    build_cross_bias,
    build_self_bias,
    install_hooks,
)
from .errors import BackendError, EncoderError, InvalidInputError, MaskEditError
from .masks import (
    CompositeLabelMap,
    LabelPyramid,
    MaskSpec,
    build_pyramid,
    composite,
    load_mask_png,
    region_rasters,
)
from .prompts import (
    SEQ_LEN,
    PackedConditioning,
    PromptEmbedding,
    Role,
    concat_prompts,
    encode_prompts,
    unconditional_packing,
)
from .sampling import (
    EditRequest,
    EditResult,
    NoiseSchedule,
    NoiseStream,
    SamplerConfig,
    blend,
    cfg_combine,
    forward_noise,
    run_edit,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionControlConfig",
    "BackendError",
    "BackgroundPolicy",
    "CompositeLabelMap",
    "CrossAttentionBias",
    "EditRequest",
    "EditResult",
    "EncoderError",
    "InvalidInputError",
    "LabelPyramid",
    "MaskEditError",
    "MaskSpec",
    "NoiseSchedule",
    "NoiseStream",
    "PackedConditioning",
    "PromptEmbedding",
    "Role",
    "SEQ_LEN",
    "SamplerConfig",
    "SelfAttentionBias",
    "biased_attention",
    "blend",
    "boost_schedule",
    "build_cross_bias",
    "build_pyramid",
    "build_self_bias",
    "cfg_combine",
    "composite",
    "concat_prompts",
    "encode_prompts",
    "forward_noise",
    "install_hooks",
    "load_mask_png",
    "region_rasters",
    "run_edit",
    "unconditional_packing",
]
