"""Curvelet QIM watermarking with a learned template for RST resynchronization.

Modules:
    layout      keyed template/watermark block matrix K
    curvelet    frequency-wrapping curvelet transform of one block
    qim         payload codec on scale-3 band means
    geometry    RST maps, attacks and the grid-point loss
    nets        template generator, extractor and siamese matcher
    training    generator pre-training and end-to-end training
    pipeline    embed/decode on images of any size
    evaluation  robustness tables and quality reports
"""

from .kernels import BACKEND
from .layout import BlockLayout, generate_layout, resize_layout
from .qim import Payload, QimConfig
from .geometry import AttackSpec, RstParams
from .pipeline import PipelineConfig, decode_image, embed_image

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BlockLayout", "generate_layout", "resize_layout", "Payload", "QimConfig",
    "AttackSpec", "RstParams", "PipelineConfig", "decode_image", "embed_image",
]
