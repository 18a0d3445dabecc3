"""Anchor-free spatio-temporal video grounding in numpy: Gaussian heatmap
targets, cross-modal fusion, mixed 2D/3D convolutions, sliding-window
tube heads, losses with hand-written gradients, and grounding metrics.
"""

__version__ = "0.1.0"

from .exceptions import DivergenceError, DomainError, GKCMNError, ShapeError
from .tensor import ConvKernel, conv2d_forward, conv3d_forward, conv_forward_naive, upsample_bilinear
from .fusion import FusionWeights, SentenceFeature, VisualFeatureMap, cross_modal_fuse
from .mixed_conv import MixedConvWeights, mixed_forward, mixed_network, parallel_forward, serial_forward
from .spatial import (
    BoundingBox,
    FocalConfig,
    GaussianTargets,
    SpatialPrediction,
    decode_boxes,
    encode_gaussian_targets,
    focal_loss,
    giou_loss,
)
from .temporal import (
    CandidateScheme,
    TemporalInterval,
    TubeCandidate,
    boundary_loss,
    confidence_loss,
    generate_candidates,
    label_candidates,
    select_tube,
    tiou,
)
from .metrics import GroundingResult, aggregate, viou, viou_at_r
from .optim import LossWeights, OptimizerConfig, grad_check, gradient_descent, total_loss
from .demos import fit_heatmap_demo, fit_sizes_demo, fit_temporal_demo
from .pipeline import GKCMNWeights, ModelConfig, forward, load_weights, save_weights
from .estimators import GKCMN, GaussianTargetEncoder
