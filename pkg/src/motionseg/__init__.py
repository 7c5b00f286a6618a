"""Motion-supervised co-part segmentation at desk scale.

A segmentation network predicts soft part masks, anchor keypoints and
per-part affine matrices from single frames; a flow model composes them into
a dense backward flow and background visibility mask; a warping generator
reconstructs the target frame from the source.  Training is self-supervised
on frame pairs from the built-in synthetic articulated-shape video generator,
which carries exact ground truth for evaluation.
"""

from .tensor import NumericError, ShapeError, Tensor, no_grad
from . import ops
from .nn import BatchNorm2d, Conv2d, Module, Parameter
from .segnet import SegmentationNet, SegmentationOutput, affine_head
from .flow import (
    SegmentMotion,
    compose_flow,
    identity_grid,
    part_flow,
    part_flows,
    resize_flow_and_mask,
    upsample_flow_and_mask,
    visibility_mask,
)
from .reconnet import VARIANTS, ReconResult, ReconstructionNet
from .losses import (
    FeatureExtractor,
    GeometricTransform,
    TransformRanges,
    equivariance_loss,
    reconstruction_loss,
    sample_transform,
    total_loss,
    warp_frame,
)
from .synth import (
    SceneSpec,
    SyntheticDataset,
    SyntheticSample,
    generate_dataset,
    make_sample,
    render_video,
    sample_pair,
    sample_scene_spec,
)
from .train import Adam, TrainConfig, load_checkpoint, save_checkpoint, train
from .evaluate import MetricsReport, evaluate_epe, evaluate_iou, evaluate_mae

__version__ = "0.1.0"
