"""Pose-guided appearance transfer with a progressively grown skip-connected autoencoder."""

from .data import LEVELS, DatasetManifest, ImageBuffer, decode_image, load_manifest
from .descriptors import DescriptorSet, build_descriptors
from .discriminator import build_local_discriminator
from .engine import evaluate, infer, infer_sequence, train
from .errors import PoseTransferError
from .heatmaps import HeatmapStack, render_heatmaps
from .keypoints import KeypointSet, load_keypoints
from .losses import FeatureExtractor, global_perceptual, local_perceptual, total_loss
from .metrics import MetricsReport, ms_ssim, perceptual_distance, ssim
from .network import ProgressiveAutoencoder, build_autoencoder, forward, grow

__version__ = "0.1.0"
