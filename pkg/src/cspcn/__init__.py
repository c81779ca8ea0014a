"""Three-stage progressive denoising network with attention throughout.

Two context-mining stages (multi-dilation feature extraction, an
attention-gated encoder-decoder, and a convolutional attention
controller) feed a space-synthesis stage that fuses a parallel feature
and cascade path.  Ships with seeded noise synthesis, a composite
fidelity/edge/auxiliary loss, PSNR/SSIM reporting, and a batch CLI.
"""

from .config import (ConfigError, LossConfig, ModelConfig, TrainConfig,
                     dump_config, load_config, parse_config, save_config,
                     validate_configs)
from .data import (DatasetIndex, add_awgn, augment_pair, derive_seed,
                   extract_patches, from_tensor, image_bit_depth, index_dataset,
                   load_image, patch_coords, rgb_to_luma, save_image,
                   split_index, to_tensor)
from .losses import (LossReport, charbonnier, composite_loss, edge_loss,
                     laplacian, recon_l1, total_loss)
from .metrics import MetricReport, compare, psnr, ssim, write_metrics_csv
from .model import (CSPCN, ForwardResult, crop_to, init_parameters,
                    pad_to_multiple)
from .persistence import Checkpoint, load_checkpoint, save_checkpoint
from .training import (TrainLog, apply_model_arrays, apply_optimizer_arrays,
                       fit, lr_at, make_batch, make_optimizer,
                       save_training_checkpoint, train_step, validate)

__version__ = "0.1.0"

__all__ = [
    "CSPCN", "Checkpoint", "ConfigError", "DatasetIndex", "ForwardResult",
    "LossConfig", "LossReport", "MetricReport", "ModelConfig", "TrainConfig",
    "TrainLog", "add_awgn", "apply_model_arrays", "apply_optimizer_arrays",
    "augment_pair", "charbonnier", "compare", "composite_loss", "crop_to",
    "derive_seed", "dump_config", "edge_loss", "extract_patches", "fit",
    "from_tensor", "image_bit_depth", "index_dataset", "init_parameters",
    "laplacian", "load_checkpoint", "load_config", "load_image", "lr_at",
    "make_batch", "make_optimizer", "pad_to_multiple", "parse_config",
    "patch_coords", "psnr", "recon_l1", "rgb_to_luma", "save_checkpoint",
    "save_config", "save_image", "save_training_checkpoint", "split_index",
    "ssim", "to_tensor", "total_loss", "train_step", "validate",
    "validate_configs", "write_metrics_csv",
]
