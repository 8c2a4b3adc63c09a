"""CMFusion: gradient-verified multimodal fusion classification at desk scale."""

from .data import (Dataset, DatasetManifest, FrameSamplingPlan, ModalitySample,
                   SynthSpec, generate_synthetic_dataset, read_bundle,
                   sample_frame_indices, save_dataset, split_dataset, write_bundle)
from .errors import (CmfusionError, ConfigError, DimensionError, FormatError,
                     GradientError, ValidationError)
from .gradcheck import finite_diff_check, finite_diff_report
from .metrics import Metrics, compute_metrics
from .mfcc import MfccConfig, Waveform, mfcc_features, read_wav
from .model import (ArchitectureVariant, CmfusionModel, ModelDims,
                    TABLE_II_VARIANTS, TABLE_III_VARIANTS, VARIANTS, forward,
                    get_variant)
from .optim import AdamState, adam_step
from .tensor import Tensor, backward, cross_entropy, elementwise, matmul, softmax_rows
from .train import (TrainConfig, TrainResult, evaluate, export_embeddings,
                    load_checkpoint, run_ablation, save_checkpoint, train)

__version__ = "0.1.0"
