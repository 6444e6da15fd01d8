"""Unsupervised dynamic MRI reconstruction from undersampled k-t-space.

Learns complex-valued image sequences from masked Fourier measurements alone
by enforcing equivariance to a diffeo-temporal transformation group, with
measurement-splitting and SURE baselines, a synthetic phantom harness,
fastMRI-convention metrics and a training/evaluation CLI.
"""

from .backbone import (
    BackboneConfig,
    BackboneKind,
    DcMode,
    data_consistency,
    init_params,
    param_count,
    reconstruct,
)
from .data import (
    DatasetManifest,
    ManifestEntry,
    PhantomConfig,
    build_dataset,
    generate_phantom,
    ingest_external,
    load_manifest,
    load_masks,
    load_sequence,
    save_masks,
    save_sequence,
    standardize,
)
from .forward_model import (
    Masks,
    MaskSpec,
    MaskScheme,
    add_noise,
    adjoint,
    forward,
    sample_masks,
    zero_filled,
)
from .groups import (
    CpabElement,
    GroupConfig,
    GroupElement,
    RotationElement,
    TemporalElement,
    act,
    act_diffeo,
    act_rotate,
    act_temporal,
    cpab_integrate,
    cpab_velocity,
    inverse,
    sample_group,
)
from .losses import (
    LossConfig,
    LossKind,
    Metric,
    compute_loss,
    loss_ddei,
    loss_ddei_sure,
    loss_mc,
    loss_phase2phase,
    loss_ssdu,
    loss_supervised,
    loss_sure,
    split_measurements,
    tssdu_star_reconstruct,
)
from .metrics import MetricsReport, aggregate, nmse, psnr, ssim
from .training import (
    Checkpoint,
    OptimizerConfig,
    TrainConfig,
    evaluate,
    evaluate_checkpoint,
    train,
)
from .video import ImageSequence, KTSequence, fft2_centered, ifft2_centered, inner_product
from .viz import demo_transforms, export_video

__version__ = "0.1.0"
