"""contaminet: multi-label bin-photo contamination classification toolkit.

From-scratch training recipe (summed per-label BCE, one-cycle cosine
schedule, discriminative layer-group Adam, augmentation and TTA) plus the
matching evaluation protocol (label-frequency thresholding, one-vs-rest
rater AUC, percentile bootstrap CIs), runnable end to end on the bundled
synthetic dataset.
"""

__version__ = "0.1.0"

from .autodiff import (
    Tensor,
    bce_sum_loss,
    conv2d,
    dense,
    finite_diff_gradcheck,
    max_pool2d,
    relu,
    sigmoid,
)
from .data import (
    AugmentPolicy,
    ImageStore,
    LabelVocabulary,
    ManifestRecord,
    apply_label_threshold,
    batch_iter,
    encode_labels,
    load_manifest,
    load_rater_file,
    preprocess_eval,
    preprocess_train,
    tta_views,
)
from .evaluate import (
    bootstrap_ci,
    build_eval_report,
    expert_consensus_auc,
    macro_auc,
    model_vs_experts_auc,
    roc_auc,
)
from .model import (
    LayerGroups,
    Model,
    ModelConfig,
    build_model,
    load_checkpoint,
    replace_head,
    save_checkpoint,
)
from .optim import (
    AdamState,
    GroupLrPolicy,
    ScheduleConfig,
    adam_step,
    cosine_segment,
    group_scaled_lrs,
    one_cycle_lr,
)
from .train import FitReport, TrainConfig, fit, predict_tta, validate
