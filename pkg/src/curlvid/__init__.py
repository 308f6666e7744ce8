"""Self-supervised contrastive video representation learning for detecting
movement intervals in long grayscale recordings.

Pipeline: synthetic annotated data -> clean-cut clip extraction -> dual
contrastive pretraining (instance + cluster-aware temporal losses) ->
probabilistic-label probing -> sliding-window inference -> evaluation.
"""

from .augment import AugmentationPolicy, AugmentationSpec, apply_spatial, apply_temporal, make_views, sample_spec
from .encoder import EncoderConfig, VideoEncoder, patchify, unpatchify
from .errors import FormatError, NumericError
from .evaluate import MetricsReport, auroc, binarize_eval_labels, confusion_metrics, patient_kfold
from .losses import (ContrastiveBatch, ClusterResult, KMeansResult, cluster_nce, cosine_sim,
                     kmeans, mutual_information, pretrain_loss, soft_cross_entropy,
                     spatial_info_nce, temporal_loss)
from .sampling import SamplerConfig, Window, clean_cut_windows, materialize_clip, sliding_windows
from .synth import SynthConfig, generate_dataset, generate_recording
from .timeline import (LabeledClip, Segment, SegmentTimeline, VideoClip, movement_fraction,
                       validate_timeline)
from .training import TrainConfig, finetune, infer_timeline, lr_schedule, pretrain

__version__ = "0.1.0"
