"""Affect recognition for video ads from content-driven image channels,
viewer gaze and rater annotations."""

__version__ = "0.1.0"

from .model import (Affect, AffectTask, ChannelKind, DatasetManifest, FrameSample, Level, RatingMatrix,
                    VideoRecord, load_manifest, sample_frames)
from .channels import (adaptive_blur, constant_blur, eye_roi, eye_roi_context_blur, object_crops,
                       object_retained)
from .detector import Detection, DetectorHandle, file_detector, scripted_detector
from .gaze import (GazeTrace, build_heatmap, derive_saccades, detect_fixations, gaze_histogram_features,
                   map_to_frame)
from .features import Window, assemble_design_matrix, gist, load_deep_features
from .learners import HyperGrid, fit_classifier, inner_cv_select, train_lda, train_svm
from .evaluation import CvPlan, emit_report, f1_score, run_protocol
from .stats import benjamini_hochberg, fleiss_kappa, krippendorff_alpha, pearson, wilcoxon_ranksum
