from .experiment import (Condition, ExperimentSettings, FoldError, SearchError, ablation,
                         attach_significance, cross_validate, cross_validate_detector, derive_seed,
                         detection_ap, evaluate_condition, evaluate_models, final_train_and_test, monitor_split,
                         fold_detectors, random_search, removal_order, select_best,
                         train_final_detector)
from .report import AblationResult, RunReport, plot_ablation, render_table
from .space import DETECTION_SPACE, SEGMENTATION_SPACE, SPACES, HyperSpace, sample_hyperparams
from .stats import DegenerateSampleError, compare_conditions, mann_whitney_u, shapiro_wilk
from .study import run_comparison
