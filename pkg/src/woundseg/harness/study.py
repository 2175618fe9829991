"""End-to-end comparison of the three conditions on one split."""
from __future__ import annotations

import logging
import time

from .experiment import (Condition, ExperimentSettings, attach_significance, final_train_and_test,
                         random_search, train_final_detector)
from .space import DETECTION_SPACE, SEGMENTATION_SPACE

log = logging.getLogger(__name__)


def run_comparison(records, folds, settings=None, seed=0, budget=20, det_budget=None,
                   conditions=("manual", "none", "automatic"), variant=None, alpha=0.05, jobs=1):
    """Search hyperparameters per condition, retrain, test and compare.

    The detector configuration is searched first (by cross-validated AP@50)
    because the automatic condition's search needs it. Returns a dict with
    the detector config and model, the search logs, and per condition the
    RunReport and the trained segmenters, plus wall-clock seconds per stage.
    """
    settings = settings or ExperimentSettings()
    conditions = [Condition(c).value for c in conditions]
    trainval, test = folds.training_records(records), folds.test_records(records)
    out = {"search": {}, "best": {}, "reports": {}, "models": {}, "timing": {}}
    det_config = detector = None
    t0 = time.perf_counter()
    if "automatic" in conditions:
        det_config, trials = random_search(DETECTION_SPACE, det_budget or budget, trainval, folds,
                                           master_seed=seed, settings=settings, jobs=jobs)
        out["search"]["detector"], out["best"]["detector"] = trials, det_config
        detector = train_final_detector(det_config, trainval, settings, seed)
        out["timing"]["detector"] = time.perf_counter() - t0
    for i, c in enumerate(conditions):
        t0 = time.perf_counter()
        best, trials = random_search(SEGMENTATION_SPACE, budget, trainval, folds, variant, c,
                                     master_seed=seed + 1 + i, settings=settings,
                                     detector_config=det_config, jobs=jobs)
        out["search"][c], out["best"][c] = trials, best
        log.info("condition %s best %s", c, best)
        out["reports"][c], out["models"][c], _ = final_train_and_test(
            best, trainval, test, c, settings, seed, variant, detector=detector, detector_config=det_config,
            return_models=True)
        out["timing"][c] = time.perf_counter() - t0
    if len(conditions) > 1:
        attach_significance(list(out["reports"].values()), alpha, len(conditions) * (len(conditions) - 1) // 2)
    out["detector_config"], out["detector"] = det_config, detector
    return out
