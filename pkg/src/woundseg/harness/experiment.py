"""Cross-validation, random search, final training and the data-size ablation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from enum import Enum
from functools import partial

import numpy as np

from ..core import InvalidInputError
from ..data.augment import AugmentParams
from ..detpost import PostprocessParams, ds_infer, nms, segment_boxes, segment_whole
from ..metrics import average_precision, segmentation_metrics
from ..nn.train import TrainConfig, TrainingError, train_detector, train_segmenter
from .report import AblationResult, RunReport
from .space import DETECTION_SPACE, SEGMENTATION_SPACE, sample_hyperparams
from .stats import compare_conditions

log = logging.getLogger(__name__)


class Condition(str, Enum):
    MANUAL = "manual"
    NONE = "none"
    AUTOMATIC = "automatic"


class FoldError(TrainingError):
    def __init__(self, fold, cause):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.epoch = getattr(cause, "epoch", None)


class SearchError(RuntimeError):
    def __init__(self, causes):
        super().__init__("all trials failed: " + "; ".join(f"trial {t}: {c}" for t, c in causes))
        self.causes = causes


@dataclass
class ExperimentSettings:
    """Everything about a run that is not searched over."""

    variant: str = "unet_lite"
    depth: int = 3
    base_channels: int = 8
    det_stride: int = 8
    det_base_channels: int = 8
    det_input_size: int = 64
    max_epochs: int = 100
    det_max_epochs: int = 100
    early_stop_patience: int = 12
    early_stopping: bool = True
    final_repeats: int = 5
    monitor_fraction: float = 0.1
    postprocess: PostprocessParams = field(default_factory=PostprocessParams)
    augment: AugmentParams = field(default_factory=AugmentParams)

    def segmenter_model_config(self, variant=None):
        return {"variant": variant or self.variant, "depth": self.depth, "base_channels": self.base_channels}

    def detector_model_config(self):
        return {"stride": self.det_stride, "base_channels": self.det_base_channels,
                "input_size": self.det_input_size}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidInputError(f"unknown experiment settings: {sorted(unknown)}")
        if isinstance(d.get("postprocess"), dict):
            d["postprocess"] = PostprocessParams(**d["postprocess"])
        if isinstance(d.get("augment"), dict):
            d["augment"] = AugmentParams(**d["augment"])
        return cls(**d)


def derive_seed(*keys):
    """A 32-bit seed determined by a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _train_config(hp, settings, seed, detector=False):
    space = DETECTION_SPACE if detector else SEGMENTATION_SPACE
    base = {
        "max_epochs": settings.det_max_epochs if detector else settings.max_epochs,
        "early_stop_patience": settings.early_stop_patience,
        "early_stopping": settings.early_stopping,
        "seed": seed,
    }
    base.update(space.to_train_fields(hp))
    return TrainConfig.from_dict(base)


def _training_condition(condition):
    # Manual and Automatic both train on ground-truth crops
    return "none" if Condition(condition) is Condition.NONE else "manual"


def fit_segmenter(train, val, hp, condition, settings, seed, variant=None):
    cfg = _train_config(hp, settings, seed)
    return train_segmenter(train, val, settings.segmenter_model_config(variant), cfg, settings.augment,
                           _training_condition(condition), settings.postprocess)


def fit_detector(train, val, hp, settings, seed):
    cfg = _train_config(hp, settings, seed, detector=True)
    return train_detector(train, val, cfg, settings.detector_model_config(), settings.augment)


def evaluate_condition(records, condition, segmenter, detector=None, params=PostprocessParams(), model=0):
    """Per-image metrics of one condition in full-image coordinates."""
    condition = Condition(condition)
    if condition is Condition.AUTOMATIC and detector is None:
        raise InvalidInputError("automatic condition needs a detector")
    rows = []
    for r in records:
        image = r.image()
        info = {}
        if condition is Condition.MANUAL:
            pred, _ = segment_boxes(image, r.gt_boxes, segmenter, params)
        elif condition is Condition.NONE:
            pred, _ = segment_whole(image, segmenter, params)
        else:
            pred, diag = ds_infer(image, detector, segmenter, params)
            info = {"n_boxes": diag["n_boxes"], "fallback": diag["fallback"]}
        m = segmentation_metrics(pred, r.mask())
        rows.append({"image": r.name, "patient_id": r.patient_id, "model": model,
                     "mcc": m.mcc, "dice": m.dice, "iou": m.iou, **info})
    return rows


def detection_ap(records, detector, params=PostprocessParams()):
    """AP@50 of the detector after non-maximum suppression."""
    dets = [nms(detector.detect(r.image()), params.nms_iou) for r in records]
    return average_precision(dets, [r.gt_boxes for r in records], 0.5)


def cross_validate(records, folds, config, variant=None, condition="manual", settings=None, seed=0,
                   detector_config=None, return_folds=False, fold_detectors=None):
    """Mean over folds of the per-image validation MCC.

    Fold ``i`` validates on fold ``i`` (also the early-stopping monitor) and
    trains on the others. The automatic condition uses ``fold_detectors[i]``
    or, if not given, trains a detector per fold from ``detector_config``.
    """
    settings = settings or ExperimentSettings()
    condition = Condition(condition)
    if condition is Condition.AUTOMATIC and detector_config is None and fold_detectors is None:
        raise InvalidInputError("automatic condition needs detector_config or fold_detectors")
    fold_means = []
    for f in range(folds.k):
        train, val = folds.train_val(records, f)
        leaked = {r.patient_id for r in train} & {r.patient_id for r in val}
        assert not leaked, f"fold {f} leaks patients {sorted(leaked)}"
        try:
            seg, _ = fit_segmenter(train, val, config, condition, settings, derive_seed(seed, f, 0), variant)
            det = None
            if condition is Condition.AUTOMATIC and fold_detectors is not None:
                det = fold_detectors[f]
            elif condition is Condition.AUTOMATIC:
                det, _ = fit_detector(train, val, detector_config, settings, derive_seed(seed, f, 1))
        except (TrainingError, InvalidInputError, ValueError) as exc:
            raise FoldError(f, exc) from exc
        rows = evaluate_condition(val, condition, seg, det, settings.postprocess)
        fold_means.append(float(np.mean([r["mcc"] for r in rows])))
    mean = float(np.mean(fold_means))
    return (mean, fold_means) if return_folds else mean


def fold_detectors(records, folds, config, settings=None, seed=0):
    """One detector per cross-validation fold, trained on the other folds."""
    settings = settings or ExperimentSettings()
    dets = []
    for f in range(folds.k):
        train, val = folds.train_val(records, f)
        try:
            det, _ = fit_detector(train, val, config, settings, derive_seed(seed, f, 1))
        except (TrainingError, InvalidInputError, ValueError) as exc:
            raise FoldError(f, exc) from exc
        dets.append(det)
    return dets


def cross_validate_detector(records, folds, config, settings=None, seed=0, return_folds=False):
    """Mean over folds of validation AP@50."""
    settings = settings or ExperimentSettings()
    aps = []
    for f, det in enumerate(fold_detectors(records, folds, config, settings, seed)):
        aps.append(detection_ap(folds.train_val(records, f)[1], det, settings.postprocess))
    mean = float(np.mean(aps))
    return (mean, aps) if return_folds else mean


def _run_trial(t, master_seed, space, evaluate):
    rng = np.random.default_rng([master_seed, t])
    config = sample_hyperparams(space, rng)
    try:
        score = float(evaluate(config, derive_seed(master_seed, t)))
        if math.isnan(score):
            raise ValueError("score is NaN")
        return {"trial": t, "config": config, "score": score, "error": None}
    except Exception as exc:  # a failed trial is logged, the search goes on
        return {"trial": t, "config": config, "score": None, "error": f"{type(exc).__name__}: {exc}"}


def select_best(trials):
    """Highest score wins; ties go to the lowest trial index."""
    ok = [t for t in trials if t["error"] is None]
    if not ok:
        raise SearchError([(t["trial"], t["error"]) for t in sorted(trials, key=lambda t: t["trial"])])
    return min(ok, key=lambda t: (-t["score"], t["trial"]))


def random_search(space, budget=50, records=None, folds=None, variant=None, condition="manual",
                  master_seed=0, settings=None, detector_config=None, evaluate=None, jobs=1):
    """Random search maximising cross-validated score; returns ``(best config, trials)``.

    Trial ``t`` samples its config from ``default_rng([master_seed, t])`` and
    trains with seeds derived from ``(master_seed, t, fold)``, so results do
    not depend on execution order. ``evaluate(config, seed) -> score`` may be
    injected; by default it is :func:`cross_validate` (segmentation spaces)
    or :func:`cross_validate_detector` (the detection space).
    """
    if budget < 1:
        raise InvalidInputError("search budget must be >= 1")
    if evaluate is None:
        settings = settings or ExperimentSettings()
        if space.name == "detection":
            evaluate = partial(_eval_detector, records, folds, settings)
        else:
            dets = None
            if Condition(condition) is Condition.AUTOMATIC and detector_config is not None:
                # the detector config is fixed during a segmenter search: train fold detectors once
                dets = fold_detectors(records, folds, detector_config, settings, derive_seed(master_seed, 0))
            evaluate = partial(_eval_segmenter, records, folds, variant, condition, settings, detector_config,
                               dets)
    run = partial(_run_trial, master_seed=master_seed, space=space, evaluate=evaluate)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(run, range(budget)))
    else:
        trials = [run(t) for t in range(budget)]
    trials.sort(key=lambda t: t["trial"])
    for t in trials:
        log.info("trial %d score %s %s", t["trial"], t["score"], t["error"] or "")
    return select_best(trials)["config"], trials


def _eval_segmenter(records, folds, variant, condition, settings, detector_config, dets, config, seed):
    return cross_validate(records, folds, config, variant, condition, settings, seed, detector_config,
                          fold_detectors=dets)


def _eval_detector(records, folds, settings, config, seed):
    return cross_validate_detector(records, folds, config, settings, seed)


def monitor_split(records, fraction, seed):
    """Seeded image-level split into (train, monitor); the monitor gets ceil(fraction * n)."""
    n = len(records)
    n_mon = max(1, math.ceil(round(fraction * n, 9)))
    if n_mon >= n:
        raise InvalidInputError(f"cannot reserve {n_mon} monitor images out of {n}")
    perm = np.random.default_rng([seed, 2]).permutation(n)
    mon = set(perm[:n_mon].tolist())
    return [r for i, r in enumerate(records) if i not in mon], [r for i, r in enumerate(records) if i in mon]


def train_final_detector(config, trainval, settings, seed):
    train, mon = monitor_split(trainval, settings.monitor_fraction, derive_seed(seed, 1000))
    det, _ = fit_detector(train, mon, config, settings, derive_seed(seed, 1001))
    return det


def final_train_and_test(config, trainval, test, condition, settings=None, seed=0, variant=None,
                         detector=None, detector_config=None, repeats=None, return_models=False):
    """Retrain on the merged training set and evaluate on ``test``.

    ``repeats`` models are trained (default ``settings.final_repeats``),
    each with its own seed and its own seeded monitor slice; their per-model
    mean MCCs are the samples behind the reported std and significance.
    With ``return_models`` the result is ``(report, segmenters, detector)``.
    """
    settings = settings or ExperimentSettings()
    condition = Condition(condition)
    repeats = settings.final_repeats if repeats is None else repeats
    if condition is Condition.AUTOMATIC and detector is None:
        if detector_config is None:
            raise InvalidInputError("automatic condition needs a detector or detector_config")
        detector = train_final_detector(detector_config, trainval, settings, seed)
    models, seeds = [], []
    for k in range(repeats):
        s = derive_seed(seed, k)
        train, mon = monitor_split(trainval, settings.monitor_fraction, s)
        seg, _ = fit_segmenter(train, mon, config, condition, settings, s, variant)
        models.append(seg)
        seeds.append(s)
    report = evaluate_models(models, test, condition, settings, detector, variant)
    report.seeds = {"master": seed, "models": seeds}
    report.config = {"hyperparams": config, "detector_hyperparams": detector_config,
                     "settings": settings.to_dict()}
    report.extra["n_train"] = len(trainval)
    return (report, models, detector) if return_models else report


def evaluate_models(segmenters, records, condition, settings=None, detector=None, variant=None):
    """RunReport of already trained segmenters (one per model index) on ``records``."""
    settings = settings or ExperimentSettings()
    condition = Condition(condition)
    rows = []
    for k, seg in enumerate(segmenters):
        rows += evaluate_condition(records, condition, seg, detector, settings.postprocess, model=k)
    extra = {"n_test": len(records)}
    if condition is Condition.AUTOMATIC:
        extra["detector_ap50"] = detection_ap(records, detector, settings.postprocess)
    return RunReport(
        condition=condition.value,
        variant=variant or settings.variant,
        per_image=rows,
        extra=extra,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def attach_significance(reports, alpha=0.05, m=None):
    """Compare all reports pairwise and store the table in each of them."""
    rows = [c.to_dict() for c in compare_conditions({r.condition: r for r in reports}, alpha, m)]
    for r in reports:
        r.significance = rows
    return rows


def removal_order(n, seed):
    return np.random.default_rng([seed, 3]).permutation(n)


def ablation(trainval, test, configs, conditions=("none", "automatic"), fractions=None, seed=0,
             settings=None, detector=None, detector_config=None, repeats=1):
    """Retrain with a growing share of training images removed.

    Removal is nested: the images removed at fraction ``f`` are the first
    ``round(f * n)`` entries of one seeded permutation. The detector is
    trained once on the full training set and kept fixed.
    """
    settings = settings or ExperimentSettings()
    fractions = [round(0.1 * i, 9) for i in range(10)] if fractions is None else list(fractions)
    n = len(trainval)
    order = removal_order(n, seed)
    if any(Condition(c) is Condition.AUTOMATIC for c in conditions) and detector is None:
        detector = train_final_detector(detector_config, trainval, settings, seed)
    mcc = {Condition(c).value: [] for c in conditions}
    removed, reports = {}, {c: [] for c in mcc}
    for f in fractions:
        n_rm = int(round(f * n))
        gone = set(order[:n_rm].tolist())
        kept = [r for i, r in enumerate(trainval) if i not in gone]
        if len(kept) < 2:
            raise InvalidInputError(f"removing {f:.0%} leaves {len(kept)} training images")
        removed[repr(f)] = sorted(trainval[i].name for i in gone)
        for c in mcc:
            rep = final_train_and_test(configs[c], kept, test, c, settings, seed, detector=detector,
                                       repeats=repeats)
            rep.timestamp = None
            mcc[c].append(rep.mean["mcc"])
            reports[c].append(rep.to_dict())
    return AblationResult(fractions=fractions, mcc=mcc, removed=removed, reports=reports, seed=seed,
                          timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"))


__all__ = [
    "Condition", "ExperimentSettings", "FoldError", "SearchError", "ablation", "attach_significance",
    "cross_validate", "cross_validate_detector", "derive_seed", "detection_ap", "evaluate_condition",
    "evaluate_models", "fold_detectors",
    "final_train_and_test", "monitor_split", "random_search", "removal_order", "select_best",
    "train_final_detector",
]
