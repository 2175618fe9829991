"""``woundseg`` command line.

Every command accepts ``--config FILE`` (JSON, same keys as the flags with
dashes as underscores) and ``--seed``; explicit flags win over the file.
``--set KEY=VALUE`` overrides a single experiment setting, training or
post-processing field (``postprocess.output_size=32``, ``max_epochs=20``).
Outputs go to ``--out`` or, if absent, to ``$WOUNDSEG_OUT`` (default
``woundseg_out``); each run writes its resolved configuration next to them.

Exit status: 0 success, 1 invalid input or usage, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path


from .core import InvalidInputError, atomic_write, load_image, save_mask
from .data import FoldAssignment, ManifestError, SynthConfig, generate_synthetic, load_manifest, make_split
from .data.synth import GenerationError
from .detpost import ds_infer
from .harness import (DETECTION_SPACE, SEGMENTATION_SPACE, AblationResult, ExperimentSettings, RunReport,
                      SearchError, ablation, attach_significance, final_train_and_test, monitor_split,
                      plot_ablation, random_search, render_table)
from .harness.experiment import derive_seed, fit_detector, fit_segmenter
from .nn import CheckpointError, TrainingError, load_checkpoint, save_checkpoint

log = logging.getLogger("woundseg")

ENV_OUT = "WOUNDSEG_OUT"
DEFAULT_SEG_HP = {"batch_size": 8, "initial_lr": 1e-3, "lr_decay": 0.95, "weight_decay": 0.0}
DEFAULT_DET_HP = {"batch_size": 8, "initial_lr": 1e-3, "lr_decay": 0.95, "l2": 1e-5, "momentum": 0.9}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers

def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _set_dotted(d, key, value):
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def _parse_sets(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InvalidInputError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            v = json.loads(v)
        except json.JSONDecodeError:
            pass
        out[k] = v
    return out


def _resolve(args, defaults):
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if args.config:
        file_cfg = _load_json(args.config)
        if not isinstance(file_cfg, dict):
            raise InvalidInputError(f"{args.config}: top level must be an object")
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for k, v in vars(args).items():
        if k in ("config", "func") or v is None:
            continue
        if k == "set":
            sets = dict(cfg.get("set") or {})
            sets.update(_parse_sets(v))
            cfg["set"] = sets
        else:
            cfg[k] = v
    if isinstance(cfg.get("set"), list):
        cfg["set"] = _parse_sets(cfg["set"])
    cfg.setdefault("set", {})
    cfg["out"] = cfg.get("out") or os.environ.get(ENV_OUT, "woundseg_out")
    return cfg


def _settings(cfg):
    """ExperimentSettings from ``settings`` (file) and ``--set`` overrides."""
    base = ExperimentSettings().to_dict()
    for k, v in (cfg.get("settings") or {}).items():
        _set_dotted(base, k, v)
    train_over = {}
    for k, v in cfg["set"].items():
        if k.startswith("train."):
            train_over[k[6:]] = v
        elif k.split(".")[0] in base:
            _set_dotted(base, k, v)
        else:
            raise InvalidInputError(f"unknown setting {k!r}")
    return ExperimentSettings.from_dict(base), train_over


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_config(out, command, cfg):
    _write_json(Path(out) / f"{command}.config.json", {"command": command, **cfg})


def _records_and_split(cfg):
    if not cfg.get("manifest"):
        raise InvalidInputError("--manifest is required")
    records = load_manifest(cfg["manifest"])
    if cfg.get("split"):
        folds = FoldAssignment.load(cfg["split"])
    else:
        folds = make_split(records, cfg.get("test_fraction", 0.1), cfg.get("folds", 5), cfg["seed"],
                           cfg.get("restarts", 200))
    return records, folds


def _hyperparams(cfg, key, default, section):
    """Hyperparameters from a file: a search result (``best``) or a plain mapping."""
    path = cfg.get(key)
    if not path:
        return dict(default)
    d = _load_json(path)
    if "best" in d:
        d = d["best"]
    if isinstance(d.get(section), dict):
        d = d[section]
    return d


def _apply_train_overrides(hp, over):
    return {**hp, **over}


# ------------------------------------------------------------------ commands

def cmd_generate(cfg):
    out = _out_dir(cfg)
    overrides = {"n_patients": cfg["patients"], "image_size": cfg["size"]}
    if cfg.get("images") is not None:
        n = cfg["images"]
        overrides["images_per_patient_range"] = tuple(n) if isinstance(n, list) else (n, n)
    known = set(SynthConfig.__dataclass_fields__)
    for k, v in cfg["set"].items():
        k = k.removeprefix("synth.")
        if k not in known:
            raise InvalidInputError(f"unknown synthetic-data setting {k!r}")
        overrides[k] = v
    config = SynthConfig.preset(cfg["shift"], **overrides)
    records = generate_synthetic(config, cfg["seed"], out)
    _record_config(out, "generate", {**cfg, "synth": config.to_dict()})
    print(f"wrote {len(records)} images of {config.n_patients} patients to {out}")


def cmd_split(cfg):
    out = _out_dir(cfg)
    records = load_manifest(cfg["manifest"])
    fa = make_split(records, cfg["test_fraction"], cfg["folds"], cfg["seed"], cfg["restarts"])
    fa.save(out / "split.json")
    _record_config(out, "split", cfg)
    print(f"test patients {len(fa.test_patients)}, {fa.k} folds, objective {fa.objective:.4g}")


def cmd_train_detector(cfg):
    out = _out_dir(cfg)
    settings, over = _settings(cfg)
    records, folds = _records_and_split(cfg)
    hp = _apply_train_overrides(_hyperparams(cfg, "hyperparams", DEFAULT_DET_HP, "detector"), over)
    trainval = folds.training_records(records)
    train, mon = monitor_split(trainval, settings.monitor_fraction, derive_seed(cfg["seed"], 1000))
    seed = derive_seed(cfg["seed"], 1001)
    det, hist = fit_detector(train, mon, hp, settings, seed)
    save_checkpoint(out / "detector.ckpt", det, seed=seed, train_config=hp,
                    extra={"history": hist.to_dict()})
    _record_config(out, "train-detector", {**cfg, "hyperparams_resolved": hp, "settings": settings.to_dict()})
    print(f"detector: {hist.epochs_run} epochs, best epoch {hist.best_epoch}")


def cmd_train_segmenter(cfg):
    out = _out_dir(cfg)
    settings, over = _settings(cfg)
    records, folds = _records_and_split(cfg)
    hp = _apply_train_overrides(_hyperparams(cfg, "hyperparams", DEFAULT_SEG_HP, cfg["condition"]), over)
    trainval = folds.training_records(records)
    seed = derive_seed(cfg["seed"], 0)
    train, mon = monitor_split(trainval, settings.monitor_fraction, seed)
    seg, hist = fit_segmenter(train, mon, hp, cfg["condition"], settings, seed, cfg.get("variant"))
    save_checkpoint(out / "segmenter.ckpt", seg, seed=seed, class_weight=hist.class_weight,
                    train_config=hp, extra={"condition": cfg["condition"], "history": hist.to_dict(),
                                            "postprocess": settings.postprocess.to_dict()})
    _record_config(out, "train-segmenter", {**cfg, "hyperparams_resolved": hp, "settings": settings.to_dict()})
    print(f"segmenter: {hist.epochs_run} epochs, best epoch {hist.best_epoch}, w={hist.class_weight:.3f}")


def cmd_search(cfg):
    out = _out_dir(cfg)
    settings, _ = _settings(cfg)
    records, folds = _records_and_split(cfg)
    trainval = folds.training_records(records)
    target = cfg["condition"]
    if target == "detector":
        best, trials = random_search(DETECTION_SPACE, cfg["budget"], trainval, folds,
                                     master_seed=cfg["seed"], settings=settings, jobs=cfg["jobs"])
    else:
        det_hp = _hyperparams(cfg, "detector_hyperparams", DEFAULT_DET_HP, "detector") \
            if target == "automatic" else None
        best, trials = random_search(SEGMENTATION_SPACE, cfg["budget"], trainval, folds, cfg.get("variant"),
                                     target, cfg["seed"], settings, det_hp, jobs=cfg["jobs"])
    _write_json(out / f"search_{target}.json", {"target": target, "best": best, "trials": trials})
    _record_config(out, "search", {**cfg, "settings": settings.to_dict()})
    ok = [t for t in trials if t["error"] is None]
    print(f"{target}: best score {max(t['score'] for t in ok):.4f} over {len(trials)} trials")


def cmd_eval(cfg):
    out = _out_dir(cfg)
    settings, over = _settings(cfg)
    records, folds = _records_and_split(cfg)
    cond = cfg["condition"]
    hp = _apply_train_overrides(_hyperparams(cfg, "hyperparams", DEFAULT_SEG_HP, cond), over)
    detector, det_hp = None, None
    if cond == "automatic":
        if cfg.get("detector"):
            detector, _ = load_checkpoint(cfg["detector"])
        else:
            det_hp = _hyperparams(cfg, "detector_hyperparams", DEFAULT_DET_HP, "detector")
    report = final_train_and_test(hp, folds.training_records(records), folds.test_records(records), cond,
                                  settings, cfg["seed"], cfg.get("variant"), detector=detector,
                                  detector_config=det_hp, repeats=cfg.get("repeats"))
    report.save(out / f"report_{cond}_{report.variant}.json")
    _record_config(out, "eval", {**cfg, "settings": settings.to_dict()})
    print(f"{cond}: MCC {report.mean['mcc']:.4f} ({report.std['mcc']:.4f})")


def cmd_ablate(cfg):
    out = _out_dir(cfg)
    settings, over = _settings(cfg)
    records, folds = _records_and_split(cfg)
    conds = cfg["conditions"]
    configs = {c: _apply_train_overrides(_hyperparams(cfg, "hyperparams", DEFAULT_SEG_HP, c), over)
               for c in conds}
    detector, det_hp = None, None
    if "automatic" in conds:
        if cfg.get("detector"):
            detector, _ = load_checkpoint(cfg["detector"])
        else:
            det_hp = _hyperparams(cfg, "detector_hyperparams", DEFAULT_DET_HP, "detector")
    fractions = cfg.get("fractions")
    res = ablation(folds.training_records(records), folds.test_records(records), configs, conds, fractions,
                   cfg["seed"], settings, detector, det_hp, repeats=cfg.get("repeats") or 1)
    res.save(out / "ablation.json")
    _record_config(out, "ablate", {**cfg, "settings": settings.to_dict()})
    for c in res.mcc:
        print(c, " ".join(f"{v:.3f}" for v in res.mcc[c]))


def cmd_infer(cfg):
    out = _out_dir(cfg)
    if not cfg.get("image") or not cfg.get("detector") or not cfg.get("segmenter"):
        raise InvalidInputError("infer needs --image, --detector and --segmenter")
    settings, _ = _settings(cfg)
    det, _ = load_checkpoint(cfg["detector"])
    seg, header = load_checkpoint(cfg["segmenter"])
    params = settings.postprocess
    pp = header.get("extra", {}).get("postprocess")
    if pp and "postprocess.output_size" not in cfg["set"]:
        params = type(params)(**{**params.to_dict(), "output_size": pp["output_size"]})
    if seg.input_size != params.output_size:
        raise InvalidInputError(f"segmenter input {seg.input_size} != crop size {params.output_size}")
    image = load_image(cfg["image"])
    mask, diag = ds_infer(image, det, seg, params)
    stem = Path(cfg["image"]).stem
    tmp = out / f".{stem}_mask.tmp.png"
    save_mask(tmp, mask)
    os.replace(tmp, out / f"{stem}_mask.png")
    _write_json(out / f"{stem}_diagnostics.json", diag)
    _record_config(out, "infer", cfg)
    print(f"{stem}: {diag['n_boxes']} boxes, fallback={diag['fallback']}, {int(mask.sum())} wound pixels")


def cmd_report(cfg):
    out = _out_dir(cfg)
    reports = [RunReport.load(p) for p in cfg.get("reports") or []]
    written = []
    if reports:
        if cfg.get("significance") and len({r.condition for r in reports}) > 1:
            variants = {r.variant for r in reports}
            for v in sorted(variants):
                group = [r for r in reports if r.variant == v]
                if len(group) > 1:
                    attach_significance(group, cfg["alpha"], cfg.get("m"))
        table = render_table(reports)
        atomic_write(out / "table.txt", table)
        written.append("table.txt")
        print(table, end="")
    for path in cfg.get("ablation") or []:
        res = AblationResult.load(path)
        name = Path(path).stem + ".svg"
        plot_ablation(res, out / name)
        written.append(name)
    if not written:
        raise InvalidInputError("report needs --reports and/or --ablation")
    _record_config(out, "report", cfg)


# ------------------------------------------------------------------ parser

DEFAULTS = {
    "generate": {"patients": 30, "images": None, "size": 64, "shift": "in_distribution", "seed": 0},
    "split": {"test_fraction": 0.1, "folds": 5, "restarts": 200, "seed": 0},
    "train-detector": {"seed": 0, "test_fraction": 0.1, "folds": 5, "restarts": 200},
    "train-segmenter": {"seed": 0, "condition": "manual", "test_fraction": 0.1, "folds": 5, "restarts": 200},
    "search": {"seed": 0, "condition": "manual", "budget": 50, "jobs": 1, "test_fraction": 0.1, "folds": 5,
               "restarts": 200},
    "eval": {"seed": 0, "condition": "automatic", "test_fraction": 0.1, "folds": 5, "restarts": 200},
    "ablate": {"seed": 0, "conditions": ["none", "automatic"], "jobs": 1, "test_fraction": 0.1, "folds": 5,
               "restarts": 200},
    "infer": {"seed": 0},
    "report": {"alpha": 0.05, "significance": False, "seed": 0},
}


def _common(p, data=True):
    p.add_argument("--config", help="JSON file with default values for the flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT} or woundseg_out)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a setting")
    if data:
        p.add_argument("--manifest")
        p.add_argument("--split", help="FoldAssignment JSON from `split` (else computed)")
        p.add_argument("--test-fraction", type=float)
        p.add_argument("--folds", type=int)
        p.add_argument("--restarts", type=int)


def build_parser():
    parser = _Parser(prog="woundseg", description="Detect-and-segment wound segmentation toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    _common(p, data=False)
    p.add_argument("--patients", type=int)
    p.add_argument("--images", type=int, help="images per patient (default: random 6-14)")
    p.add_argument("--size", type=int)
    p.add_argument("--shift", choices=["in_distribution", "ood_small_wounds", "ood_cluttered_background"])
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="patient-level holdout and k-fold assignment")
    _common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-detector", help="train the wound detector")
    _common(p)
    p.add_argument("--hyperparams", help="search result or hyperparameter JSON")
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("train-segmenter", help="train a segmenter for one condition")
    _common(p)
    p.add_argument("--hyperparams")
    p.add_argument("--condition", choices=["manual", "none", "automatic"])
    p.add_argument("--variant", choices=["unet_lite", "convnet_lite"])
    p.set_defaults(func=cmd_train_segmenter)

    p = sub.add_parser("search", help="random hyperparameter search with cross-validation")
    _common(p)
    p.add_argument("--condition", choices=["manual", "none", "automatic", "detector"])
    p.add_argument("--variant", choices=["unet_lite", "convnet_lite"])
    p.add_argument("--budget", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--detector-hyperparams")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="retrain on train+val and evaluate one condition on the test set")
    _common(p)
    p.add_argument("--condition", choices=["manual", "none", "automatic"])
    p.add_argument("--variant", choices=["unet_lite", "convnet_lite"])
    p.add_argument("--hyperparams")
    p.add_argument("--detector", help="detector checkpoint (else trained from --detector-hyperparams)")
    p.add_argument("--detector-hyperparams")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="training-set size ablation")
    _common(p)
    p.add_argument("--conditions", nargs="+", choices=["manual", "none", "automatic"])
    p.add_argument("--fractions", nargs="+", type=float)
    p.add_argument("--hyperparams", help="search results keyed by condition, or one mapping for all")
    p.add_argument("--detector")
    p.add_argument("--detector-hyperparams")
    p.add_argument("--repeats", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="segment one image with trained checkpoints")
    _common(p, data=False)
    p.add_argument("--image")
    p.add_argument("--detector")
    p.add_argument("--segmenter")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="render tables and plots from saved reports")
    _common(p, data=False)
    p.add_argument("--reports", nargs="+")
    p.add_argument("--ablation", nargs="+")
    p.add_argument("--significance", action="store_true", default=None,
                   help="recompute significance across the given reports")
    p.add_argument("--alpha", type=float)
    p.add_argument("--m", type=int, help="number of comparisons for the Bonferroni threshold")
    p.set_defaults(func=cmd_report)
    return parser


VALIDATION_ERRORS = (UsageError, InvalidInputError, ManifestError, CheckpointError, FileNotFoundError,
                     GenerationError, KeyError, ValueError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(message)s")
        command, func = args.command, args.func
        del args.verbose, args.command
        func(_resolve(args, DEFAULTS[command]))
        return 0
    except (TrainingError, SearchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
