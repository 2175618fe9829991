"""Run reports, their JSON form, the text table and the ablation plot."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import atomic_write

METRICS = ("mcc", "dice", "iou")
CONDITION_LABELS = {"manual": "Manual", "none": "None", "automatic": "Automatic"}


def _std(values):
    # sample std across models; 0 for a single model
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


@dataclass
class RunReport:
    """Test-set results of one condition and model variant.

    ``per_image`` rows carry ``model`` (the index of the trained model that
    produced them). ``per_fold`` holds per-model means and ``mean``/``std``
    summarise across models, which is the unit used for significance tests.
    """

    condition: str
    variant: str
    per_image: list
    per_fold: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    significance: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    sample_unit: str = "model"
    timestamp: str | None = None

    def __post_init__(self):
        if not self.per_fold and self.per_image:
            self.recompute()

    @staticmethod
    def aggregate(per_image):
        models = sorted({row["model"] for row in per_image})
        per_fold = []
        for m in models:
            rows = [r for r in per_image if r["model"] == m]
            entry = {"model": m, "n": len(rows)}
            for k in METRICS:
                entry[k] = float(np.mean([r[k] for r in rows]))
            per_fold.append(entry)
        mean = {k: float(np.mean([f[k] for f in per_fold])) for k in METRICS}
        std = {k: _std([f[k] for f in per_fold]) for k in METRICS}
        return per_fold, mean, std

    def recompute(self):
        self.per_fold, self.mean, self.std = self.aggregate(self.per_image)
        return self

    def check_consistency(self, tol=1e-12):
        per_fold, mean, std = self.aggregate(self.per_image)
        if len(per_fold) != len(self.per_fold):
            return False
        for a, b in zip(per_fold, self.per_fold):
            if a["model"] != b["model"] or a["n"] != b["n"]:
                return False
            if any(abs(a[k] - b[k]) > tol for k in METRICS):
                return False
        return all(abs(mean[k] - self.mean[k]) <= tol and abs(std[k] - self.std[k]) <= tol for k in METRICS)

    def fold_values(self, metric="mcc"):
        return [f[metric] for f in self.per_fold]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self, include_timestamp=True):
        d = self.to_dict()
        if not include_timestamp:
            d.pop("timestamp")
        return json.dumps(d, indent=1, sort_keys=True, allow_nan=False)

    def save(self, path):
        atomic_write(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class AblationResult:
    """Test MCC per removal fraction and condition; ``reports`` keeps each run."""

    fractions: list
    mcc: dict
    removed: dict
    reports: dict = field(default_factory=dict)
    seed: int = 0
    timestamp: str | None = None

    def ratio(self, condition, low_fraction=0.9):
        """MCC with ``low_fraction`` removed divided by MCC with nothing removed."""
        fr = [round(f, 9) for f in self.fractions]
        base = self.mcc[condition][fr.index(0.0)]
        low = self.mcc[condition][fr.index(round(low_fraction, 9))]
        return low / base if base > 0 else math.nan

    def to_dict(self):
        return asdict(self)

    def to_json(self, include_timestamp=True):
        d = self.to_dict()
        if not include_timestamp:
            d.pop("timestamp")
        return json.dumps(d, indent=1, sort_keys=True)

    def save(self, path):
        atomic_write(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def render_table(reports, metric="mcc", reference="automatic"):
    """Condition rows x variant columns of ``mean (std)``.

    A dagger marks a condition whose difference from ``reference`` is
    significant according to the significance rows stored in the reports.
    """
    conds = [c for c in CONDITION_LABELS if any(r.condition == c for r in reports)]
    conds += sorted({r.condition for r in reports} - set(conds))
    variants = sorted({r.variant for r in reports})
    cell = {(r.condition, r.variant): r for r in reports}
    sig = set()
    for r in reports:
        for row in r.significance:
            if row.get("significant") and reference in (row["a"], row["b"]):
                other = row["b"] if row["a"] == reference else row["a"]
                sig.add((other, r.variant))
    width = max([14] + [len(v) + 2 for v in variants])
    lines = [f"{metric.upper():<12}" + "".join(f"{v:>{width}}" for v in variants)]
    for c in conds:
        row = f"{CONDITION_LABELS.get(c, c):<12}"
        for v in variants:
            r = cell.get((c, v))
            if r is None:
                row += f"{'-':>{width}}"
                continue
            mark = "†" if (c, v) in sig else ""
            row += f"{r.mean[metric]:.3f} ({r.std[metric]:.3f}){mark}".rjust(width)
        lines.append(row)
    thresholds = {row["threshold"] for r in reports for row in r.significance}
    if thresholds:
        t = min(thresholds)
        lines.append(f"† differs from {CONDITION_LABELS.get(reference, reference)} "
                     f"(Mann-Whitney U, p < {t:.4g})")
    units = {r.sample_unit for r in reports}
    lines.append(f"std across: {', '.join(sorted(units))}")
    return "\n".join(lines) + "\n"


def plot_ablation(result, path):
    """MCC against share of training data kept, one line per condition (SVG)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "woundseg", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        kept = [100 * (1 - f) for f in result.fractions]
        for cond, vals in sorted(result.mcc.items()):
            ax.plot(kept, vals, marker="o", label=CONDITION_LABELS.get(cond, cond))
        ax.set_xlabel("training images kept (%)")
        ax.set_ylabel("test MCC")
        ax.set_ylim(0, 1)
        ax.invert_xaxis()
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        tmp = f"{path}.tmp.svg"
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        plt.close(fig)
    os.replace(tmp, path)
