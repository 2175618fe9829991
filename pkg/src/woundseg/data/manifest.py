"""Dataset records and the JSON manifest format.

A manifest is one JSON array; each entry is::

    {"image": "images/p00_000.png", "mask": "masks/p00_000.png",
     "patient": "p00", "boxes": [[x_min, y_min, x_max, y_max], ...]}

Paths are relative to the manifest's directory. ``boxes`` is optional and
derived from the mask (4-connected components) when missing.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..core import Box, InvalidInputError, MaskValueError, load_image, load_mask


class ManifestError(InvalidInputError):
    pass


def component_boxes(mask):
    """Tight half-open boxes of the 4-connected foreground components."""
    labels, n = ndimage.label(np.asarray(mask) > 0)
    boxes = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        ys, xs = sl
        boxes.append(Box(xs.start, ys.start, xs.stop, ys.stop))
    # scan order of find_objects is label order = raster order of first pixel
    return boxes


@dataclass
class DatasetRecord:
    image_ref: Path
    mask_ref: Path
    patient_id: str
    gt_boxes: list = field(default_factory=list)
    _image: np.ndarray | None = field(default=None, repr=False, compare=False)
    _mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def image(self):
        if self._image is None:
            self._image = load_image(self.image_ref)
        return self._image

    def mask(self):
        if self._mask is None:
            self._mask = load_mask(self.mask_ref)
        return self._mask

    @property
    def name(self):
        return Path(self.image_ref).stem


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} not found")
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise ManifestError(f"manifest {path}: top level must be an array")
    root = path.parent
    records = []
    for i, entry in enumerate(entries):
        where = f"record {i} ({entry.get('image', '?') if isinstance(entry, dict) else '?'})"
        try:
            img_path = root / entry["image"]
            mask_path = root / entry["mask"]
            patient = str(entry["patient"])
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{where}: missing field {exc}") from exc
        for p in (img_path, mask_path):
            if not p.is_file():
                raise ManifestError(f"{where}: file {p} not found")
        try:
            image = load_image(img_path)
            mask = load_mask(mask_path)
        except MaskValueError as exc:
            raise ManifestError(f"{where}: {exc}") from exc
        if image.shape[:2] != mask.shape:
            raise ManifestError(f"{where}: image {image.shape[:2]} and mask {mask.shape} differ")
        if entry.get("boxes") is not None:
            try:
                boxes = [Box(*map(float, b)) for b in entry["boxes"]]
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{where}: bad box ({exc})") from exc
        else:
            boxes = component_boxes(mask)
        records.append(DatasetRecord(img_path, mask_path, patient, boxes, image, mask))
    return records


def _box_json(box):
    return [int(v) if float(v).is_integer() else float(v) for v in box.as_list()]


def write_manifest(records, path):
    """Write records as a manifest; paths are stored relative to ``path``."""
    path = Path(path)
    root = path.parent.resolve()
    entries = []
    for r in records:
        entries.append({
            "image": Path(os.path.relpath(Path(r.image_ref).resolve(), root)).as_posix(),
            "mask": Path(os.path.relpath(Path(r.mask_ref).resolve(), root)).as_posix(),
            "patient": r.patient_id,
            "boxes": [_box_json(b) for b in r.gt_boxes],
        })
    text = json.dumps(entries, indent=1) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
