"""Regenerate geometry_golden.json with a pure-Python oracle.

Uses only ``math`` and explicit loops, no package code, so the frozen
values are independent of the implementation under test.
"""
import json
import math
from pathlib import Path


def enlarge(box, factor, h, w):
    s = math.sqrt(factor)
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    bw, bh = (x1 - x0) * s, (y1 - y0) * s
    return [max(0.0, cx - bw / 2), max(0.0, cy - bh / 2), min(float(w), cx + bw / 2), min(float(h), cy + bh / 2)]


def rasterize(box, h, w):
    x0, y0, x1, y1 = box
    return [max(0, math.floor(round(x0, 9))), max(0, math.floor(round(y0, 9))),
            min(w, math.ceil(round(x1, 9))), min(h, math.ceil(round(y1, 9)))]


def crop_map(ibox, out):
    """For each output pixel: source (row, col) in the image, or None for padding."""
    x0, y0, x1, y1 = ibox
    ch, cw = y1 - y0, x1 - x0
    side = max(ch, cw)
    top, left = (side - ch) // 2, (side - cw) // 2
    rows, cols = [], []
    for i in range(out):
        r = i * side // out - top
        rows.append(r + y0 if 0 <= r < ch else -1)
    for j in range(out):
        c = j * side // out - left
        cols.append(c + x0 if 0 <= c < cw else -1)
    return {"side": side, "pad_top": top, "pad_left": left, "rows": rows, "cols": cols}


def pad_case(h, w):
    s = max(h, w)
    return {"h": h, "w": w, "side": s, "pad_top": (s - h) // 2, "pad_left": (s - w) // 2}


def resize_case(h, w, oh, ow):
    return {"h": h, "w": w, "out_h": oh, "out_w": ow,
            "rows": [i * h // oh for i in range(oh)], "cols": [j * w // ow for j in range(ow)]}


def main():
    crops = []
    for img_h, img_w, box, out in [
        (100, 100, [10, 10, 30, 30], 64),
        (100, 100, [0, 0, 10, 10], 64),
        (64, 48, [40.5, 3.2, 47.9, 20.0], 32),
        (50, 80, [-5, 10, 30, 45], 16),
        (64, 64, [0, 0, 64, 64], 64),
        (37, 53, [12.25, 7.75, 13.5, 30.0], 24),
    ]:
        e = enlarge(box, 1.5, img_h, img_w)
        ibox = rasterize(e, img_h, img_w)
        crops.append({"img_h": img_h, "img_w": img_w, "box": box, "output_size": out,
                      "enlarged": e, "rasterized": ibox, **crop_map(ibox, out)})
    golden = {
        "filter": {"scores": [0.9, 0.31, 0.29, 0.30], "threshold": 0.3, "kept": [0.9, 0.31]},
        "enlarge": [{"box": c["box"], "img_h": c["img_h"], "img_w": c["img_w"], "factor": 1.5,
                     "result": c["enlarged"]} for c in crops],
        "pad": [pad_case(h, w) for h, w in [(4, 6), (6, 4), (5, 5), (1, 3), (3, 1), (7, 2), (2, 9)]],
        "resize": [resize_case(*a) for a in [(2, 2, 4, 4), (4, 4, 2, 2), (3, 5, 7, 2), (26, 26, 64, 64),
                                              (64, 64, 26, 26), (5, 3, 5, 3)]],
        "crops": crops,
    }
    path = Path(__file__).with_name("geometry_golden.json")
    path.write_text(json.dumps(golden, indent=1) + "\n")


if __name__ == "__main__":
    main()
