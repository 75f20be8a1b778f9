"""Image-quality and decomposition-quality metrics for the benchmark
protocol: masked l1/mse, windowed SSIM (11x11 Gaussian, sigma 1.5,
K1=0.01, K2=0.03, dynamic range 1), DSSIM = (1-SSIM)/2, mean angular
normal error, and the cross-relighting evaluation table."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from .imaging import Image, Mask, load_image, luminance
from .geometry import load_cameras, make_gt_relit

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0


@dataclass(frozen=True)
class EvalReport:
    l1: float
    mse: float
    ssim: float
    dssim: float
    pixel_count: int
    mae_normals: float | None = None

    def __post_init__(self):
        if abs(self.dssim - (1.0 - self.ssim) / 2.0) > 1e-12:
            raise ValueError("dssim must equal (1 - ssim) / 2")

    def to_json(self) -> str:
        doc = {
            "l1": self.l1,
            "mse": self.mse,
            "ssim": self.ssim,
            "dssim": self.dssim,
            "pixel_count": self.pixel_count,
        }
        if self.mae_normals is not None:
            doc["mae_normals_deg"] = self.mae_normals
        return json.dumps(doc, sort_keys=True)


def _check_pair(a: Image, b: Image, mask: Mask):
    if (a.height, a.width) != (b.height, b.width) or (a.height, a.width) != (
        mask.height,
        mask.width,
    ):
        raise ValueError("image and mask dimensions differ")
    if not mask.values.any():
        raise ValueError("empty mask")


def masked_l1(a: Image, b: Image, mask: Mask) -> float:
    """Mean absolute difference over mask pixels and channels."""
    _check_pair(a, b, mask)
    return float(np.abs(a.data - b.data)[mask.values].mean())


def masked_mse(a: Image, b: Image, mask: Mask) -> float:
    _check_pair(a, b, mask)
    d = (a.data - b.data)[mask.values]
    return float((d * d).mean())


def _gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: Image, b: Image, mask: Mask) -> float:
    """Mean local SSIM on luminance over window centres inside the mask.

    Windows reaching past the border use reflective padding; pixels in a
    window but outside the mask still contribute to its local statistics
    (the mask restricts only the centres).
    """
    _check_pair(a, b, mask)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x = luminance(a) if a.channels == 3 else a.data[..., 0]
    y = luminance(b) if b.channels == 3 else b.data[..., 0]
    k = _gaussian_kernel()
    mu_x = correlate(x, k, mode="reflect")
    mu_y = correlate(y, k, mode="reflect")
    xx = correlate(x * x, k, mode="reflect")
    yy = correlate(y * y, k, mode="reflect")
    xy = correlate(x * y, k, mode="reflect")
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    smap = num / den
    return float(smap[mask.values].mean())


def dssim(a: Image, b: Image, mask: Mask) -> float:
    return (1.0 - ssim(a, b, mask)) / 2.0


def mean_angular_error(n1: Image, n2: Image, mask: Mask) -> float:
    """Mean arccos(n1.n2) over mask pixels, in degrees."""
    _check_pair(n1, n2, mask)
    dots = np.clip((n1.data * n2.data).sum(axis=-1), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots[mask.values])).mean())


def evaluate_pair(a: Image, b: Image, mask: Mask,
                  normals: tuple[Image, Image] | None = None) -> EvalReport:
    s = ssim(a, b, mask)
    mae = mean_angular_error(*normals, mask) if normals else None
    return EvalReport(
        l1=masked_l1(a, b, mask),
        mse=masked_mse(a, b, mask),
        ssim=s,
        dssim=(1.0 - s) / 2.0,
        pixel_count=mask.count,
        mae_normals=mae,
    )


# ---------------------------------------------------------------------------
# Cross-relighting evaluation (the benchmark table)


def evaluate_cross_relighting(scene_dir, outputs_dir, report_dir=None):
    """Score a method's relit outputs against cross-projected ground truth.

    The scene directory holds cameras.json whose entries carry a
    `condition` id; for every source view and every other target
    condition, the method output `<source-stem>__to__<condition>.png` (or
    .pfm) is compared against the mean cross-projection of the target
    condition's views into the source camera. Returns (rows, missing)
    where rows map source condition -> {"l1": mean, "ssim": mean, "cells": n}
    and missing lists absent output files. With report_dir set, a JSON
    EvalReport is written per scored pair.
    """
    scene_dir = Path(scene_dir)
    outputs_dir = Path(outputs_dir)
    if report_dir is not None:
        report_dir = Path(report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
    records = load_cameras(scene_dir / "cameras.json")
    if any(r.condition is None for r in records):
        raise ValueError("every camera entry needs a `condition` id")
    conditions = sorted({r.condition for r in records})
    by_condition = {c: [r for r in records if r.condition == c] for c in conditions}

    sums = {c: {"l1": 0.0, "ssim": 0.0, "cells": 0} for c in conditions}
    missing = []
    for rec in records:
        src_stem = Path(rec.image_file).stem
        for target in conditions:
            if target == rec.condition:
                continue
            out_file = None
            for ext in (".png", ".pfm"):
                cand = outputs_dir / f"{src_stem}__to__{target}{ext}"
                if cand.is_file():
                    out_file = cand
                    break
            if out_file is None:
                missing.append(f"{src_stem}__to__{target}")
                continue
            views = [
                (load_image(scene_dir / r.image_file), r.view)
                for r in by_condition[target]
            ]
            gt, gmask, _ = make_gt_relit(views, rec.view)
            relit = load_image(out_file)
            report = evaluate_pair(relit, gt, gmask)
            sums[rec.condition]["l1"] += report.l1
            sums[rec.condition]["ssim"] += report.ssim
            sums[rec.condition]["cells"] += 1
            if report_dir is not None:
                (report_dir / f"{src_stem}__to__{target}.json").write_text(
                    report.to_json()
                )

    rows = {}
    for c in conditions:
        n = sums[c]["cells"]
        rows[c] = {
            "l1": sums[c]["l1"] / n if n else None,
            "ssim": sums[c]["ssim"] / n if n else None,
            "cells": n,
        }
    return rows, missing


def write_eval_csv(rows, path_or_buf):
    """CSV shaped like the benchmark table: one row per source lighting
    condition with l1 and SSIM columns; gaps stay empty."""
    close = False
    if isinstance(path_or_buf, (str, Path)):
        buf = open(path_or_buf, "w", newline="")
        close = True
    else:
        buf = path_or_buf
    try:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "l1", "ssim"])
        for c in sorted(rows):
            r = rows[c]
            w.writerow(
                [
                    c,
                    "" if r["l1"] is None else f"{r['l1']:.6f}",
                    "" if r["ssim"] is None else f"{r['ssim']:.6f}",
                ]
            )
    finally:
        if close:
            buf.close()


def eval_csv_text(rows) -> str:
    buf = io.StringIO()
    write_eval_csv(rows, buf)
    return buf.getvalue()
