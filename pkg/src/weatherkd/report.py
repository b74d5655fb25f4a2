"""Result emission: markdown tables, JSONL rows, and PNG contact sheets.

The report also carries a static published-reference table (full-scale
Rain100L numbers from the original study this pipeline scales down). Those
values are context for the column layout only; they are clearly labeled as
not reproduced here and are never compared against desk-scale results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .evaluate import MetricRow
from .utils import float_to_uint8, save_image, stable_json

# Full-scale reference results (Rain100L) from the study this repo scales
# down. Not reproduced here: desk-scale corpora, nets, and budgets differ by
# orders of magnitude, so these numbers are layout context only.
PUBLISHED_REFERENCE = (
    {"method": "teacher (full scale)", "params_m": 8.52, "psnr_db": 34.90, "ssim": 0.966},
    {"method": "distilled-on-data (full scale)", "params_m": 4.26, "psnr_db": 29.12, "ssim": 0.883},
    {"method": "d4ir (full scale)", "params_m": 4.26, "psnr_db": 30.03, "ssim": 0.906},
    {"method": "m0 (full scale)", "params_m": 4.26, "psnr_db": 28.69, "ssim": 0.876},
)


@dataclass
class SampleGrid:
    """One contact sheet: rows of images under shared column labels.

    Every row must supply exactly one image per column; images are float
    arrays in [0,1] of equal shape.
    """

    name: str
    labels: tuple
    rows: list

    def validate(self) -> None:
        if not self.name or any(c in self.name for c in "/\\"):
            raise ValidationError(f"bad grid name {self.name!r}")
        if not self.rows:
            raise ValidationError(f"grid {self.name!r} has no rows")
        shape = None
        for i, row in enumerate(self.rows):
            if len(row) != len(self.labels):
                raise ValidationError(
                    f"grid {self.name!r} row {i} has {len(row)} images, "
                    f"expected {len(self.labels)}")
            for img in row:
                if img is None:
                    raise ValidationError(f"grid {self.name!r} row {i} is missing an image")
                if shape is None:
                    shape = img.shape
                elif img.shape != shape:
                    raise ValidationError(
                        f"grid {self.name!r} mixes image shapes {shape} and {img.shape}")


def contact_sheet(rows, pad: int = 2) -> np.ndarray:
    """Tile rows of equal-shape [0,1] images into one uint8 sheet."""
    h, w = rows[0][0].shape[:2]
    n_rows, n_cols = len(rows), len(rows[0])
    sheet = np.ones(
        (n_rows * h + pad * (n_rows + 1), n_cols * w + pad * (n_cols + 1), 3))
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            y = pad + r * (h + pad)
            x = pad + c * (w + pad)
            sheet[y : y + h, x : x + w] = img
    return float_to_uint8(sheet)


def _fmt_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.2f}"


def _method_table(rows) -> list:
    lines = ["| Method | Params (M) | PSNR (dB) | SSIM | Seeds |",
             "| --- | ---: | ---: | ---: | --- |"]
    for r in rows:
        seeds = ",".join(str(s) for s in r.seeds)
        lines.append(f"| {r.method} | {r.params_m:.3f} | {_fmt_psnr(r.psnr_db)} "
                     f"| {r.ssim:.4f} | {seeds} |")
    return lines


def emit_report(rows, out_dir, *, grids=(), title: str = "Restoration results",
                notes=(), include_reference: bool = True) -> Path:
    """Write results.md, results.jsonl, and grids/*.png under out_dir.

    rows: MetricRow list (grouped by dataset in the table output)
    grids: SampleGrid list; empty means a table-only report
    """
    if not rows:
        raise ValidationError("report needs at least one metric row")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(stable_json(r.to_dict()) + "\n")

    lines = [f"# {title}", ""]
    fingerprints = sorted({r.fingerprint for r in rows if r.fingerprint})
    if fingerprints:
        lines += ["Config fingerprint: " + ", ".join(fingerprints), ""]
    for note in notes:
        lines += [note, ""]

    by_dataset: dict = {}
    for r in rows:
        by_dataset.setdefault(r.dataset, []).append(r)
    for dataset, dataset_rows in by_dataset.items():
        lines += [f"## Dataset: {dataset}", ""]
        lines += _method_table(dataset_rows)
        lines.append("")

    if include_reference:
        lines += [
            "## Published reference (NOT reproduced here)",
            "",
            "Full-scale Rain100L numbers from the study this pipeline scales",
            "down, kept for column-layout context. This repository's desk-scale",
            "runs are not comparable to them and make no claim to reproduce them.",
            "",
            "| Method | Params (M) | PSNR (dB) | SSIM |",
            "| --- | ---: | ---: | ---: |",
        ]
        for ref in PUBLISHED_REFERENCE:
            lines.append(f"| {ref['method']} | {ref['params_m']:.2f} "
                         f"| {ref['psnr_db']:.2f} | {ref['ssim']:.3f} |")
        lines.append("")

    if grids:
        grid_dir = out / "grids"
        grid_dir.mkdir(exist_ok=True)
        lines += ["## Sample grids", ""]
        for grid in grids:
            grid.validate()
            sheet = contact_sheet(grid.rows)
            path = grid_dir / f"{grid.name}.png"
            save_image(sheet, path)
            lines.append(f"- `grids/{grid.name}.png` (columns: "
                         + " | ".join(grid.labels) + ")")
        lines.append("")

    (out / "results.md").write_text("\n".join(lines), encoding="utf-8")
    return out


def rows_from_ablation(ablation_rows, dataset: str, fingerprint: str = "") -> list:
    """Convert run_ablation dicts into MetricRows for emit_report."""
    out = []
    for r in ablation_rows:
        method = r["variant"]
        if r.get("extra_paper"):
            method += " (extra, beyond the reference matrix)"
        out.append(MetricRow(
            method=method,
            params_m=r["params_m"],
            psnr_db=r["psnr_db"],
            ssim=r["ssim"],
            dataset=dataset,
            seeds=tuple(r.get("seeds", (0,))),
            fingerprint=fingerprint,
            extra={"z0_source": r["z0_source"], "prompt_source": r["prompt_source"]},
        ))
    return out
