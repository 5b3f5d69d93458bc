"""Segmentation evaluation: per-class IOU, mIOU and F1, pooled per site.

Shipwreck is the positive class. Counts are pooled (summed) within a site
before metrics are computed, then sites are macro-averaged with equal weight
regardless of how many images each contains.

Degenerate 0/0 ratios resolve to 1.0 when the class is absent from both
prediction and ground truth (nothing to get wrong) and fall out as 0.0
naturally when only one side contains the class.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class SiteMetrics:
    site: str
    iou_ship: float
    iou_terrain: float
    miou: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    sites: tuple[SiteMetrics, ...]
    macro_iou_ship: float | None
    macro_iou_terrain: float | None
    macro_miou: float | None
    macro_f1: float | None

    @property
    def site_count(self) -> int:
        return len(self.sites)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Pixel counts with shipwreck (1) positive; inputs must be binary."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if np.any((arr != 0) & (arr != 1)):
            raise ValueError(f"{name} mask must be binary 0/1")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def _ratio(num: int, den: int) -> float:
    if den == 0:
        return 1.0  # class absent everywhere
    return num / den


def metrics(counts: ConfusionCounts) -> dict[str, float]:
    iou_ship = _ratio(counts.tp, counts.tp + counts.fp + counts.fn)
    iou_terr = _ratio(counts.tn, counts.tn + counts.fp + counts.fn)
    f1 = _ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn)
    return {
        "iou_ship": iou_ship,
        "iou_terrain": iou_terr,
        "miou": 0.5 * (iou_ship + iou_terr),
        "f1": f1,
    }


def aggregate_by_site(per_image: list[tuple[str, ConfusionCounts]]) -> EvalReport:
    """Pool counts within each site, compute metrics per site, macro-average.

    Site order in the report is sorted by site id for stable output.
    """
    pooled: dict[str, ConfusionCounts] = {}
    for site, counts in per_image:
        if site is None or site == "":
            raise ValueError("every image needs a site id")
        pooled[site] = pooled.get(site, ConfusionCounts()) + counts
    sites = []
    for site in sorted(pooled):
        m = metrics(pooled[site])
        sites.append(
            SiteMetrics(
                site=site,
                iou_ship=m["iou_ship"],
                iou_terrain=m["iou_terrain"],
                miou=m["miou"],
                f1=m["f1"],
            )
        )
    if sites:
        macro = {
            key: float(np.mean([getattr(s, key) for s in sites]))
            for key in ("iou_ship", "iou_terrain", "miou", "f1")
        }
    else:
        macro = {key: None for key in ("iou_ship", "iou_terrain", "miou", "f1")}
    return EvalReport(
        sites=tuple(sites),
        macro_iou_ship=macro["iou_ship"],
        macro_iou_terrain=macro["iou_terrain"],
        macro_miou=macro["miou"],
        macro_f1=macro["f1"],
    )


_COLUMNS = ("iou_ship", "iou_terrain", "miou", "f1")
_HEADERS = ("IOU_ship", "IOU_terr", "mIOU", "F1")


def emit_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Render one row per site plus a macro row; csv keeps full precision,
    markdown rounds to 2 decimals."""
    if fmt == "csv":
        buf = io.StringIO()
        buf.write("site," + ",".join(_HEADERS) + "\n")
        for s in report.sites:
            buf.write(s.site + "," + ",".join(repr(getattr(s, c)) for c in _COLUMNS) + "\n")
        macro = [report.macro_iou_ship, report.macro_iou_terrain, report.macro_miou, report.macro_f1]
        buf.write("macro," + ",".join("n/a" if v is None else repr(v) for v in macro) + "\n")
        return buf.getvalue()
    if fmt == "markdown":
        lines = [
            "| site | " + " | ".join(_HEADERS) + " |",
            "|" + "---|" * (len(_HEADERS) + 1),
        ]
        for s in report.sites:
            cells = " | ".join(f"{getattr(s, c):.2f}" for c in _COLUMNS)
            lines.append(f"| {s.site} | {cells} |")
        macro = [report.macro_iou_ship, report.macro_iou_terrain, report.macro_miou, report.macro_f1]
        cells = " | ".join("n/a" if v is None else f"{v:.2f}" for v in macro)
        lines.append(f"| macro | {cells} |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format '{fmt}' (use csv or markdown)")
