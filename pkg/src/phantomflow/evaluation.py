"""IoU scoring of label volumes against references.

"Overall" is the per-slice mean IoU over the foreground classes (peripheral,
central, resection), averaged over slices. Two empty masks score 1.0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyStack
from .volume import CENTRAL, CLASS_NAMES, PERIPHERAL, RESECTION, LabelVolume

FOREGROUND = (PERIPHERAL, CENTRAL, RESECTION)
OVERALL_DEFINITION = "per-slice mean over foreground classes {peripheral, central, resection}"


def iou(a, b) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


@dataclass(frozen=True)
class IouStat:
    mean: float
    std: float
    values: tuple = ()

    def format(self, digits: int = 2) -> str:
        return f"{self.mean:.{digits}f} ± {self.std:.{digits}f}"


def _stat(values) -> IouStat:
    v = np.asarray(values, dtype=float)
    return IouStat(float(v.mean()), float(v.std()) if v.size > 1 else 0.0, tuple(v.tolist()))


@dataclass(frozen=True)
class IouReport:
    """Per-class and overall IoU statistics.

    ``per_class`` maps class code to statistics over slices (or over stacks
    for a dataset-level report); ``overall`` is defined by
    :data:`OVERALL_DEFINITION`. ``level`` is ``"slice"`` or ``"dataset"``.
    """
    per_class: dict
    overall: IouStat
    level: str = "slice"
    n: int = 0
    metadata: dict = field(default_factory=dict)

    def as_table(self, label: str = "classical", digits: int = 2) -> str:
        cols = ("Overall", "Central", "Peripheral")
        cells = (self.overall, self.per_class[CENTRAL], self.per_class[PERIPHERAL])
        rows = [[label] + [c.format(digits) for c in cells]]
        return render_table(cols, rows)

    def as_keyvalue(self) -> str:
        lines = [f"level={self.level}", f"n={self.n}",
                 f"overall.mean={self.overall.mean:.12g}", f"overall.std={self.overall.std:.12g}"]
        for cls in sorted(self.per_class):
            s = self.per_class[cls]
            lines += [f"{CLASS_NAMES[cls]}.mean={s.mean:.12g}", f"{CLASS_NAMES[cls]}.std={s.std:.12g}"]
        lines.append(f"overall.definition={OVERALL_DEFINITION}")
        for k in sorted(self.metadata):
            lines.append(f"meta.{k}={self.metadata[k]}")
        return "\n".join(lines) + "\n"


def render_table(columns, rows) -> str:
    """Plain-text table with a label column followed by ``columns``."""
    header = ["Method"] + list(columns)
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header).rstrip(), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*r).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def per_slice_iou(pred, ref, cls: int) -> np.ndarray:
    """IoU of class ``cls`` for every slice of two (N, H, W) label arrays."""
    p = np.asarray(pred) == cls
    r = np.asarray(ref) == cls
    inter = np.count_nonzero(p & r, axis=(1, 2))
    union = np.count_nonzero(p | r, axis=(1, 2))
    out = np.ones(len(p), dtype=float)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def _labels(v):
    return v.labels if isinstance(v, LabelVolume) else np.asarray(v)


def stack_iou_stats(pred, ref, classes=FOREGROUND) -> IouReport:
    """Slice-level IoU statistics of ``pred`` against ``ref``."""
    if isinstance(pred, LabelVolume) and isinstance(ref, LabelVolume):
        if pred.manifest.shape != ref.manifest.shape:
            raise DimensionMismatch(f"manifests differ: {pred.manifest.shape} vs {ref.manifest.shape}")
    p, r = _labels(pred), _labels(ref)
    if p.shape != r.shape:
        raise DimensionMismatch(f"label shapes differ: {p.shape} vs {r.shape}")
    if p.ndim != 3 or p.shape[0] == 0:
        raise EmptyStack("label volume has no slices")
    classes = tuple(classes)
    per = {c: per_slice_iou(p, r, c) for c in set(classes) | set(FOREGROUND)}
    overall = np.mean([per[c] for c in FOREGROUND], axis=0)
    return IouReport({c: _stat(per[c]) for c in classes}, _stat(overall), "slice", len(p),
                     {"std_over": "slices"})


def dataset_iou_stats(reports) -> IouReport:
    """Combine per-stack reports: mean and std of the per-stack means."""
    reports = list(reports)
    if not reports:
        raise EmptyStack("no stacks to aggregate")
    classes = reports[0].per_class.keys()
    per = {c: _stat([rep.per_class[c].mean for rep in reports]) for c in classes}
    overall = _stat([rep.overall.mean for rep in reports])
    return IouReport(per, overall, "dataset", len(reports), {"std_over": "stacks"})
