"""Point-of-gaze error metrics and report tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from gazerefine.errors import EmptyBatchError
from gazerefine.geometry import ScreenGeometry, pog_angular_error


def pog_errors(pred_cm, true_cm, origins, screen=None):
    """Per-sample errors for PoG arrays (..., 2) in cm.

    ``origins`` are the two eye origins (..., 2, 3); angular error is taken
    at their midpoint.  The px error scales each cm axis by the screen's
    pixel density before the Euclidean norm.  Returns (deg, cm, px).
    """
    screen = screen or ScreenGeometry()
    pred = np.asarray(pred_cm, dtype=np.float64)
    true = np.asarray(true_cm, dtype=np.float64)
    diff = pred - true
    cm = np.linalg.norm(diff, axis=-1)
    px = np.linalg.norm(diff * screen.px_per_cm, axis=-1)
    centre = np.asarray(origins, dtype=np.float64).mean(axis=-2)
    centre = np.broadcast_to(centre, pred.shape[:-1] + (3,))
    deg = pog_angular_error(pred, true, centre, screen)
    return deg, cm, px


def improvement(base, new):
    """Relative improvement in percent: ``(base - new) / base * 100``."""
    return (base - new) / base * 100.0


@dataclass
class MetricRow:
    name: str
    angular_deg: float
    cm: float
    px: float
    n: int
    group: dict = field(default_factory=dict)


@dataclass
class MetricReport:
    """Aggregate and per-group validity-masked means of the three errors."""

    overall: MetricRow
    groups: list
    per_sequence: list

    def as_dict(self):
        return {"angular_deg": self.overall.angular_deg, "cm": self.overall.cm, "px": self.overall.px,
                "n": self.overall.n}


def _row(name, deg, cm, px, mask, group=None):
    return MetricRow(name, float(deg[mask].mean()), float(cm[mask].mean()), float(px[mask].mean()),
                     int(mask.sum()), group or {})


def evaluate_estimates(pred_cm, split, screen=None, group_by=("kind",)):
    """Score PoG estimates (S, T, 2) cm against a split's labels."""
    valid = np.asarray(split.validity, dtype=bool) & np.all(np.isfinite(pred_cm), axis=-1)
    if not valid.any():
        raise EmptyBatchError("no valid samples to evaluate")
    true = np.where(valid[..., None], np.nan_to_num(split.pog_cm), 0.0)
    pred = np.where(valid[..., None], np.nan_to_num(pred_cm), 0.0)
    deg, cm, px = pog_errors(pred, true, split.origins[:, None], screen)
    overall = _row("all", deg, cm, px, valid)
    groups = []
    for key in group_by:
        values = np.asarray(split.kinds if key == "kind" else split.observers)
        for v in sorted(set(values.tolist())):
            sel = valid & (values == v)[:, None]
            if sel.any():
                groups.append(_row(f"{key}={v}", deg, cm, px, sel, {key: v}))
    per_seq = []
    for i, name in enumerate(split.names):
        if valid[i].any():
            per_seq.append(_row(name, deg[i], cm[i], px[i], valid[i],
                                {"kind": str(split.kinds[i]), "observer": str(split.observers[i])}))
    return MetricReport(overall, groups, per_seq)


def table_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def key_values(d):
    return "".join(f"{k} = {v}\n" for k, v in d.items())
