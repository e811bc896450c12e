"""MAE evaluation: calibration-set reports and the real-time press protocol.

Two report shapes share one row type: the calibration report is a single
group covering the whole held-out test set, the real-time report has one
group per (test point, peg).  Absolute-error statistics use the
population standard deviation so repeated runs reproduce exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .calib import Dataset, LabeledSample, design_matrix, skin_label, split, target_vector
from .errors import InputError, ProtocolError, ProvenanceError
from .gpr import BUNDLE_TARGETS, ModelBundle, predict, predict_mean
from .signal import FeatureVector
from .skinsim import ContactState, Peg, SkinSpec, invert_force, sense, true_force, validate_contact

#: real-time protocol: two calibrated and two non-calibrated press points
REALTIME_POINTS = (
    ("D", 16.0, 13.0),
    ("F", 10.0, 13.0),
    ("J", 13.0, 14.0),
    ("K", 10.0, 12.0),
)

REALTIME_FORCE_N = 3.0
REALTIME_TRIALS = 15

_REPORT_COLUMNS = (
    "skin",
    "point_id",
    "x_mm",
    "y_mm",
    "peg_mm",
    "mae_force_n",
    "mae_dia_mm",
    "mae_locx_mm",
    "mae_locy_mm",
    "stdev_force_n",
    "stdev_dia_mm",
    "stdev_locx_mm",
    "stdev_locy_mm",
    "trials",
)


@dataclass(frozen=True)
class TactileEstimate:
    """One four-feature prediction with per-feature uncertainty."""

    force: float
    diameter: float
    x: float
    y: float
    sd_force: float
    sd_diameter: float
    sd_x: float
    sd_y: float

    def __post_init__(self) -> None:
        vals = (self.force, self.diameter, self.x, self.y)
        sds = (self.sd_force, self.sd_diameter, self.sd_x, self.sd_y)
        if not all(math.isfinite(v) for v in vals + sds):
            raise InputError("estimate fields must be finite")
        if any(s < 0 for s in sds):
            raise InputError("estimate standard deviations must be non-negative")


@dataclass(frozen=True)
class ReportRow:
    """Per-group absolute-error statistics for the four responses."""

    skin: str
    point_id: str
    x: float | None
    y: float | None
    peg_mm: float | None
    trials: int
    mae: dict[str, float]
    stdev: dict[str, float]


@dataclass(frozen=True)
class EvalReport:
    mode: str
    rows: tuple[ReportRow, ...]


def mae(pairs) -> tuple[float, float]:
    """Mean and population standard deviation of absolute errors.

    ``pairs`` is an iterable of (prediction, truth).
    """
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.size == 0:
        raise InputError("mae needs at least one (prediction, truth) pair")
    err = np.abs(arr[:, 0] - arr[:, 1])
    return float(err.mean()), float(err.std())


def estimate(bundle: ModelBundle, features: FeatureVector) -> TactileEstimate:
    """Predict all four tactile features from one feature vector."""
    x = features.magnitudes
    out = {}
    for name in BUNDLE_TARGETS:
        mean, sd = predict(bundle.models[name], x)
        out[name] = (mean, sd)
    return TactileEstimate(
        force=out["force"][0],
        diameter=out["diameter"][0],
        x=out["loc_x"][0],
        y=out["loc_y"][0],
        sd_force=out["force"][1],
        sd_diameter=out["diameter"][1],
        sd_x=out["loc_x"][1],
        sd_y=out["loc_y"][1],
    )


def response_errors(
    bundle: ModelBundle, samples: list[LabeledSample]
) -> dict[str, tuple[float, float]]:
    """Per-response (MAE, STDEV) of the bundle's predictions on samples."""
    if not samples:
        raise InputError("no samples to evaluate")
    feats = design_matrix(samples)
    stats = {}
    for name in BUNDLE_TARGETS:
        pred = predict_mean(bundle.models[name], feats)
        truth = target_vector(samples, name)
        stats[name] = mae(zip(pred, truth))
    return stats


def calibration_report(bundle: ModelBundle, dataset: Dataset) -> EvalReport:
    """Evaluate on the dataset's held-out test part, re-derived from metadata.

    The dataset must be the one the bundle was trained from; its test part
    is reconstructed with the bundle's recorded split seed, which keeps it
    disjoint from training by construction.
    """
    if dataset.fingerprint != bundle.dataset_fingerprint:
        raise ProvenanceError(
            "bundle was trained on a different dataset "
            f"(fingerprint {bundle.dataset_fingerprint[:12]}... vs {dataset.fingerprint[:12]}...)"
        )
    _, _, test = split(dataset, bundle.split_seed)
    stats = response_errors(bundle, test)
    row = ReportRow(
        skin=skin_label(dataset.spec),
        point_id="all",
        x=None,
        y=None,
        peg_mm=None,
        trials=len(test),
        mae={k: v[0] for k, v in stats.items()},
        stdev={k: v[1] for k, v in stats.items()},
    )
    return EvalReport(mode="calibration", rows=(row,))


def realtime_protocol(
    bundle: ModelBundle,
    spec: SkinSpec,
    points=REALTIME_POINTS,
    force: float = REALTIME_FORCE_N,
    trials: int = REALTIME_TRIALS,
    seed: int = 0,
    pegs: tuple[float, ...] = (5.0, 7.0, 9.0),
) -> EvalReport:
    """Press each test point with each peg at a fixed commanded force.

    Every press runs ``trials`` fresh noisy frames through the bundle;
    errors are taken against the ground-truth force, peg diameter and
    location.  Per-trial noise streams derive from
    (seed, point index, peg index, trial).
    """
    if trials < 1:
        raise ProtocolError(f"trials must be >= 1, got {trials}")
    label = skin_label(spec)
    for peg_mm in pegs:
        try:
            invert_force(spec, Peg(peg_mm), force)
        except Exception as exc:
            raise ProtocolError(
                f"commanded force {force} N is infeasible for the {peg_mm} mm peg "
                f"on the {label} skin: {exc}"
            ) from exc
    for point_label, x, y in points:
        for peg_mm in pegs:
            try:
                validate_contact(spec, ContactState(x, y, 0.0, Peg(peg_mm)))
            except Exception as exc:
                raise ProtocolError(
                    f"point {point_label} with peg {peg_mm} mm does not fit the skin: {exc}"
                ) from exc

    rows = []
    for p_idx, (point_label, x, y) in enumerate(points):
        for g_idx, peg_mm in enumerate(pegs):
            peg = Peg(peg_mm)
            depth = invert_force(spec, peg, force)
            contact = ContactState(x, y, depth, peg)
            truth = {
                "force": true_force(spec, contact),
                "diameter": peg_mm,
                "loc_x": x,
                "loc_y": y,
            }
            feats = np.stack(
                [
                    sense(
                        spec,
                        contact,
                        bundle.tones,
                        noise_sd=bundle.noise_sd,
                        rng_seed=(seed, p_idx, g_idx, t),
                    ).magnitudes
                    for t in range(trials)
                ]
            )
            mae_row, sd_row = {}, {}
            for name in BUNDLE_TARGETS:
                pred = predict_mean(bundle.models[name], feats)
                mae_row[name], sd_row[name] = mae((p, truth[name]) for p in pred)
            rows.append(
                ReportRow(
                    skin=label,
                    point_id=point_label,
                    x=x,
                    y=y,
                    peg_mm=peg_mm,
                    trials=trials,
                    mae=mae_row,
                    stdev=sd_row,
                )
            )
    return EvalReport(mode="realtime", rows=tuple(rows))


def _row_cells(row: ReportRow, fmt) -> list[str]:
    return [
        row.skin,
        row.point_id,
        fmt(row.x),
        fmt(row.y),
        fmt(row.peg_mm),
        fmt(row.mae["force"]),
        fmt(row.mae["diameter"]),
        fmt(row.mae["loc_x"]),
        fmt(row.mae["loc_y"]),
        fmt(row.stdev["force"]),
        fmt(row.stdev["diameter"]),
        fmt(row.stdev["loc_x"]),
        fmt(row.stdev["loc_y"]),
        str(row.trials),
    ]


def emit_report(report: EvalReport, format: str = "csv", path: str | Path = "report.csv") -> int:
    """Write the report table, rows ordered by (point, peg) ascending.

    Returns the number of data rows written; 0 means a header-only file
    (callers should surface a warning).  Markdown carries the same numbers
    rounded to 3 decimals.
    """
    if format not in ("csv", "markdown"):
        raise InputError(f"format must be 'csv' or 'markdown', got {format!r}")
    rows = sorted(report.rows, key=lambda r: (r.point_id, r.peg_mm if r.peg_mm else 0.0))
    path = Path(path)
    if format == "csv":
        fmt = lambda v: "" if v is None else f"{v:.9g}"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_REPORT_COLUMNS)
            for row in rows:
                writer.writerow(_row_cells(row, fmt))
    else:
        fmt = lambda v: "" if v is None else f"{v:.3f}"
        lines = [
            "| " + " | ".join(_REPORT_COLUMNS) + " |",
            "|" + "|".join(["---"] * len(_REPORT_COLUMNS)) + "|",
        ]
        for row in rows:
            lines.append("| " + " | ".join(_row_cells(row, fmt)) + " |")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(rows)
