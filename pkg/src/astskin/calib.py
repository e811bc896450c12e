"""Calibration protocol: press grid, depth sweeps, dataset assembly and splitting.

The protocol presses each peg at every grid point over the skin's depth
grid, recording ``frames_per_press`` noisy feature frames per press.
Labels (force, peg diameter, location) are noiseless ground truth; noise
enters the features only.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .errors import ConfigError, InputError, ProtocolError, ProvenanceError, SplitError
from .provenance import fingerprint
from .signal import FeatureVector, ToneSet
from .skinsim import (
    DEFAULT_FEATURE_NOISE_SD,
    ContactState,
    Peg,
    SkinSpec,
    sense,
    true_force,
    validate_contact,
)

PROTOCOL_PEGS = (5.0, 7.0, 9.0)

#: point_id used for samples taken away from the calibration grid
OFF_GRID = "—"

#: regression targets, in model order
TARGETS = ("force", "diameter", "loc_x", "loc_y")

_GRID_COORDS = (
    ("A", 10.0, 10.0),
    ("B", 13.0, 10.0),
    ("C", 16.0, 10.0),
    ("D", 16.0, 13.0),
    ("E", 13.0, 13.0),
    ("F", 10.0, 13.0),
    ("G", 16.0, 16.0),
    ("H", 13.0, 16.0),
    ("I", 10.0, 16.0),
)


@dataclass(frozen=True)
class GridPoint:
    label: str
    x: float
    y: float


@dataclass(frozen=True)
class CalibrationGrid:
    """The nine labelled press locations at 3 mm spacing."""

    points: tuple[GridPoint, ...]

    def __post_init__(self) -> None:
        if len(self.points) != 9:
            raise ConfigError(f"calibration grid needs exactly 9 points, got {len(self.points)}")
        labels = [p.label for p in self.points]
        if len(set(labels)) != 9:
            raise ConfigError(f"grid labels must be unique: {labels}")
        for axis in ("x", "y"):
            coords = sorted({getattr(p, axis) for p in self.points})
            gaps = np.diff(coords)
            if len(coords) != 3 or not np.allclose(gaps, 3.0):
                raise ConfigError(f"grid {axis} coordinates must span 3 levels 3 mm apart: {coords}")

    def __iter__(self):
        return iter(self.points)

    def labels(self) -> tuple[str, ...]:
        return tuple(p.label for p in self.points)

    def to_list(self) -> list:
        return [[p.label, p.x, p.y] for p in self.points]

    @classmethod
    def from_list(cls, data: list) -> "CalibrationGrid":
        return cls(points=tuple(GridPoint(str(l), float(x), float(y)) for l, x, y in data))


def calibration_grid() -> CalibrationGrid:
    """The canonical A-I grid."""
    return CalibrationGrid(points=tuple(GridPoint(*p) for p in _GRID_COORDS))


@dataclass(frozen=True)
class ProtocolSpec:
    """Everything that defines one data-collection campaign."""

    grid: CalibrationGrid
    pegs: tuple[float, ...] = PROTOCOL_PEGS
    depths: tuple[float, ...] = ()
    frames_per_press: int = 20
    noise_sd: float = DEFAULT_FEATURE_NOISE_SD
    base_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pegs", tuple(float(p) for p in self.pegs))
        object.__setattr__(self, "depths", tuple(float(d) for d in self.depths))
        if not self.pegs or not self.depths:
            raise ConfigError("protocol needs at least one peg and one depth")
        if any(d <= 0 for d in self.depths) or list(self.depths) != sorted(self.depths):
            raise ConfigError(f"depths must be positive and ascending: {self.depths}")
        if self.frames_per_press < 1:
            raise ConfigError(f"frames_per_press must be >= 1, got {self.frames_per_press}")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_list(),
            "pegs": list(self.pegs),
            "depths": list(self.depths),
            "frames_per_press": self.frames_per_press,
            "noise_sd": self.noise_sd,
            "base_seed": self.base_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolSpec":
        return cls(
            grid=CalibrationGrid.from_list(data["grid"]),
            pegs=tuple(data["pegs"]),
            depths=tuple(data["depths"]),
            frames_per_press=int(data["frames_per_press"]),
            noise_sd=float(data["noise_sd"]),
            base_seed=int(data["base_seed"]),
        )


def default_protocol(
    spec: SkinSpec,
    frames_per_press: int = 20,
    noise_sd: float = DEFAULT_FEATURE_NOISE_SD,
    base_seed: int = 0,
) -> ProtocolSpec:
    """Standard campaign for a skin: A-I grid, 5/7/9 mm pegs, full depth sweep."""
    return ProtocolSpec(
        grid=calibration_grid(),
        pegs=PROTOCOL_PEGS,
        depths=tuple(spec.depth_grid()),
        frames_per_press=frames_per_press,
        noise_sd=noise_sd,
        base_seed=base_seed,
    )


@dataclass(frozen=True)
class LabeledSample:
    """One feature frame with its ground-truth labels and provenance."""

    features: FeatureVector
    force: float
    diameter: float
    x: float
    y: float
    point_id: str
    peg_mm: float
    depth_mm: float
    trial: int
    skin: str


@dataclass(frozen=True)
class Dataset:
    """All samples of one campaign plus the provenance to regenerate them."""

    samples: tuple[LabeledSample, ...]
    spec: SkinSpec
    protocol: ProtocolSpec
    tones: ToneSet
    fingerprint: str
    seed: int

    def __len__(self) -> int:
        return len(self.samples)


def dataset_fingerprint(spec: SkinSpec, protocol: ProtocolSpec, tones: ToneSet) -> str:
    return fingerprint(
        {"skin": spec.to_dict(), "protocol": protocol.to_dict(), "tones": tones.to_dict()}
    )


def skin_label(spec: SkinSpec) -> str:
    return "single" if spec.layer_count == 1 else "bilayer"


def generate_dataset(spec: SkinSpec, protocol: ProtocolSpec, tones: ToneSet) -> Dataset:
    """Run the full press campaign and collect labelled samples.

    Sample order is point x peg x depth x trial; each sample's noise stream
    is seeded by (base_seed, sample index) so regeneration is exact and
    order-independent.
    """
    for depth in protocol.depths:
        if depth > spec.max_depth + 1e-12:
            raise ConfigError(
                f"protocol depth {depth} mm exceeds skin max_depth {spec.max_depth} mm"
            )
    for point in protocol.grid:
        for peg_mm in protocol.pegs:
            try:
                validate_contact(spec, ContactState(point.x, point.y, 0.0, Peg(peg_mm)))
            except Exception as exc:
                raise ProtocolError(
                    f"point {point.label} with peg {peg_mm} mm does not fit the skin: {exc}"
                ) from exc

    label = skin_label(spec)
    samples = []
    index = 0
    for point in protocol.grid:
        for peg_mm in protocol.pegs:
            peg = Peg(peg_mm)
            for depth in protocol.depths:
                contact = ContactState(point.x, point.y, depth, peg)
                force = true_force(spec, contact)
                for trial in range(protocol.frames_per_press):
                    features = sense(
                        spec,
                        contact,
                        tones,
                        noise_sd=protocol.noise_sd,
                        rng_seed=(protocol.base_seed, index),
                    )
                    samples.append(
                        LabeledSample(
                            features=features,
                            force=force,
                            diameter=peg_mm,
                            x=point.x,
                            y=point.y,
                            point_id=point.label,
                            peg_mm=peg_mm,
                            depth_mm=depth,
                            trial=trial,
                            skin=label,
                        )
                    )
                    index += 1
    return Dataset(
        samples=tuple(samples),
        spec=spec,
        protocol=protocol,
        tones=tones,
        fingerprint=dataset_fingerprint(spec, protocol, tones),
        seed=protocol.base_seed,
    )


def split(
    dataset: Dataset, seed: int
) -> tuple[list[LabeledSample], list[LabeledSample], list[LabeledSample]]:
    """Shuffle and partition into (train, validation, test).

    10 % of all samples are held out for test; of the remaining 90 %, a
    quarter goes to validation (67.5 / 22.5 / 10 overall).  Sizes follow
    test = round(0.1 n), validation = round(0.225 n).
    """
    n = len(dataset)
    if n < 10:
        raise SplitError(f"need at least 10 samples to split, got {n}")
    n_test = round(0.1 * n)
    n_val = round(0.225 * n)
    perm = np.random.default_rng(seed).permutation(n)
    test = [dataset.samples[i] for i in perm[:n_test]]
    val = [dataset.samples[i] for i in perm[n_test : n_test + n_val]]
    train = [dataset.samples[i] for i in perm[n_test + n_val :]]
    return train, val, test


def design_matrix(samples: list[LabeledSample]) -> npt.NDArray[np.float64]:
    """Stack feature vectors into an (n, d) array."""
    return np.stack([s.features.magnitudes for s in samples])


def target_vector(samples: list[LabeledSample], name: str) -> npt.NDArray[np.float64]:
    """Ground-truth column for one regression target."""
    getter = {
        "force": lambda s: s.force,
        "diameter": lambda s: s.diameter,
        "loc_x": lambda s: s.x,
        "loc_y": lambda s: s.y,
    }
    if name not in getter:
        raise InputError(f"unknown target {name!r}, expected one of {TARGETS}")
    return np.array([getter[name](s) for s in samples])


def _magnitude_columns(tones: ToneSet, layer_count: int) -> list[str]:
    return [
        f"m{int(round(f))}_l{layer}"
        for layer in range(1, layer_count + 1)
        for f in tones.frequencies
    ]


def meta_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".meta.json")


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the sample table as CSV plus a ``.meta.json`` provenance sidecar."""
    path = Path(path)
    cols = _magnitude_columns(dataset.tones, dataset.spec.layer_count)
    header = [
        "skin",
        "layer_count",
        "point_id",
        "x_mm",
        "y_mm",
        "peg_mm",
        "depth_mm",
        "trial",
        "force_n",
        *cols,
    ]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in dataset.samples:
            writer.writerow(
                [
                    s.skin,
                    dataset.spec.layer_count,
                    s.point_id,
                    f"{s.x:.9g}",
                    f"{s.y:.9g}",
                    f"{s.peg_mm:.9g}",
                    f"{s.depth_mm:.9g}",
                    s.trial,
                    f"{s.force:.9g}",
                    *(f"{m:.9g}" for m in s.features.magnitudes),
                ]
            )
    meta = {
        "skin": dataset.spec.to_dict(),
        "protocol": dataset.protocol.to_dict(),
        "tones": dataset.tones.to_dict(),
        "seed": dataset.seed,
        "fingerprint": dataset.fingerprint,
    }
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset CSV with its sidecar; verifies the stored fingerprint."""
    path = Path(path)
    sidecar = meta_path(path)
    if not sidecar.exists():
        raise InputError(f"missing dataset sidecar {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    spec = SkinSpec.from_dict(meta["skin"])
    protocol = ProtocolSpec.from_dict(meta["protocol"])
    tones = ToneSet.from_dict(meta["tones"])
    expected_fp = dataset_fingerprint(spec, protocol, tones)
    if meta["fingerprint"] != expected_fp:
        raise ProvenanceError(
            f"{sidecar}: stored fingerprint does not match its configuration"
        )

    cols = _magnitude_columns(tones, spec.layer_count)
    samples = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected_header = [
            "skin",
            "layer_count",
            "point_id",
            "x_mm",
            "y_mm",
            "peg_mm",
            "depth_mm",
            "trial",
            "force_n",
            *cols,
        ]
        if reader.fieldnames != expected_header:
            raise InputError(f"{path}: unexpected CSV header {reader.fieldnames}")
        for row in reader:
            mags = np.array([float(row[c]) for c in cols])
            samples.append(
                LabeledSample(
                    features=FeatureVector(magnitudes=mags, layer_count=spec.layer_count),
                    force=float(row["force_n"]),
                    diameter=float(row["peg_mm"]),
                    x=float(row["x_mm"]),
                    y=float(row["y_mm"]),
                    point_id=row["point_id"],
                    peg_mm=float(row["peg_mm"]),
                    depth_mm=float(row["depth_mm"]),
                    trial=int(row["trial"]),
                    skin=row["skin"],
                )
            )
    return Dataset(
        samples=tuple(samples),
        spec=spec,
        protocol=protocol,
        tones=tones,
        fingerprint=meta["fingerprint"],
        seed=int(meta["seed"]),
    )
