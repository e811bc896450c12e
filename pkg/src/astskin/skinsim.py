"""Phenomenological ground-truth model of the acoustic skin.

A serpentine channel per layer carries the reference tones.  Pressing a
flat circular peg into the skin constricts the channel wherever the
indentation field overlaps it; the accumulated cross-section loss and
its position along the channel drive per-tone transmission gains.  A
power-law contact model maps indentation depth to normal force, pinned
to the measured endpoint forces of the 5/7/9 mm pegs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache
from pathlib import Path as FsPath

import numpy as np
import numpy.typing as npt

from .errors import ConfigError, DomainError
from .signal import DEFAULT_FREQUENCIES, FeatureVector, ToneSet

# Frequency at which the attenuation coefficient equals its base value.
KAPPA_REF_HZ = 300.0

# Millimetres per metre; channel coordinates are mm, effective speed is m/s.
_MM = 1e-3

DEFAULT_FEATURE_NOISE_SD = 0.005


@dataclass(frozen=True)
class SkinSpec:
    """Geometry and model constants of a single- or bi-layer skin.

    ``max_depth`` and ``depth_step`` derive from ``layer_count`` when left
    unset: a single layer allows 3 mm of travel probed in 0.5 mm steps, the
    bi-layer stack 6 mm in 1 mm steps.
    """

    layer_count: int = 1
    side: float = 25.0
    channel_diameter: float = 3.0
    runs_per_layer: int = 3
    run_offsets: tuple[float, ...] = (5.0, 12.5, 20.0)
    layer_depth_capacity: float = 3.0
    max_depth: float | None = None
    depth_step: float | None = None
    force_exponent: float = 1.2
    attenuation: float = 0.8
    frequency_exponent: float = 0.5
    resonance_strength: float = 0.4
    effective_speed: float = 34.3
    decay_length: float = 2.0
    path_step: float = 0.25
    load_spread: float = 4.0
    min_open_ratio: float = 0.02

    def __post_init__(self) -> None:
        if self.layer_count not in (1, 2):
            raise ConfigError(f"layer_count must be 1 or 2, got {self.layer_count}")
        if self.max_depth is None:
            object.__setattr__(self, "max_depth", self.layer_count * self.layer_depth_capacity)
        if self.depth_step is None:
            object.__setattr__(self, "depth_step", 0.5 if self.layer_count == 1 else 1.0)
        object.__setattr__(self, "run_offsets", tuple(float(v) for v in self.run_offsets))

        if self.side <= 0 or self.channel_diameter <= 0 or self.layer_depth_capacity <= 0:
            raise ConfigError("side, channel_diameter and layer_depth_capacity must be positive")
        if abs(self.max_depth - self.layer_count * self.layer_depth_capacity) > 1e-12:
            raise ConfigError(
                f"max_depth {self.max_depth} != layer_count x layer_depth_capacity "
                f"({self.layer_count} x {self.layer_depth_capacity})"
            )
        if not 0 < self.depth_step <= self.max_depth:
            raise ConfigError(f"depth_step {self.depth_step} outside (0, {self.max_depth}]")
        if self.runs_per_layer != len(self.run_offsets):
            raise ConfigError(
                f"runs_per_layer {self.runs_per_layer} != {len(self.run_offsets)} run offsets"
            )
        lo, hi = self.channel_diameter / 2, self.side - self.channel_diameter / 2
        prev = lo
        for y in self.run_offsets:
            if not prev < y < hi:
                raise ConfigError(
                    f"run offsets must be strictly increasing within ({lo}, {hi}): {self.run_offsets}"
                )
            prev = y
        if not 0 < self.min_open_ratio < 1:
            raise ConfigError(f"min_open_ratio must lie in (0, 1), got {self.min_open_ratio}")
        if self.path_step <= 0:
            raise ConfigError(f"path_step must be positive, got {self.path_step}")
        if self.force_exponent <= 0:
            raise ConfigError(f"force_exponent must be positive, got {self.force_exponent}")
        if not 0 <= self.resonance_strength < 1:
            raise ConfigError(
                f"resonance_strength must lie in [0, 1), got {self.resonance_strength}"
            )
        if self.attenuation <= 0 or self.effective_speed <= 0:
            raise ConfigError("attenuation and effective_speed must be positive")
        if self.decay_length < 0 or self.load_spread < 0:
            raise ConfigError("decay_length and load_spread must be non-negative")

    def depth_grid(self) -> npt.NDArray[np.float64]:
        """Protocol press depths: depth_step, 2*depth_step, ... up to max_depth."""
        steps = int(round(self.max_depth / self.depth_step))
        return self.depth_step * np.arange(1, steps + 1)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SkinSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown skin spec keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "run_offsets" in kwargs:
            kwargs["run_offsets"] = tuple(kwargs["run_offsets"])
        if "layer_count" in kwargs:
            kwargs["layer_count"] = int(kwargs["layer_count"])
        if "runs_per_layer" in kwargs:
            kwargs["runs_per_layer"] = int(kwargs["runs_per_layer"])
        return cls(**kwargs)


def single_layer_spec() -> SkinSpec:
    """Preset: 25 mm single-layer skin, 3 mm travel in 0.5 mm steps."""
    return SkinSpec(layer_count=1)


def bilayer_spec() -> SkinSpec:
    """Preset: two orthogonally sandwiched layers, 6 mm travel in 1 mm steps."""
    return SkinSpec(layer_count=2)


SKIN_PRESETS = {"single": single_layer_spec, "bilayer": bilayer_spec}


def save_spec(spec: SkinSpec, path: str | FsPath) -> None:
    """Write a skin spec as editable ``key = value`` lines."""
    lines = []
    for key, value in spec.to_dict().items():
        if isinstance(value, list):
            value = ", ".join(repr(float(v)) for v in value)
        lines.append(f"{key} = {value}")
    FsPath(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_spec(path: str | FsPath) -> SkinSpec:
    """Parse a ``key = value`` skin spec file (``#`` starts a comment)."""
    data: dict = {}
    for lineno, raw in enumerate(FsPath(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "run_offsets":
            data[key] = tuple(float(v) for v in value.split(","))
        elif key in ("layer_count", "runs_per_layer"):
            data[key] = int(value)
        else:
            try:
                data[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad numeric value {value!r}") from exc
    return SkinSpec.from_dict(data)


@dataclass(frozen=True)
class Peg:
    """Rigid flat-bottomed circular indenter."""

    diameter: float

    def __post_init__(self) -> None:
        if not self.diameter > 0:
            raise DomainError(f"peg diameter must be positive, got {self.diameter}")


@dataclass(frozen=True)
class ContactState:
    """A press: centre location, indentation depth and the peg used."""

    x: float
    y: float
    depth: float
    peg: Peg

    def __post_init__(self) -> None:
        for v in (self.x, self.y, self.depth):
            if not math.isfinite(v):
                raise DomainError("contact coordinates and depth must be finite")


@dataclass(frozen=True)
class ChannelPath:
    """One layer's serpentine channel, sampled at ``path_step`` arclength."""

    layer_index: int
    polyline: npt.NDArray[np.float64]
    arclength: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        self.polyline.setflags(write=False)
        self.arclength.setflags(write=False)

    @property
    def length(self) -> float:
        return float(self.arclength[-1])


def validate_contact(spec: SkinSpec, contact: ContactState) -> None:
    """Raise DomainError unless depth and the full peg footprint fit the skin."""
    if not 0 <= contact.depth <= spec.max_depth:
        raise DomainError(
            f"depth {contact.depth} mm outside [0, {spec.max_depth}] mm"
        )
    r = contact.peg.diameter / 2
    if not (r <= contact.x <= spec.side - r and r <= contact.y <= spec.side - r):
        raise DomainError(
            f"peg footprint (d={contact.peg.diameter} mm at {contact.x}, {contact.y}) "
            f"leaves the {spec.side} mm sensing square"
        )


@lru_cache(maxsize=16)
def channel_layout(spec: SkinSpec) -> tuple[ChannelPath, ...]:
    """Build the serpentine channel path of each layer.

    Layer 1 runs parallel to X at the configured offsets, traversed
    boustrophedon with connectors along the skin edges.  Layer 2 (bi-layer
    only) is the same path with x and y swapped, matching two orthogonally
    sandwiched single layers.
    """
    corners = []
    for i, y in enumerate(spec.run_offsets):
        ends = (0.0, spec.side) if i % 2 == 0 else (spec.side, 0.0)
        corners.append((ends[0], y))
        corners.append((ends[1], y))
    corners_arr = np.array(corners)
    seg = np.diff(corners_arr, axis=0)
    corner_s = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    total = corner_s[-1]
    s = spec.path_step * np.arange(math.floor(total / spec.path_step + 1e-9) + 1)
    poly1 = np.column_stack(
        [np.interp(s, corner_s, corners_arr[:, 0]), np.interp(s, corner_s, corners_arr[:, 1])]
    )
    paths = [ChannelPath(layer_index=1, polyline=poly1, arclength=s.copy())]
    if spec.layer_count == 2:
        paths.append(ChannelPath(layer_index=2, polyline=poly1[:, ::-1].copy(), arclength=s.copy()))
    return tuple(paths)


def layer_compressions(spec: SkinSpec, contact: ContactState) -> npt.NDArray[np.float64]:
    """Split the peg travel across layers (equal-compliance series stack)."""
    validate_contact(spec, contact)
    per_layer = contact.depth / spec.layer_count
    return np.full(spec.layer_count, per_layer)


def constriction(
    spec: SkinSpec, path: ChannelPath, contact: ContactState
) -> tuple[float, float]:
    """Accumulated cross-section loss C (mm) and its arclength centroid (mm).

    The indentation field equals the layer compression inside the effective
    footprint, decays linearly to zero over ``decay_length`` beyond its edge,
    and shrinks the channel's open-area ratio down to ``min_open_ratio``.
    The lower layer of a bi-layer stack sees the footprint widened by
    ``load_spread``.
    """
    c = layer_compressions(spec, contact)[path.layer_index - 1]
    if c == 0:
        return 0.0, 0.0
    d_eff = contact.peg.diameter + (spec.load_spread if path.layer_index == 2 else 0.0)
    r = np.hypot(path.polyline[:, 0] - contact.x, path.polyline[:, 1] - contact.y)
    if spec.decay_length > 0:
        shape = np.clip(1.0 - (r - d_eff / 2) / spec.decay_length, 0.0, 1.0)
    else:
        shape = (r <= d_eff / 2).astype(float)
    indentation = c * shape
    open_ratio = np.maximum(spec.min_open_ratio, 1.0 - indentation / spec.channel_diameter)
    closed = 1.0 - open_ratio
    total = float(np.sum(closed) * spec.path_step)
    if total <= 0.0:
        return 0.0, 0.0
    centroid = float(np.sum(path.arclength * closed) * spec.path_step / total)
    return total, centroid


def transmission(
    spec: SkinSpec,
    contact: ContactState,
    frequencies: tuple[float, ...] = DEFAULT_FREQUENCIES,
) -> npt.NDArray[np.float64]:
    """Per-layer, per-tone transmission gains in (0, 1], shape (layers, tones).

    Gain for tone f is exp(-kappa_f * (C / channel_diameter) * (1 + beta *
    sin^2(2 pi f xi / v_eff))) where kappa_f grows with frequency and xi is
    the constriction centroid.  An untouched channel transmits exactly 1.
    """
    freqs = np.asarray(frequencies, dtype=np.float64)
    gains = np.ones((spec.layer_count, freqs.size))
    for k, path in enumerate(channel_layout(spec)):
        c_total, centroid = constriction(spec, path, contact)
        if c_total == 0.0:
            continue
        kappa = spec.attenuation * (freqs / KAPPA_REF_HZ) ** spec.frequency_exponent
        phase = 2.0 * math.pi * freqs * (centroid * _MM) / spec.effective_speed
        modulation = 1.0 + spec.resonance_strength * np.sin(phase) ** 2
        gains[k] = np.exp(-kappa * (c_total / spec.channel_diameter) * modulation)
    return gains


def _force_ceiling(spec: SkinSpec, peg: Peg) -> float:
    """Maximum force of a peg at full travel, pinned to the measured endpoints."""
    f_max = peg.diameter - 2.0 if spec.layer_count == 1 else peg.diameter + 1.0
    if f_max <= 0:
        raise DomainError(
            f"peg diameter {peg.diameter} mm is below the force model's valid range"
        )
    return f_max


def true_force(spec: SkinSpec, contact: ContactState) -> float:
    """Ground-truth normal force in N for a contact: F_max * (depth/max_depth)^p."""
    validate_contact(spec, contact)
    f_max = _force_ceiling(spec, contact.peg)
    return f_max * (contact.depth / spec.max_depth) ** spec.force_exponent


def invert_force(spec: SkinSpec, peg: Peg, target_force: float) -> float:
    """Depth in mm at which ``true_force`` reaches ``target_force``."""
    f_max = _force_ceiling(spec, peg)
    if not 0 <= target_force <= f_max:
        raise DomainError(
            f"target force {target_force} N outside [0, {f_max}] N for a "
            f"{peg.diameter} mm peg on this skin"
        )
    return spec.max_depth * (target_force / f_max) ** (1.0 / spec.force_exponent)


def sense(
    spec: SkinSpec,
    contact: ContactState,
    tones: ToneSet,
    noise_sd: float = DEFAULT_FEATURE_NOISE_SD,
    rng_seed=0,
) -> FeatureVector:
    """Simulated feature vector for one frame under a contact.

    Tone magnitudes are amplitude * gain per layer and tone, plus Gaussian
    noise, clamped at zero.  Deterministic given ``rng_seed`` (any value
    accepted by numpy's ``default_rng``, e.g. an int or tuple of ints).
    """
    if noise_sd < 0:
        raise DomainError(f"noise_sd must be >= 0, got {noise_sd}")
    gains = transmission(spec, contact, tones.frequencies)
    mags = tones.amplitude * gains.ravel()
    if noise_sd > 0:
        mags = mags + np.random.default_rng(rng_seed).normal(0.0, noise_sd, mags.size)
    return FeatureVector(magnitudes=np.maximum(mags, 0.0), layer_count=spec.layer_count)
