"""Four-tone reference signal synthesis and per-tone magnitude extraction.

The reference signal is a sum of bin-aligned sinusoids; the feature
extractor estimates the amplitude of each tone from one rectangular,
non-overlapping frame via the Goertzel recurrence.  With the default
48 kHz / 4800-sample framing every tone sits exactly on a 10 Hz bin,
so amplitude recovery is exact for noiseless input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np
import numpy.typing as npt
from scipy.signal import lfilter

from .errors import ConfigError, DomainError, InputError

DEFAULT_FREQUENCIES = (300.0, 500.0, 700.0, 900.0)
DEFAULT_AMPLITUDE = 0.6
DEFAULT_SAMPLE_RATE = 48000
DEFAULT_FRAME_LEN = 4800

_PCM_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class ToneSet:
    """Reference-signal definition: tone frequencies, per-tone amplitude, framing."""

    frequencies: tuple[float, ...] = DEFAULT_FREQUENCIES
    amplitude: float = DEFAULT_AMPLITUDE
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_len: int = DEFAULT_FRAME_LEN

    def __post_init__(self) -> None:
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        if self.frame_len <= 0 or self.sample_rate <= 0:
            raise ConfigError("sample_rate and frame_len must be positive")
        if not self.frequencies:
            raise ConfigError("tone set needs at least one frequency")
        if not self.amplitude > 0:
            raise ConfigError(f"amplitude must be positive, got {self.amplitude}")
        prev = 0.0
        for f in self.frequencies:
            if f <= prev:
                raise ConfigError(f"frequencies must be strictly increasing and positive: {self.frequencies}")
            prev = f
        nyquist = self.sample_rate / 2
        for f in self.frequencies:
            if f >= nyquist:
                raise ConfigError(f"frequency {f} Hz is not below Nyquist ({nyquist} Hz)")
            b = f * self.frame_len / self.sample_rate
            if abs(b - round(b)) > 1e-9:
                raise ConfigError(
                    f"frequency {f} Hz is not aligned to the {self.bin_width} Hz bin grid"
                )

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.frame_len

    @property
    def frame_seconds(self) -> float:
        return self.frame_len / self.sample_rate

    def bins(self) -> tuple[int, ...]:
        """DFT bin index of each tone within one frame."""
        return tuple(round(f * self.frame_len / self.sample_rate) for f in self.frequencies)

    def to_dict(self) -> dict:
        return {
            "frequencies": list(self.frequencies),
            "amplitude": self.amplitude,
            "sample_rate": self.sample_rate,
            "frame_len": self.frame_len,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToneSet":
        return cls(
            frequencies=tuple(data["frequencies"]),
            amplitude=float(data["amplitude"]),
            sample_rate=int(data["sample_rate"]),
            frame_len=int(data["frame_len"]),
        )


@dataclass(frozen=True)
class SampleBuffer:
    """A mono stretch of time-domain samples at a fixed rate."""

    samples: npt.NDArray[np.float64]
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 1:
            raise InputError("sample buffer must be a non-empty 1-D array")
        if not np.isfinite(samples).all():
            raise InputError("sample buffer contains non-finite values")

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class FeatureVector:
    """Per-layer tone magnitudes of one frame, layer-major and frequency-ascending."""

    magnitudes: npt.NDArray[np.float64]
    layer_count: int = 1

    def __post_init__(self) -> None:
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        object.__setattr__(self, "magnitudes", mags)
        if self.layer_count not in (1, 2):
            raise InputError(f"layer_count must be 1 or 2, got {self.layer_count}")
        if mags.ndim != 1 or mags.size == 0 or mags.size % self.layer_count != 0:
            raise InputError("magnitude vector length inconsistent with layer count")
        if not (np.isfinite(mags).all() and (mags >= 0).all()):
            raise InputError("magnitudes must be finite and non-negative")

    def per_layer(self) -> npt.NDArray[np.float64]:
        """Magnitudes reshaped to (layer_count, tones)."""
        return self.magnitudes.reshape(self.layer_count, -1)


def synthesize_reference(tones: ToneSet, n_frames: int = 1) -> SampleBuffer:
    """Render ``n_frames`` frames of the clean multi-tone reference signal.

    Every tone starts at phase zero, so the very first sample is exactly 0.
    """
    if n_frames < 1:
        raise DomainError(f"n_frames must be >= 1, got {n_frames}")
    return synthesize_measured(tones, gains=(1.0,) * len(tones.frequencies), n_frames=n_frames)


def synthesize_measured(
    tones: ToneSet,
    gains: npt.ArrayLike,
    noise_sd: float = 0.0,
    seed: int = 0,
    n_frames: int = 1,
) -> SampleBuffer:
    """Render the reference signal with per-tone gains and additive white noise.

    Stands in for a microphone recording behind an attenuating channel:
    tone k is scaled by ``gains[k]`` in [0, 1] and Gaussian noise of standard
    deviation ``noise_sd`` is added sample-wise.  Deterministic given ``seed``.
    """
    if n_frames < 1:
        raise DomainError(f"n_frames must be >= 1, got {n_frames}")
    g = np.asarray(gains, dtype=np.float64)
    if g.shape != (len(tones.frequencies),):
        raise InputError(
            f"expected {len(tones.frequencies)} gains, got shape {g.shape}"
        )
    if (g < 0).any() or (g > 1).any():
        raise DomainError(f"gains must lie in [0, 1], got {g.tolist()}")
    if noise_sd < 0:
        raise DomainError(f"noise_sd must be >= 0, got {noise_sd}")

    n = n_frames * tones.frame_len
    t = np.arange(n, dtype=np.float64) / tones.sample_rate
    x = np.zeros(n)
    for gain, f in zip(g, tones.frequencies):
        x += gain * tones.amplitude * np.sin(2.0 * math.pi * f * t)
    if noise_sd > 0:
        x += np.random.default_rng(seed).normal(0.0, noise_sd, size=n)
    return SampleBuffer(samples=x, sample_rate=tones.sample_rate)


def _goertzel_magnitude(x: npt.NDArray[np.float64], bin_index: int, n: int) -> float:
    """Sinusoid-amplitude estimate 2|X[b]|/N via the Goertzel recurrence.

    The recurrence s[k] = x[k] + 2 cos(w) s[k-1] - s[k-2] is a second-order
    IIR filter, evaluated with scipy's C filter loop.
    """
    w = 2.0 * math.pi * bin_index / n
    cw, sw = math.cos(w), math.sin(w)
    s = lfilter([1.0], [1.0, -2.0 * cw, 1.0], x)
    s1, s2 = float(s[-1]), float(s[-2])
    re = s1 - s2 * cw
    im = s2 * sw
    return 2.0 * math.hypot(re, im) / n


def tone_magnitudes(frame: SampleBuffer, tones: ToneSet) -> npt.NDArray[np.float64]:
    """Estimate the amplitude of each tone from one frame.

    Exact (to rounding) for noiseless bin-aligned tones under the
    rectangular window.
    """
    if len(frame) != tones.frame_len:
        raise InputError(
            f"frame has {len(frame)} samples, tone set expects {tones.frame_len}"
        )
    if frame.sample_rate != tones.sample_rate:
        raise InputError(
            f"frame sample rate {frame.sample_rate} != tone set rate {tones.sample_rate}"
        )
    n = tones.frame_len
    return np.array([_goertzel_magnitude(frame.samples, b, n) for b in tones.bins()])


def frames(buffer: SampleBuffer, tones: ToneSet) -> Iterator[SampleBuffer]:
    """Split a buffer into consecutive non-overlapping frames.

    A trailing partial frame is discarded; a buffer shorter than one frame
    yields nothing.
    """
    n = tones.frame_len
    for i in range(len(buffer) // n):
        yield SampleBuffer(samples=buffer.samples[i * n : (i + 1) * n], sample_rate=buffer.sample_rate)


def deinterleave(buffer: SampleBuffer, channels: int) -> list[SampleBuffer]:
    """Split a sample-interleaved multi-channel buffer into per-channel buffers."""
    if channels < 1:
        raise DomainError(f"channels must be >= 1, got {channels}")
    if len(buffer) % channels != 0:
        raise InputError(
            f"buffer length {len(buffer)} is not a multiple of {channels} channels"
        )
    return [
        SampleBuffer(samples=buffer.samples[c::channels], sample_rate=buffer.sample_rate)
        for c in range(channels)
    ]


def write_pcm(buffer: SampleBuffer, dest: str | Path | BinaryIO) -> None:
    """Write samples as headerless 32-bit little-endian float PCM."""
    raw = np.asarray(buffer.samples, dtype=_PCM_DTYPE).tobytes()
    if hasattr(dest, "write"):
        dest.write(raw)
    else:
        Path(dest).write_bytes(raw)


def read_pcm(source: str | Path | BinaryIO, sample_rate: int) -> SampleBuffer:
    """Read headerless 32-bit little-endian float PCM into a buffer."""
    if hasattr(source, "read"):
        raw = source.read()
    else:
        raw = Path(source).read_bytes()
    if len(raw) == 0:
        raise InputError("PCM input is empty")
    if len(raw) % _PCM_DTYPE.itemsize != 0:
        raise InputError(
            f"PCM byte count {len(raw)} is not a multiple of {_PCM_DTYPE.itemsize}"
        )
    samples = np.frombuffer(raw, dtype=_PCM_DTYPE).astype(np.float64)
    return SampleBuffer(samples=samples, sample_rate=sample_rate)
