"""Recordings: container IO, resampling, synthesis, and annotation masks.

A recording container is a directory holding ``manifest.json`` (channels,
sample rate, sample count), ``signal.bin`` (channel-major little-endian
float32), and ``annotations.json`` (seizure events).  The format is chosen
for bit-exact round trips; EDF/BDF are out of scope.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter, resample

from .electrodes import CHANNELS
from .seeding import stream


class ContainerError(ValueError):
    pass


@dataclass
class SeizureEvent:
    onset_sec: float
    offset_sec: float
    class_label: str
    channel_mask: list | None = None  # None means all channels involved

    def validate(self, duration_sec: float, n_channels: int) -> None:
        if not 0.0 <= self.onset_sec < self.offset_sec <= duration_sec + 1e-9:
            raise ContainerError(
                f"malformed annotation: onset {self.onset_sec} offset "
                f"{self.offset_sec} within duration {duration_sec}"
            )
        if self.channel_mask is not None and len(self.channel_mask) != n_channels:
            raise ContainerError("channel_mask length does not match channel count")


@dataclass
class Recording:
    """Raw multichannel time series with seizure annotations."""

    channels: list
    sample_rate: float
    data: np.ndarray  # (n_channels, n_samples)
    annotations: list = field(default_factory=list)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def duration_sec(self) -> float:
        return self.data.shape[1] / self.sample_rate

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise ContainerError("sample_rate must be positive")
        if len(set(self.channels)) != len(self.channels):
            raise ContainerError("channel names must be unique")
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise ContainerError(
                f"data shape {self.data.shape} does not match {len(self.channels)} channels"
            )
        for event in self.annotations:
            event.validate(self.duration_sec, self.n_channels)


@dataclass
class AnnotationMask:
    """Channel x second binary ground-truth grid for one clip."""

    grid: np.ndarray  # (n_channels, n_seconds) in {0, 1}


@dataclass
class SyntheticSpec:
    """Knobs for the synthetic corpus generator."""

    n_recordings: int
    duration_sec: float
    seizure_rate: float  # expected events per minute per recording
    focal_fraction: float
    snr: float  # burst amplitude as a multiple of background RMS
    class_bands: dict  # label -> (low_hz, high_hz)
    seed: int
    sample_rate: float = 200.0
    event_duration_range: tuple = (6.0, 14.0)

    def validate(self) -> None:
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if not 0.0 <= self.focal_fraction <= 1.0:
            raise ValueError("focal_fraction must lie in [0, 1]")
        nyquist = self.sample_rate / 2.0
        bands = sorted(self.class_bands.values())
        for low, high in bands:
            if not 0 < low < high < nyquist:
                raise ValueError(f"band ({low}, {high}) must sit below Nyquist {nyquist}")
        for (_, high), (low, _) in zip(bands, bands[1:]):
            if low < high:
                raise ValueError("class bands must be disjoint")


def save_recording(rec: Recording, path) -> None:
    """Write a recording container; signal stored channel-major float32 LE."""
    rec.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "channels": list(rec.channels),
        "sample_rate": float(rec.sample_rate),
        "n_samples": int(rec.data.shape[1]),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True))
    (path / "signal.bin").write_bytes(
        np.ascontiguousarray(rec.data, dtype="<f4").tobytes()
    )
    annotations = [
        {
            "onset_sec": e.onset_sec,
            "offset_sec": e.offset_sec,
            "class_label": e.class_label,
            "channel_mask": list(map(bool, e.channel_mask)) if e.channel_mask is not None else None,
        }
        for e in rec.annotations
    ]
    (path / "annotations.json").write_text(json.dumps(annotations, sort_keys=True))


def load_recording(path) -> Recording:
    """Read a recording container back bit-exactly."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ContainerError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    channels = manifest["channels"]
    n_samples = int(manifest["n_samples"])
    payload = (path / "signal.bin").read_bytes()
    expected = len(channels) * n_samples * 4
    if len(payload) != expected:
        raise ContainerError(
            f"payload size mismatch: signal.bin has {len(payload)} bytes, "
            f"expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(len(channels), n_samples)
    annotations = []
    annot_path = path / "annotations.json"
    if annot_path.exists():
        for entry in json.loads(annot_path.read_text()):
            annotations.append(
                SeizureEvent(
                    onset_sec=float(entry["onset_sec"]),
                    offset_sec=float(entry["offset_sec"]),
                    class_label=str(entry["class_label"]),
                    channel_mask=entry.get("channel_mask"),
                )
            )
    rec = Recording(
        channels=list(channels),
        sample_rate=float(manifest["sample_rate"]),
        data=data.astype(np.float64),
        annotations=annotations,
    )
    rec.validate()
    return rec


def resample_recording(rec: Recording, target_rate: float) -> Recording:
    """Fourier-method resampling to ``target_rate`` samples per second.

    Spectrum truncation/zero-padding, so edge transients are accepted.
    Annotations are untouched (they live in seconds).
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    n_samples = rec.data.shape[1]
    num = int(round(n_samples * target_rate / rec.sample_rate))
    data = resample(rec.data, num, axis=1)
    return Recording(
        channels=list(rec.channels),
        sample_rate=float(target_rate),
        data=data,
        annotations=list(rec.annotations),
    )


def annotation_mask(rec: Recording, clip_start_sec: float, clip_len_sec: float) -> AnnotationMask:
    """Channel x second grid of ground truth over one clip window.

    Cell (i, j) is one iff some event overlaps second j of the clip and the
    event involves channel i (an absent channel_mask involves every channel).
    """
    if clip_start_sec < 0 or clip_start_sec + clip_len_sec > rec.duration_sec + 1e-9:
        raise ValueError("clip window out of bounds")
    n_seconds = int(round(clip_len_sec))
    grid = np.zeros((rec.n_channels, n_seconds), dtype=np.uint8)
    for event in rec.annotations:
        for j in range(n_seconds):
            second_start = clip_start_sec + j
            if event.onset_sec < second_start + 1.0 and event.offset_sec > second_start:
                if event.channel_mask is None:
                    grid[:, j] = 1
                else:
                    grid[np.asarray(event.channel_mask, dtype=bool), j] = 1
    return AnnotationMask(grid=grid)


def _background(rng: np.random.Generator, n_channels: int, n_samples: int, fs: float) -> np.ndarray:
    """Colored noise (AR(1)-filtered white noise) plus a weak alpha sinusoid."""
    white = rng.standard_normal((n_channels, n_samples))
    colored = lfilter([1.0], [1.0, -0.95], white, axis=1)
    colored /= colored.std(axis=1, keepdims=True)
    t = np.arange(n_samples) / fs
    alpha_freq = rng.uniform(8.0, 12.0, size=(n_channels, 1))
    alpha_phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_channels, 1))
    alpha = 0.3 * np.sin(2.0 * np.pi * alpha_freq * t[None, :] + alpha_phase)
    return colored + alpha


def _focal_mask(rng: np.random.Generator, distances: np.ndarray) -> np.ndarray:
    """Mask of 2-5 spatially adjacent channels around a random seed electrode."""
    n = distances.shape[0]
    size = int(rng.integers(2, 6))
    center = int(rng.integers(0, n))
    members = np.argsort(distances[center])[:size]  # center itself is nearest
    mask = np.zeros(n, dtype=bool)
    mask[members] = True
    return mask


def generate_synthetic(spec: SyntheticSpec, layout=None) -> list:
    """Deterministically synthesize recordings with planted seizure bursts.

    Background is per-channel colored noise plus a low-amplitude alpha-band
    sinusoid.  Each event injects a sinusoidal burst at a frequency drawn
    from its class band, with amplitude ``snr`` times the channel's
    background RMS, into either all channels (generalized) or a contiguous
    set of 2-5 spatially adjacent channels (focal).
    """
    from .electrodes import ElectrodeLayout

    spec.validate()
    if layout is None:
        layout = ElectrodeLayout.standard_10_20()
    distances = layout.pairwise_distances()
    n_channels = len(CHANNELS)
    n_samples = int(round(spec.duration_sec * spec.sample_rate))
    labels = sorted(spec.class_bands)
    recordings = []
    for idx in range(spec.n_recordings):
        rng = stream(spec.seed, "synth", str(idx))
        data = _background(rng, n_channels, n_samples, spec.sample_rate)
        rms = np.sqrt(np.mean(data**2, axis=1))
        n_events = int(rng.poisson(spec.seizure_rate * spec.duration_sec / 60.0))
        events = []
        for _ in range(n_events):
            lab = labels[int(rng.integers(0, len(labels)))]
            low, high = spec.class_bands[lab]
            freq = float(rng.uniform(low, high))
            dur = float(rng.uniform(*spec.event_duration_range))
            dur = min(dur, spec.duration_sec)
            onset = float(rng.uniform(0.0, spec.duration_sec - dur))
            offset = onset + dur
            focal = bool(rng.random() < spec.focal_fraction)
            mask = _focal_mask(rng, distances) if focal else None
            phase = float(rng.uniform(0.0, 2.0 * np.pi))

            start = int(round(onset * spec.sample_rate))
            stop = int(round(offset * spec.sample_rate))
            t = np.arange(start, stop) / spec.sample_rate
            burst = np.sin(2.0 * np.pi * freq * t + phase)
            # half-second cosine ramps to avoid onset/offset clicks
            ramp = min(int(0.5 * spec.sample_rate), burst.size // 2)
            if ramp > 0:
                window = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
                burst[:ramp] *= window
                burst[-ramp:] *= window[::-1]
            rows = np.arange(n_channels) if mask is None else np.flatnonzero(mask)
            for row in rows:
                data[row, start:stop] += spec.snr * rms[row] * burst
            events.append(
                SeizureEvent(
                    onset_sec=onset,
                    offset_sec=offset,
                    class_label=lab,
                    channel_mask=mask.tolist() if mask is not None else None,
                )
            )
        events.sort(key=lambda e: e.onset_sec)
        rec = Recording(
            channels=list(CHANNELS),
            sample_rate=spec.sample_rate,
            data=data.astype(np.float32).astype(np.float64),
            annotations=events,
        )
        rec.validate()
        recordings.append(rec)
    return recordings
