"""Clip extraction, frequency-domain features, normalization, augmentation.

Recordings are cut into non-overlapping windows; each 1-second sub-window
per channel is Fourier-transformed and the log amplitudes of the first 100
non-negative frequency bins form the feature vector.  Short classification
clips are zero-padded with an explicit valid-length mask.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .electrodes import CHANNELS, reflection_permutation
from .ingest import Recording, SeizureEvent

N_FEATURES = 100
SAMPLES_PER_STEP = 200  # one 1-second step at the canonical 200 Hz rate
LOG_FLOOR = 1e-7
SCALE_RANGE = (0.8, 1.2)


class PreprocessError(ValueError):
    pass


@dataclass
class EegClip:
    """Preprocessed feature tensor plus label and valid-length mask.

    ``features`` is (T, N, M); rows at or beyond ``valid_len`` are exactly
    zero padding.  ``events`` holds clip-relative annotations so ground-truth
    masks can be rebuilt downstream; ``target`` carries the next-window
    feature tensor for self-supervised pairs.
    """

    features: np.ndarray
    valid_len: int
    label: int | None = None
    source_ref: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    target: np.ndarray | None = None

    def validate(self) -> None:
        if self.valid_len < 1 or self.valid_len > self.features.shape[0]:
            raise PreprocessError(f"valid_len {self.valid_len} out of range")
        if not np.all(np.isfinite(self.features)):
            raise PreprocessError("clip features contain non-finite values")
        if self.valid_len < self.features.shape[0]:
            if np.any(self.features[self.valid_len :] != 0.0):
                raise PreprocessError("padding rows must be exactly zero")


@dataclass
class NormStats:
    """Per-feature-index z-normalization statistics from training data."""

    mean: np.ndarray  # (M,)
    std: np.ndarray  # (M,)

    def validate(self) -> None:
        if np.any(self.std <= 0):
            raise PreprocessError("degenerate training data: zero std feature")


@dataclass
class LabelRemap:
    """Raw class label -> contiguous training index, plus labels to drop."""

    mapping: dict
    drop: tuple = ()

    def __post_init__(self):
        indices = sorted(set(self.mapping.values()))
        if indices != list(range(len(indices))):
            raise PreprocessError(f"class indices must be contiguous from 0, got {indices}")

    @property
    def n_classes(self) -> int:
        return len(set(self.mapping.values()))

    @classmethod
    def from_labels(cls, labels) -> "LabelRemap":
        return cls(mapping={lab: i for i, lab in enumerate(sorted(set(labels)))})


# Merged four-class scheme: focal variants collapse to one class, tonic and
# tonic-clonic collapse to another, myoclonic is dropped outright.
DEFAULT_REMAP = LabelRemap(
    mapping={"fn": 0, "sp": 0, "cp": 0, "gn": 1, "ab": 2, "tn": 3, "tc": 3},
    drop=("my",),
)


def detection_clips(rec: Recording, clip_len_sec: int):
    """Non-overlapping windows with a binary any-seizure-overlap label.

    Returns (start_sec, window, label) triples; a final window shorter than
    ``clip_len_sec`` is discarded.
    """
    if abs(rec.sample_rate - 200.0) > 1e-9:
        raise PreprocessError("detection clips expect a 200 Hz recording")
    step = int(clip_len_sec * rec.sample_rate)
    n_windows = rec.data.shape[1] // step
    out = []
    for k in range(n_windows):
        start_sec = k * clip_len_sec
        window = rec.data[:, k * step : (k + 1) * step]
        label = int(
            any(
                e.onset_sec < start_sec + clip_len_sec and e.offset_sec > start_sec
                for e in rec.annotations
            )
        )
        out.append((float(start_sec), window, label))
    return out


def classification_clip(rec: Recording, event: SeizureEvent, clip_len_sec: int):
    """One window per seizure event, starting 2 s before the annotated onset.

    The window is truncated at the event offset when the seizure is shorter
    than the clip, and clamped to the recording bounds.  Returns
    (start_sec, window, valid_seconds); ``window`` covers the valid whole
    seconds only.
    """
    if abs(rec.sample_rate - 200.0) > 1e-9:
        raise PreprocessError("classification clips expect a 200 Hz recording")
    start = max(0.0, event.onset_sec - 2.0)
    end = min(start + clip_len_sec, event.offset_sec, rec.duration_sec)
    valid = int(np.floor(end - start + 1e-9))
    if valid < 1:
        raise PreprocessError("event too short to yield a whole-second clip")
    s0 = int(round(start * rec.sample_rate))
    window = rec.data[:, s0 : s0 + valid * int(rec.sample_rate)]
    return float(start), window, valid


def fft_log_features(window: np.ndarray, samples_per_step: int = SAMPLES_PER_STEP) -> np.ndarray:
    """Log-amplitude spectra of non-overlapping 1-second sub-windows.

    ``window`` is (N, samples) with samples a multiple of the step size.
    Keeps the first ``N_FEATURES`` non-negative frequency bins (the Nyquist
    bin is dropped) and clamps amplitudes at ``LOG_FLOOR`` before the log.
    """
    window = np.asarray(window, dtype=np.float64)
    n_channels, n_samples = window.shape
    if n_samples % samples_per_step != 0:
        raise PreprocessError(
            f"window length {n_samples} is not a multiple of {samples_per_step}"
        )
    t_steps = n_samples // samples_per_step
    frames = window.reshape(n_channels, t_steps, samples_per_step)
    spectra = np.fft.rfft(frames, axis=-1)
    amplitude = np.abs(spectra)[:, :, :N_FEATURES]
    features = np.log(np.maximum(amplitude, LOG_FLOOR))
    return features.transpose(1, 0, 2)  # (T, N, M)


def _clip_relative_events(rec: Recording, start_sec: float, clip_len_sec: float):
    rel = []
    for e in rec.annotations:
        if e.onset_sec < start_sec + clip_len_sec and e.offset_sec > start_sec:
            rel.append(
                {
                    "onset_sec": max(0.0, e.onset_sec - start_sec),
                    "offset_sec": min(clip_len_sec, e.offset_sec - start_sec),
                    "class_label": e.class_label,
                    "channel_mask": e.channel_mask,
                }
            )
    return rel


def build_detection_clips(recordings, clip_len_sec: int, ids=None):
    """Feature clips for the detection task over a list of recordings."""
    clips = []
    for r_idx, rec in enumerate(recordings):
        rec_id = ids[r_idx] if ids is not None else f"rec{r_idx:05d}"
        for start_sec, window, label in detection_clips(rec, clip_len_sec):
            clip = EegClip(
                features=fft_log_features(window),
                valid_len=clip_len_sec,
                label=label,
                source_ref={"recording": rec_id, "start_sec": start_sec},
                events=_clip_relative_events(rec, start_sec, clip_len_sec),
            )
            clips.append(clip)
    return clips


def build_classification_clips(recordings, clip_len_sec: int, remap: LabelRemap = DEFAULT_REMAP, ids=None):
    """One labeled clip per seizure event; drop-listed labels are skipped."""
    clips = []
    for r_idx, rec in enumerate(recordings):
        rec_id = ids[r_idx] if ids is not None else f"rec{r_idx:05d}"
        for event in rec.annotations:
            if event.class_label in remap.drop:
                continue
            if event.class_label not in remap.mapping:
                raise PreprocessError(f"label {event.class_label!r} missing from remap")
            start_sec, window, valid = classification_clip(rec, event, clip_len_sec)
            feats = fft_log_features(window)
            padded = np.zeros((clip_len_sec,) + feats.shape[1:], dtype=feats.dtype)
            padded[:valid] = feats
            clips.append(
                EegClip(
                    features=padded,
                    valid_len=valid,
                    label=remap.mapping[event.class_label],
                    source_ref={"recording": rec_id, "start_sec": start_sec},
                    events=_clip_relative_events(rec, start_sec, valid),
                )
            )
    return clips


def build_pretrain_pairs(recordings, clip_len_sec: int, horizon_sec: int = 12, ids=None):
    """Input clip plus the next ``horizon_sec`` seconds as prediction target."""
    clips = []
    for r_idx, rec in enumerate(recordings):
        rec_id = ids[r_idx] if ids is not None else f"rec{r_idx:05d}"
        step = int(clip_len_sec * rec.sample_rate)
        horizon_samples = int(horizon_sec * rec.sample_rate)
        n_windows = rec.data.shape[1] // step
        for k in range(n_windows):
            stop = (k + 1) * step
            if stop + horizon_samples > rec.data.shape[1]:
                break
            window = rec.data[:, k * step : stop]
            target = rec.data[:, stop : stop + horizon_samples]
            clips.append(
                EegClip(
                    features=fft_log_features(window),
                    valid_len=clip_len_sec,
                    label=None,
                    source_ref={"recording": rec_id, "start_sec": float(k * clip_len_sec)},
                    target=fft_log_features(target),
                )
            )
    if not clips:
        raise PreprocessError("recordings too short for any input/target pair")
    return clips


def fit_norm_stats(clips) -> NormStats:
    """Per-feature mean/std (population convention) over valid entries.

    Two passes in fixed clip order, so the reduction is deterministic and a
    truly constant feature yields an exactly zero std.
    """
    if not clips:
        raise PreprocessError("cannot fit normalization on an empty training set")
    m = clips[0].features.shape[2]
    total = np.zeros(m)
    count = 0
    for clip in clips:
        valid = clip.features[: clip.valid_len]
        total += valid.sum(axis=(0, 1))
        count += valid.shape[0] * valid.shape[1]
    mean = total / count
    sq = np.zeros(m)
    for clip in clips:
        valid = clip.features[: clip.valid_len]
        sq += ((valid - mean) ** 2).sum(axis=(0, 1))
    std = np.sqrt(sq / count)
    stats = NormStats(mean=mean, std=std)
    stats.validate()
    return stats


def apply_norm(clip: EegClip, stats: NormStats) -> EegClip:
    """Z-normalize valid rows; padding stays exactly zero."""
    stats.validate()
    features = clip.features.copy()
    features[: clip.valid_len] = (features[: clip.valid_len] - stats.mean) / stats.std
    target = clip.target
    if target is not None:
        target = (target - stats.mean) / stats.std
    return replace(clip, features=features, target=target)


def augment_scale(x, rng: np.random.Generator):
    """Amplitude-scale augmentation by one uniform draw from [0.8, 1.2].

    On a raw (N, samples) window the samples are multiplied directly; on a
    feature clip the equivalent exact update shifts log amplitudes by log(s)
    and re-applies the clamp floor.
    """
    s = float(rng.uniform(*SCALE_RANGE))
    if isinstance(x, EegClip):
        features = x.features.copy()
        features[: x.valid_len] = np.maximum(
            features[: x.valid_len] + np.log(s), np.log(LOG_FLOOR)
        )
        return replace(x, features=features)
    return np.asarray(x) * s


def augment_midline_reflect(x, rng: np.random.Generator, channels=CHANNELS):
    """With probability one-half, swap left/right homologous channels."""
    if rng.random() >= 0.5:
        return x.copy() if isinstance(x, np.ndarray) else x
    perm = reflection_permutation(channels)
    if isinstance(x, EegClip):
        events = [
            {
                **e,
                "channel_mask": list(np.asarray(e["channel_mask"])[perm])
                if e.get("channel_mask") is not None
                else None,
            }
            for e in x.events
        ]
        return replace(x, features=x.features[:, perm, :], events=events)
    return np.asarray(x)[perm, :]
