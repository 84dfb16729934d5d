"""Single-file clip archives: JSON manifest plus a float32 tensor blob.

Same conventions as the recording container (little-endian float32,
row-major) so archives round-trip across platforms.  Feature tensors are
stored unnormalized; normalization statistics travel in a sidecar JSON and
are applied at training/evaluation time.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .preprocess import EegClip, NormStats

MAGIC = b"SGCLIPS1"


class ArchiveError(ValueError):
    pass


def write_clips(clips, path, task: str, channels=None) -> None:
    entries = []
    blobs = []
    for clip in clips:
        clip.validate()
        entry = {
            "shape": list(clip.features.shape),
            "valid_len": int(clip.valid_len),
            "label": None if clip.label is None else int(clip.label),
            "source": clip.source_ref,
            "events": clip.events,
            "target_shape": None if clip.target is None else list(clip.target.shape),
        }
        entries.append(entry)
        blobs.append(np.ascontiguousarray(clip.features, dtype="<f4").tobytes())
        if clip.target is not None:
            blobs.append(np.ascontiguousarray(clip.target, dtype="<f4").tobytes())
    manifest = {
        "format_version": 1,
        "task": task,
        "channels": list(channels) if channels is not None else None,
        "clips": entries,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def read_clips(path):
    """Load an archive; returns (clips, manifest)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ArchiveError(f"{path} is not a clip archive")
    (manifest_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    manifest = json.loads(raw[start : start + manifest_len].decode("utf-8"))
    offset = start + manifest_len
    clips = []
    for entry in manifest["clips"]:
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape)) * 4
        features = (
            np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += n_bytes
        target = None
        if entry["target_shape"] is not None:
            tshape = tuple(entry["target_shape"])
            t_bytes = int(np.prod(tshape)) * 4
            target = (
                np.frombuffer(raw, dtype="<f4", count=int(np.prod(tshape)), offset=offset)
                .reshape(tshape)
                .astype(np.float64)
            )
            offset += t_bytes
        clips.append(
            EegClip(
                features=features,
                valid_len=int(entry["valid_len"]),
                label=entry["label"],
                source_ref=entry.get("source", {}),
                events=entry.get("events", []),
                target=target,
            )
        )
    if offset != len(raw):
        raise ArchiveError("archive payload size mismatch")
    return clips, manifest


def write_norm_stats(stats: NormStats, path) -> None:
    payload = {"mean": stats.mean.tolist(), "std": stats.std.tolist()}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def read_norm_stats(path) -> NormStats:
    payload = json.loads(Path(path).read_text())
    stats = NormStats(mean=np.asarray(payload["mean"]), std=np.asarray(payload["std"]))
    stats.validate()
    return stats
