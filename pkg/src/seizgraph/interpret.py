"""Occlusion-based saliency and seizure-localization scoring.

Detection saliency zeroes one (channel, second) feature row at a time and
records the signed drop in the clip logit; classification saliency drops
one whole channel and tracks the predicted-class logit.  Maps are min-max
scaled into [0, 1] per clip.  Coverage and localization compare the map
thresholded at 0.5 against the channel-second annotation grid and are
recall- and precision-like respectively.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .electrodes import ElectrodeLayout
from .graph import EegGraph
from .model import ModelWeights, encode, head_logits
from .preprocess import EegClip, NormStats
from .training import GraphSource, _OperatorProvider


class InterpretError(ValueError):
    pass


@dataclass
class OcclusionMap:
    """Saliency grid in [0, 1]: (N, T) for detection, (N,) for channel drop."""

    grid: np.ndarray
    degenerate: bool = False


def _normalize_clip(clip: EegClip, stats: NormStats) -> np.ndarray:
    feats = clip.features.copy()
    feats[: clip.valid_len] = (feats[: clip.valid_len] - stats.mean) / stats.std
    return feats


def _batch_ops(source: GraphSource, variants, valid_len):
    from .graph import GraphOperators

    ops = [source.clip_operators(v, valid_len) for v in variants]
    return GraphOperators(
        out_transition=np.stack([o.out_transition for o in ops]),
        in_transition=np.stack([o.in_transition for o in ops]),
    )


def _forward(weights: ModelWeights, ops, feats: np.ndarray, valid) -> np.ndarray:
    final_states, _ = encode(feats, valid, weights, ops)
    return np.atleast_1d(head_logits(final_states[-1], weights).data)


def _scale_unit(raw: np.ndarray):
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw), True
    return (raw - lo) / (hi - lo), False


def occlusion_detect(
    clip: EegClip,
    weights: ModelWeights,
    graph_source: GraphSource,
    stats: NormStats,
    layout: ElectrodeLayout | None = None,
    refresh_graph: bool = True,
    chunk: int = 64,
) -> OcclusionMap:
    """Channel-second occlusion map for a trained detector.

    Each cell holds original minus occluded logit, min-max scaled to [0, 1];
    larger means the occluded region mattered more to the seizure call.  For
    correlation graphs the graph is rebuilt from each occluded clip so graph
    and input stay consistent (``refresh_graph=False`` freezes the original
    graph for ablation).  A flat map (all changes equal) is returned as
    zeros with the degenerate flag set.
    """
    layout = layout or ElectrodeLayout.standard_10_20()
    feats = _normalize_clip(clip, stats)
    t_steps, n_channels = feats.shape[0], feats.shape[1]
    provider = _OperatorProvider(graph_source, layout)
    if provider.shared is not None:
        base_ops = provider.shared
    else:
        base_ops = graph_source.clip_operators(feats, clip.valid_len)
    orig = _forward(weights, base_ops, feats[None], [clip.valid_len])[0]

    cells = [(i, j) for i in range(n_channels) for j in range(clip.valid_len)]
    raw = np.zeros((n_channels, t_steps))
    for start in range(0, len(cells), chunk):
        part = cells[start : start + chunk]
        variants = np.repeat(feats[None], len(part), axis=0)
        for row, (i, j) in enumerate(part):
            variants[row, j, i, :] = 0.0
        if provider.shared is not None:
            ops = provider.shared
        elif refresh_graph:
            ops = _batch_ops(graph_source, variants, clip.valid_len)
        else:
            ops = base_ops
        logits = _forward(weights, ops, variants, [clip.valid_len] * len(part))
        for row, (i, j) in enumerate(part):
            raw[i, j] = orig - logits[row]
    grid, degenerate = _scale_unit(raw)
    return OcclusionMap(grid=grid, degenerate=degenerate)


def occlusion_classify(
    clip: EegClip,
    weights: ModelWeights,
    graph_source: GraphSource,
    stats: NormStats,
    layout: ElectrodeLayout | None = None,
    refresh_graph: bool = True,
) -> OcclusionMap:
    """Channel-drop saliency vector for a trained classifier."""
    layout = layout or ElectrodeLayout.standard_10_20()
    feats = _normalize_clip(clip, stats)
    n_channels = feats.shape[1]
    provider = _OperatorProvider(graph_source, layout)
    if provider.shared is not None:
        base_ops = provider.shared
    else:
        base_ops = graph_source.clip_operators(feats, clip.valid_len)
    orig_logits = _forward(weights, base_ops, feats[None], [clip.valid_len])
    predicted = int(np.argmax(orig_logits))
    orig = orig_logits.ravel()[predicted] if orig_logits.ndim == 1 else orig_logits[0, predicted]

    variants = np.repeat(feats[None], n_channels, axis=0)
    for i in range(n_channels):
        variants[i, :, i, :] = 0.0
    if provider.shared is not None:
        ops = provider.shared
    elif refresh_graph:
        ops = _batch_ops(graph_source, variants, clip.valid_len)
    else:
        ops = base_ops
    final_states, _ = encode(variants, [clip.valid_len] * n_channels, weights, ops)
    logits = head_logits(final_states[-1], weights).data
    raw = orig - logits[:, predicted]
    grid, degenerate = _scale_unit(raw)
    return OcclusionMap(grid=grid, degenerate=degenerate)


def coverage(map_grid: np.ndarray, annot: np.ndarray) -> float:
    """Fraction of annotated seizure cells the thresholded map detects."""
    map_grid = np.asarray(map_grid, dtype=np.float64)
    annot = np.asarray(annot)
    if map_grid.shape != annot.shape:
        raise InterpretError(f"shape mismatch: map {map_grid.shape} vs annot {annot.shape}")
    total = annot.sum()
    if total == 0:
        raise InterpretError("coverage undefined for an all-zero annotation")
    detected = ((map_grid > 0.5) & (annot > 0)).sum()
    return float(detected / total)


def localization(map_grid: np.ndarray, annot: np.ndarray) -> float:
    """Fraction of detected (map > 0.5) cells that are truly seizure cells.

    Defined as 0 (with a warning) when no cell exceeds the threshold.
    """
    map_grid = np.asarray(map_grid, dtype=np.float64)
    annot = np.asarray(annot)
    if map_grid.shape != annot.shape:
        raise InterpretError(f"shape mismatch: map {map_grid.shape} vs annot {annot.shape}")
    selected = map_grid > 0.5
    if not selected.any():
        warnings.warn("no map cell exceeds 0.5; localization defined as 0", stacklevel=2)
        return 0.0
    return float((selected & (annot > 0)).sum() / selected.sum())


def score_distributions(maps, masks, bins: int = 10) -> dict:
    """Coverage/localization histograms plus the fraction scoring above 0.8."""
    cov, loc = [], []
    for m, a in zip(maps, masks):
        grid = m.grid if isinstance(m, OcclusionMap) else np.asarray(m)
        annot = np.asarray(a)
        if annot.sum() > 0:
            cov.append(coverage(grid, annot))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            loc.append(localization(grid, annot))
    edges = np.linspace(0.0, 1.0, bins + 1)

    def summarize(values):
        values = np.asarray(values, dtype=np.float64)
        hist, _ = np.histogram(values, bins=edges)
        frac = float(np.mean(values > 0.8)) if values.size else 0.0
        return {
            "histogram": hist.tolist(),
            "bin_edges": edges.tolist(),
            "fraction_above_0.8": frac,
            "n": int(values.size),
        }

    return {"coverage": summarize(cov), "localization": summarize(loc)}


def _color(value: float) -> str:
    shade = int(round(235 * (1.0 - value)))
    return f"rgb(255,{shade},{shade})"


def export_overlay(
    occ_map: OcclusionMap,
    layout: ElectrodeLayout,
    graph: EegGraph,
    path_prefix,
) -> dict:
    """Write the saliency overlay as ``<prefix>.json`` and ``<prefix>.svg``.

    The JSON carries the grid, the 0.5-threshold mask, and per-channel
    time-averaged values; the SVG renders the graph top-down with node
    colors a monotone map of the time-averaged saliency.
    """
    grid = np.atleast_2d(occ_map.grid)
    if grid.shape[0] != layout.n_electrodes:
        grid = grid.T
    time_avg = grid.mean(axis=1)
    payload = {
        "grid": occ_map.grid.tolist(),
        "channels": list(layout.names),
        "threshold_mask": (np.asarray(occ_map.grid) > 0.5).astype(int).tolist(),
        "time_avg": time_avg.tolist(),
        "degenerate": bool(occ_map.degenerate),
    }
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    prefix.with_suffix(".json").write_text(json.dumps(payload, sort_keys=True))

    size, scale = 420.0, 180.0
    centers = [
        (size / 2 + scale * x, size / 2 - scale * y) for x, y, _ in layout.coords
    ]
    w = graph.weights.copy()
    np.fill_diagonal(w, 0.0)
    w_max = w.max() if w.max() > 0 else 1.0
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>',
    ]
    for i in range(graph.n_nodes):
        for j in range(graph.n_nodes):
            if j <= i and not graph.directed:
                continue
            if w[i, j] <= 0:
                continue
            (x1, y1), (x2, y2) = centers[i], centers[j]
            opacity = 0.15 + 0.85 * w[i, j] / w_max
            lines.append(
                f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                f'stroke="gray" stroke-opacity="{opacity:.3f}"/>'
            )
    for i, name in enumerate(layout.names):
        x, y = centers[i]
        lines.append(
            f'<circle cx="{x:.1f}" cy="{y:.1f}" r="11" fill="{_color(float(time_avg[i]))}" '
            f'stroke="black"/>'
        )
        lines.append(
            f'<text x="{x:.1f}" y="{y + 3:.1f}" font-size="7" text-anchor="middle">{name}</text>'
        )
    lines.append("</svg>")
    prefix.with_suffix(".svg").write_text("\n".join(lines))
    return payload
