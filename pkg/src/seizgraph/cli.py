"""Command-line entry point wiring the pipeline stages together.

Subcommands: synth, preprocess, graph, pretrain, train, eval, interpret.
All randomness flows from one ``--seed``, split into named per-consumer
streams, so a fixed seed gives byte-identical outputs across runs.
Failures emit a machine-readable error JSON on stderr: exit 2 for
configuration problems, 1 for runtime errors.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import archive, interpret, metrics as met, presets
from .electrodes import CHANNELS, ElectrodeLayout
from .graph import (
    build_correlation_graph,
    build_distance_graph,
    build_distance_graph_bandwidth,
)
from .ingest import SyntheticSpec, generate_synthetic, load_recording, resample_recording, save_recording
from .model import ModelConfig, load_weights, save_weights
from .preprocess import (
    DEFAULT_REMAP,
    LabelRemap,
    NormStats,
    build_classification_clips,
    build_detection_clips,
    build_pretrain_pairs,
    fit_norm_stats,
)
from .training import (
    GraphSource,
    TrainConfig,
    pretrain_self_supervised,
    predict_logits,
    split_by_recording,
    train_auxiliary,
    train_classification,
    train_detection,
)

log = logging.getLogger("seizgraph")

DATA_DIR_ENV = "SEIZGRAPH_DATA_DIR"


class CliError(ValueError):
    pass


def _resolve(path: str) -> Path:
    """Resolve relative paths under the data-directory env var when set."""
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seizgraph")
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--preset", default=None, help="named configuration preset")
    parser.add_argument("--config", default=None, help="JSON config override file")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for evaluation fan-out")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic recording corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="cut recordings into feature clips")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--task", choices=["detect", "classify", "pretrain"], required=True)
    p.add_argument("--clip-len", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None, help="fit normalization stats and write them here")
    p.add_argument("--remap", default=None, help="JSON label remap {mapping: {...}, drop: [...]}")

    p = sub.add_parser("graph", help="emit a graph JSON for inspection")
    p.add_argument("--mode", choices=["distance", "distance-bandwidth", "correlation"], required=True)
    p.add_argument("--kappa", type=float, default=0.9)
    p.add_argument("--bandwidth", type=float, default=0.06)
    p.add_argument("--tau", type=int, default=3)
    p.add_argument("--clip", default=None, help="clips.bin#index for correlation mode")
    p.add_argument("--stats", default=None, help="normalize the clip with these stats first")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="self-supervised future-frame pretraining")
    p.add_argument("--clips", required=True)
    p.add_argument("--val-clips", default=None)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--graph-mode", default=None, choices=["distance", "distance-bandwidth", "correlation"])
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)

    p = sub.add_parser("train", help="train a detector or classifier")
    p.add_argument("--task", choices=["detect", "classify"], required=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--val-clips", default=None)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--init", default=None, help="pretrained weights for encoder init")
    p.add_argument("--aux-lambda", type=float, default=0.0)
    p.add_argument("--graph-mode", default=None, choices=["distance", "distance-bandwidth", "correlation"])
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)

    p = sub.add_parser("eval", help="score a trained model on a clip archive")
    p.add_argument("--weights", required=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--threshold", default="auto", help="decision threshold or 'auto' (stored one)")
    p.add_argument("--report", required=True)

    p = sub.add_parser("interpret", help="occlusion maps plus localization summary")
    p.add_argument("--weights", required=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--task", choices=["detect", "classify"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--freeze-graph", action="store_true", help="do not rebuild correlation graphs for occluded clips")
    return parser


def _load_config(args) -> dict:
    config = presets.get_preset(args.preset) if args.preset else {}
    if args.config:
        overrides = json.loads(_resolve(args.config).read_text())
        config = presets.merge_config(config, overrides)
    return config


def _section(config, name, cls, **extra):
    payload = dict(config.get(name, {}))
    payload.update(extra)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise presets.PresetError(f"unknown keys for {name}: {sorted(unknown)}")
    return cls(**payload)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1))


def _cmd_synth(args, config) -> int:
    spec_payload = json.loads(_resolve(args.spec).read_text())
    spec_payload.update(config.get("synth", {}))
    if args.seed is not None:
        spec_payload["seed"] = args.seed
    if "class_bands" in spec_payload:
        spec_payload["class_bands"] = {
            k: tuple(v) for k, v in spec_payload["class_bands"].items()
        }
    spec = SyntheticSpec(**spec_payload)
    recordings = generate_synthetic(spec)
    out = _resolve(args.out)
    for i, rec in enumerate(recordings):
        save_recording(rec, out / f"rec{i:05d}")
    manifest = {"n_recordings": len(recordings), "spec": {**spec_payload, "class_bands": {k: list(v) for k, v in spec.class_bands.items()}}}
    _write_json(out / "corpus.json", manifest)
    log.info("wrote %d recordings to %s", len(recordings), out)
    return 0


def _load_corpus(in_dir: Path):
    dirs = sorted(d for d in in_dir.iterdir() if d.is_dir() and (d / "manifest.json").exists())
    if not dirs:
        raise CliError(f"no recording containers under {in_dir}")
    recordings, ids = [], []
    for d in dirs:
        rec = load_recording(d)
        if abs(rec.sample_rate - 200.0) > 1e-9:
            rec = resample_recording(rec, 200.0)
        recordings.append(rec)
        ids.append(d.name)
    return recordings, ids


def _cmd_preprocess(args, config) -> int:
    pre = config.get("preprocess", {})
    clip_len = args.clip_len or pre.get("clip_len", 12)
    horizon = pre.get("horizon", 12)
    recordings, ids = _load_corpus(_resolve(args.in_dir))
    if args.task == "detect":
        clips = build_detection_clips(recordings, clip_len, ids=ids)
    elif args.task == "classify":
        remap = DEFAULT_REMAP
        if args.remap:
            payload = json.loads(_resolve(args.remap).read_text())
            remap = LabelRemap(mapping=payload["mapping"], drop=tuple(payload.get("drop", ())))
        elif pre.get("remap"):
            remap = LabelRemap(mapping=pre["remap"]["mapping"], drop=tuple(pre["remap"].get("drop", ())))
        else:
            labels = {e.class_label for rec in recordings for e in rec.annotations}
            if not labels <= set(DEFAULT_REMAP.mapping) | set(DEFAULT_REMAP.drop):
                remap = LabelRemap.from_labels(labels)
        clips = build_classification_clips(recordings, clip_len, remap=remap, ids=ids)
    else:
        clips = build_pretrain_pairs(recordings, clip_len, horizon_sec=horizon, ids=ids)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    archive.write_clips(clips, out, task=args.task, channels=CHANNELS)
    if args.stats:
        archive.write_norm_stats(fit_norm_stats(clips), _resolve(args.stats))
    log.info("wrote %d clips to %s", len(clips), out)
    return 0


def _cmd_graph(args, config) -> int:
    layout = ElectrodeLayout.standard_10_20()
    if args.mode == "distance":
        graph = build_distance_graph(layout, args.kappa)
    elif args.mode == "distance-bandwidth":
        graph = build_distance_graph_bandwidth(layout, args.bandwidth)
    else:
        if not args.clip or "#" not in args.clip:
            raise CliError("correlation mode needs --clip archive.bin#index")
        path, _, index = args.clip.partition("#")
        clips, _ = archive.read_clips(_resolve(path))
        clip = clips[int(index)]
        feats = clip.features
        if args.stats:
            stats = archive.read_norm_stats(_resolve(args.stats))
            feats = feats.copy()
            feats[: clip.valid_len] = (feats[: clip.valid_len] - stats.mean) / stats.std
        graph = build_correlation_graph(feats, clip.valid_len, tau=args.tau)
    payload = {
        "nodes": list(layout.names),
        "directed": graph.directed,
        "weights": graph.weights.ravel().tolist(),
        "coords": layout.coords.tolist(),
    }
    _write_json(_resolve(args.out), payload)
    return 0


def _split(args, clips):
    if args.val_clips:
        val, _ = archive.read_clips(_resolve(args.val_clips))
        return clips, val
    seed = args.seed if args.seed is not None else 0
    return split_by_recording(clips, args.val_frac, seed)


def _graph_source(args, config) -> GraphSource:
    source = _section(config, "graph", GraphSource)
    if getattr(args, "graph_mode", None):
        source.mode = args.graph_mode
    return source


def _cmd_pretrain(args, config) -> int:
    clips, manifest = archive.read_clips(_resolve(args.clips))
    train_clips, val_clips = _split(args, clips)
    source = _graph_source(args, config)
    model_cfg = _section(config, "model", ModelConfig, task="pretrain", conv_kind=source.conv_kind)
    train_cfg = _section(config, "train", TrainConfig, task="pretrain")
    if args.seed is not None:
        train_cfg.seed = args.seed
    weights, report = pretrain_self_supervised(
        train_clips, val_clips, source, model_cfg, train_cfg
    )
    save_weights(weights, _resolve(args.out))
    if args.report:
        _write_json(_resolve(args.report), report.to_dict())
    return 0


def _cmd_train(args, config) -> int:
    clips, manifest = archive.read_clips(_resolve(args.clips))
    train_clips, val_clips = _split(args, clips)
    source = _graph_source(args, config)
    model_cfg = _section(config, "model", ModelConfig, task=args.task, conv_kind=source.conv_kind)
    train_cfg = _section(config, "train", TrainConfig, task=args.task, lambda_aux=args.aux_lambda)
    if args.seed is not None:
        train_cfg.seed = args.seed
    init_from = load_weights(_resolve(args.init)) if args.init else None
    if args.task == "detect":
        if train_cfg.lambda_aux > 0:
            weights, report = train_auxiliary(train_clips, val_clips, source, model_cfg, train_cfg)
        else:
            weights, report = train_detection(
                train_clips, val_clips, source, model_cfg, train_cfg, init_from=init_from
            )
    else:
        weights, report = train_classification(
            train_clips, val_clips, source, model_cfg, train_cfg, init_from=init_from
        )
    save_weights(weights, _resolve(args.out))
    if args.report:
        _write_json(_resolve(args.report), report.to_dict())
    return 0


def _meta_stats(weights) -> NormStats:
    meta = weights.meta
    return NormStats(mean=np.asarray(meta["norm_mean"]), std=np.asarray(meta["norm_std"]))


def _cmd_eval(args, config) -> int:
    weights = load_weights(_resolve(args.weights))
    clips, _ = archive.read_clips(_resolve(args.clips))
    stats = _meta_stats(weights)
    source = GraphSource(**weights.meta["graph"])
    logits = predict_logits(weights, clips, source, stats)
    labels = np.array([c.label for c in clips])
    report = {"n_clips": len(clips), "task": weights.config.task}
    if weights.config.task == "detect":
        probs = expit(logits)
        if args.threshold == "auto":
            threshold = weights.meta.get("threshold")
            if threshold is None:
                raise CliError("weights carry no stored threshold; pass --threshold")
        else:
            threshold = float(args.threshold)
        preds = (probs >= threshold).astype(int)
        sens, spec = met.sensitivity_specificity(preds, labels)
        report.update(
            threshold=threshold,
            auroc=met.auroc(probs, labels),
            aupr=met.aupr(probs, labels),
            f1=met.f1(preds, labels),
            sensitivity=sens,
            specificity=spec,
        )
    else:
        preds = np.argmax(logits, axis=1)
        n_classes = weights.config.n_classes
        cm = met.confusion(preds, labels, n_classes)
        report.update(
            weighted_f1=met.weighted_f1(preds, labels, n_classes),
            accuracy=float(np.mean(preds == labels)),
            confusion=cm.counts.tolist(),
            confusion_normalized=cm.normalized().tolist(),
        )
    _write_json(_resolve(args.report), report)
    return 0


def clip_annotation_grid(clip, n_channels: int) -> np.ndarray:
    """Channel-second ground truth rebuilt from a clip's stored events."""
    t_steps = clip.features.shape[0]
    grid = np.zeros((n_channels, t_steps), dtype=np.uint8)
    for event in clip.events:
        for j in range(min(clip.valid_len, t_steps)):
            if event["onset_sec"] < j + 1 and event["offset_sec"] > j:
                if event.get("channel_mask") is None:
                    grid[:, j] = 1
                else:
                    grid[np.asarray(event["channel_mask"], dtype=bool), j] = 1
    return grid


def _cmd_interpret(args, config) -> int:
    weights = load_weights(_resolve(args.weights))
    clips, _ = archive.read_clips(_resolve(args.clips))
    if args.limit:
        clips = clips[: args.limit]
    stats = _meta_stats(weights)
    source = GraphSource(**weights.meta["graph"])
    layout = ElectrodeLayout.standard_10_20()
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    refresh = not args.freeze_graph

    def one(item):
        i, clip = item
        if args.task == "detect":
            occ = interpret.occlusion_detect(
                clip, weights, source, stats, layout, refresh_graph=refresh
            )
        else:
            occ = interpret.occlusion_classify(
                clip, weights, source, stats, layout, refresh_graph=refresh
            )
        return i, occ

    items = list(enumerate(clips))
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = sorted(pool.map(one, items))
    else:
        results = [one(it) for it in items]

    if source.mode == "distance":
        shared_graph = build_distance_graph(layout, source.kappa)
    elif source.mode == "distance-bandwidth":
        shared_graph = build_distance_graph_bandwidth(layout, source.bandwidth)
    else:
        shared_graph = None

    maps, masks = [], []
    for i, occ in results:
        clip = clips[i]
        graph = shared_graph
        if graph is None:
            feats = clip.features.copy()
            feats[: clip.valid_len] = (feats[: clip.valid_len] - stats.mean) / stats.std
            graph = build_correlation_graph(feats, clip.valid_len, tau=source.tau)
        interpret.export_overlay(occ, layout, graph, out / f"clip{i:05d}")
        maps.append(occ)
        masks.append(clip_annotation_grid(clip, layout.n_electrodes))
    if args.task == "detect":
        keep = [(m, a) for m, a in zip(maps, masks) if a.sum() > 0]
        summary = interpret.score_distributions(
            [m for m, _ in keep], [a for _, a in keep]
        )
        summary["n_maps"] = len(maps)
        summary["n_with_annotation"] = len(keep)
    else:
        summary = {"n_maps": len(maps)}
    summary["degenerate_maps"] = int(sum(m.degenerate for m in maps))
    _write_json(out / "summary.json", summary)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "graph": _cmd_graph,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "interpret": _cmd_interpret,
}

_CONFIG_ERRORS = (presets.PresetError, CliError, json.JSONDecodeError, FileNotFoundError)


def dispatch(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = _load_config(args)
        return _COMMANDS[args.command](args, config)
    except _CONFIG_ERRORS as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report and signal failure
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
