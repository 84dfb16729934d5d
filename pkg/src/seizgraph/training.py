"""Optimization, losses, and the detection/classification/pretraining loops.

All loops share one engine: seeded shuffling with the last partial batch
kept, Adam with a cosine-annealed learning rate over the full planned step
horizon, early stopping on validation loss with a patience window, and
best-validation weights retained.  Every run is a pure function of
(seed, config, data); each random consumer draws from its own named stream.
"""

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from . import metrics as met
from .autodiff import Tape, Tensor
from .electrodes import ElectrodeLayout
from .graph import (
    GraphOperators,
    build_correlation_graph,
    build_distance_graph,
    build_distance_graph_bandwidth,
    graph_operators,
)
from .model import (
    ModelConfig,
    ModelWeights,
    decode,
    encode,
    head_logits,
    init_weights,
    transfer_encoder,
)
from .preprocess import apply_norm, augment_midline_reflect, augment_scale, fit_norm_stats
from .seeding import stream

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str = "detect"
    lr_init: float = 1e-4
    lr_min: float = 0.0
    epochs_max: int = 100
    batch_size: int = 40
    patience: int = 5
    seed: int = 0
    lambda_aux: float = 0.0
    aux_horizon: int = 6
    undersample: bool = True
    augment: bool = True

    def validate(self) -> None:
        if self.lr_init <= 0:
            raise TrainingError("lr_init must be positive")
        if self.patience < 1:
            raise TrainingError("patience must be >= 1")
        if self.lambda_aux < 0:
            raise TrainingError("lambda_aux must be nonnegative")


@dataclass
class GraphSource:
    """How the model's graph is obtained for each clip.

    Distance modes yield one shared undirected graph; correlation mode
    builds a directed graph per clip from its normalized features (cached,
    since the graph depends only on the clip).
    """

    mode: str = "distance"  # "distance" | "distance-bandwidth" | "correlation"
    kappa: float = 0.9
    bandwidth: float = 0.06
    tau: int = 3
    zero_lag_only: bool = False

    @property
    def conv_kind(self) -> str:
        return "diffusion" if self.mode == "correlation" else "chebyshev"

    def shared_operators(self, layout: ElectrodeLayout) -> GraphOperators:
        if self.mode == "distance":
            return graph_operators(build_distance_graph(layout, self.kappa))
        if self.mode == "distance-bandwidth":
            return graph_operators(build_distance_graph_bandwidth(layout, self.bandwidth))
        raise TrainingError("correlation graphs are per-clip; use clip_operators")

    def clip_operators(self, features: np.ndarray, valid_len: int) -> GraphOperators:
        graph = build_correlation_graph(
            features, valid_len, tau=self.tau, zero_lag_only=self.zero_lag_only
        )
        return graph_operators(graph)


class _OperatorProvider:
    """Resolves per-batch graph operators, caching per-clip correlation ops."""

    def __init__(self, source: GraphSource, layout: ElectrodeLayout):
        self.source = source
        self.layout = layout
        self.shared = None if source.mode == "correlation" else source.shared_operators(layout)
        self._cache = {}

    def prepare(self, key: str, features: np.ndarray, valid: np.ndarray) -> None:
        if self.shared is not None:
            return
        ops = [
            self.source.clip_operators(features[i], int(valid[i]))
            for i in range(features.shape[0])
        ]
        self._cache[key] = ops

    def batch(self, key: str, idx: np.ndarray) -> GraphOperators:
        if self.shared is not None:
            return self.shared
        ops = self._cache[key]
        return GraphOperators(
            out_transition=np.stack([ops[i].out_transition for i in idx]),
            in_transition=np.stack([ops[i].in_transition for i in idx]),
        )


def adam_step(params: dict, state: "AdamState", lr: float) -> None:
    """Standard bias-corrected Adam update over named parameters.

    A parameter with no gradient this step is treated as zero-gradient.
    Non-finite gradients abort the run with a diagnostic naming the tensor.
    """
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name!r} at step {t}")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr_max at step 0 to lr_min at total_steps."""
    if not 0 <= step <= total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * step / total_steps))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy, stable via softplus on the logits."""
    y = np.asarray(targets, dtype=np.float64)
    per = ad.add(
        ad.mul(y, ad.softplus(ad.neg(logits))),
        ad.mul(1.0 - y, ad.softplus(logits)),
    )
    return ad.reduce_mean(per)


def cross_entropy(logits: Tensor, classes) -> Tensor:
    """Mean multi-class cross-entropy via log-sum-exp."""
    classes = np.asarray(classes, dtype=np.int64)
    n_classes = logits.shape[-1]
    if np.any(classes < 0) or np.any(classes >= n_classes):
        raise TrainingError("class index out of range")
    onehot = np.eye(n_classes)[classes]
    lse = ad.logsumexp(logits, axis=-1)
    picked = ad.reduce_sum(ad.mul(logits, onehot), axis=-1)
    return ad.reduce_mean(ad.sub(lse, picked))


def mae(pred: Tensor, target, mask=None) -> Tensor:
    """Mean absolute error, averaged over valid (unmasked) entries only."""
    diff = ad.absolute(ad.sub(pred, target))
    if mask is None:
        return ad.reduce_mean(diff)
    weighted = ad.mul(diff, mask)
    denom = float(np.broadcast_to(mask, diff.shape).sum())
    return ad.mul(ad.reduce_sum(weighted), 1.0 / denom)


def undersample_to_parity(labels, rng: np.random.Generator) -> np.ndarray:
    """Indices of a class-balanced subset with min(P, N) of each class."""
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size == 0:
        raise TrainingError("no positive examples to train on")
    n = min(pos.size, neg.size)
    keep_pos = pos if pos.size == n else rng.choice(pos, size=n, replace=False)
    keep_neg = neg if neg.size == n else rng.choice(neg, size=n, replace=False)
    return np.sort(np.concatenate([keep_pos, keep_neg]))


def threshold_search(probs, labels) -> float:
    """Decision threshold maximizing F1 on validation scores.

    Candidates are the distinct predicted probabilities plus 1.0; a clip is
    predicted positive when its probability is >= the threshold, so every
    achievable prediction vector is scanned.  Ties resolve to the lowest
    threshold.
    """
    labels = np.asarray(labels)
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise TrainingError("threshold search needs both classes in validation")
    probs = np.asarray(probs, dtype=np.float64)
    candidates = np.unique(np.r_[probs, 1.0])
    best_t, best_f1 = None, -1.0
    for t in candidates:
        score = met.f1((probs >= t).astype(int), labels)
        if score > best_f1:
            best_t, best_f1 = float(t), score
    return best_t


@dataclass
class TrainReport:
    task: str
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    threshold: float | None = None
    metrics: dict = field(default_factory=dict)
    n_train: int = 0
    n_val: int = 0
    class_counts: dict | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class _ClipSet:
    """Stacked tensors for one clip list, normalized lazily per batch."""

    def __init__(self, clips, stats):
        self.features = np.stack([c.features for c in clips])
        self.valid = np.array([c.valid_len for c in clips], dtype=np.int64)
        self.labels = np.array(
            [(-1 if c.label is None else c.label) for c in clips], dtype=np.int64
        )
        self.targets = (
            np.stack([c.target for c in clips]) if clips[0].target is not None else None
        )
        self.stats = stats
        norm = self.features.copy()
        mask = np.arange(norm.shape[1])[None, :] < self.valid[:, None]
        norm[mask] = (norm[mask] - stats.mean) / stats.std
        self.normalized = norm
        self.norm_targets = (
            (self.targets - stats.mean) / stats.std if self.targets is not None else None
        )

    def __len__(self):
        return self.features.shape[0]

    def augmented_normalized(self, idx: np.ndarray, rng: np.random.Generator, channels):
        """Augment raw-feature clips for one batch, then z-normalize."""
        out = np.empty(
            (idx.size,) + self.features.shape[1:], dtype=self.features.dtype
        )
        from .preprocess import EegClip

        for row, i in enumerate(idx):
            clip = EegClip(
                features=self.features[i], valid_len=int(self.valid[i]), label=None
            )
            clip = augment_scale(clip, rng)
            clip = augment_midline_reflect(clip, rng, channels)
            out[row] = clip.features
        mask = np.arange(out.shape[1])[None, :] < self.valid[idx][:, None]
        out[mask] = (out[mask] - self.stats.mean) / self.stats.std
        return out


def _snapshot(params: dict) -> dict:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: dict, snap: dict) -> None:
    for k, p in params.items():
        p.data = snap[k].copy()


def _fit_loop(params, batch_loss, val_loss, n_train: int, cfg: TrainConfig, report: TrainReport):
    """Shared epoch engine: shuffle, step, validate, early-stop, restore best."""
    opt = AdamState.for_params(params)
    n_batches = max(1, int(np.ceil(n_train / cfg.batch_size)))
    total_steps = cfg.epochs_max * n_batches
    best_val, best_epoch, best_snap = np.inf, 0, _snapshot(params)
    global_step = 0
    for epoch in range(1, cfg.epochs_max + 1):
        order = stream(cfg.seed, "shuffle", str(epoch)).permutation(n_train)
        epoch_losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            lr = cosine_lr(global_step, total_steps, cfg.lr_init, cfg.lr_min)
            for p in params.values():
                p.zero_grad()
            with Tape() as tape:
                loss = batch_loss(idx, epoch)
                tape.backward(loss)
            adam_step(params, opt, lr)
            epoch_losses.append(float(loss.data))
            global_step += 1
        report.train_losses.append(float(np.mean(epoch_losses)))
        current = float(val_loss())
        report.val_losses.append(current)
        log.info(
            "epoch %d train %.5f val %.5f lr %.2e", epoch, report.train_losses[-1], current, lr
        )
        if current < best_val:
            best_val, best_epoch, best_snap = current, epoch, _snapshot(params)
        elif epoch - best_epoch >= cfg.patience:
            break
    _restore(params, best_snap)
    report.best_epoch = best_epoch
    report.stopped_epoch = len(report.val_losses)


def _forward_logits(weights, provider, key, data: _ClipSet, idx, features=None, train_mode=False, rng=None):
    ops = provider.batch(key, idx)
    feats = data.normalized[idx] if features is None else features
    final_states, _ = encode(feats, data.valid[idx], weights, ops)
    return head_logits(final_states[-1], weights, train_mode=train_mode, rng=rng)


def _eval_in_batches(n, batch_size, fn):
    chunks = [fn(np.arange(s, min(s + batch_size, n))) for s in range(0, n, batch_size)]
    return np.concatenate(chunks)


def predict_logits(weights, clips, graph_source, stats, layout=None, batch_size=64) -> np.ndarray:
    """Model logits for a clip list (eval mode, no augmentation)."""
    layout = layout or ElectrodeLayout.standard_10_20()
    data = _ClipSet(clips, stats)
    provider = _OperatorProvider(graph_source, layout)
    provider.prepare("eval", data.normalized, data.valid)
    return _eval_in_batches(
        len(data),
        batch_size,
        lambda idx: np.atleast_1d(
            _forward_logits(weights, provider, "eval", data, idx).data
        ),
    )


def _detection_setup(train_clips, val_clips, cfg, layout, graph_source):
    labels = np.array([c.label for c in train_clips], dtype=np.int64)
    if cfg.undersample:
        keep = undersample_to_parity(labels, stream(cfg.seed, "undersample"))
        train_clips = [train_clips[i] for i in keep]
    elif not np.any(labels == 1):
        raise TrainingError("no positive examples to train on")
    stats = fit_norm_stats(train_clips)
    train = _ClipSet(train_clips, stats)
    val = _ClipSet(val_clips, stats)
    provider = _OperatorProvider(graph_source, layout)
    provider.prepare("train", train.normalized, train.valid)
    provider.prepare("val", val.normalized, val.valid)
    return train, val, stats, provider


def _finish_weights(weights, stats, graph_source, threshold, clip_len):
    weights.meta = {
        "norm_mean": stats.mean.tolist(),
        "norm_std": stats.std.tolist(),
        "graph": asdict(graph_source),
        "threshold": threshold,
        "clip_len": int(clip_len),
    }
    return weights


def train_detection(
    train_clips,
    val_clips,
    graph_source: GraphSource,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    layout: ElectrodeLayout | None = None,
    init_from: ModelWeights | None = None,
):
    """Binary seizure detection with undersampled negatives.

    Negatives are undersampled (seeded, without replacement) to class parity
    before the run; validation BCE drives early stopping; the decision
    threshold maximizing validation F1 is stored with the weights.
    """
    cfg.validate()
    layout = layout or ElectrodeLayout.standard_10_20()
    model_cfg = replace(model_cfg, task="detect", conv_kind=graph_source.conv_kind)
    train, val, stats, provider = _detection_setup(
        train_clips, val_clips, cfg, layout, graph_source
    )
    weights = init_weights(model_cfg, cfg.seed)
    if init_from is not None:
        transfer_encoder(weights, init_from)
    params = weights.named_parameters()
    aug_rng = stream(cfg.seed, "augment")
    drop_rng = stream(cfg.seed, "dropout")
    report = TrainReport(
        task="detect",
        n_train=len(train),
        n_val=len(val),
        config={
            "model": asdict(model_cfg),
            "train": asdict(cfg),
            "graph": asdict(graph_source),
        },
    )

    def batch_loss(idx, epoch):
        feats = (
            train.augmented_normalized(idx, aug_rng, layout.names)
            if cfg.augment
            else None
        )
        logits = _forward_logits(
            weights, provider, "train", train, idx, features=feats,
            train_mode=True, rng=drop_rng,
        )
        return bce_with_logits(logits, train.labels[idx])

    def val_loss():
        logits = _eval_in_batches(
            len(val),
            cfg.batch_size,
            lambda idx: np.atleast_1d(
                _forward_logits(weights, provider, "val", val, idx).data
            ),
        )
        return float(bce_with_logits(Tensor(logits), val.labels).data)

    _fit_loop(params, batch_loss, val_loss, len(train), cfg, report)

    val_logits = _eval_in_batches(
        len(val),
        cfg.batch_size,
        lambda idx: np.atleast_1d(_forward_logits(weights, provider, "val", val, idx).data),
    )
    probs = expit(val_logits)
    threshold = threshold_search(probs, val.labels)
    preds = (probs >= threshold).astype(int)
    sens, spec = met.sensitivity_specificity(preds, val.labels)
    report.threshold = threshold
    report.metrics = {
        "val_auroc": met.auroc(probs, val.labels),
        "val_aupr": met.aupr(probs, val.labels),
        "val_f1": met.f1(preds, val.labels),
        "val_sensitivity": sens,
        "val_specificity": spec,
    }
    _finish_weights(weights, stats, graph_source, threshold, train.features.shape[1])
    return weights, report


def train_classification(
    train_clips,
    val_clips,
    graph_source: GraphSource,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    layout: ElectrodeLayout | None = None,
    init_from: ModelWeights | None = None,
):
    """Multi-class seizure-type training with cross-entropy."""
    cfg.validate()
    layout = layout or ElectrodeLayout.standard_10_20()
    labels = np.array([c.label for c in train_clips], dtype=np.int64)
    n_classes = int(labels.max()) + 1
    if n_classes < 2:
        raise TrainingError("label remap yields fewer than 2 classes")
    model_cfg = replace(
        model_cfg, task="classify", conv_kind=graph_source.conv_kind, n_classes=n_classes
    )
    stats = fit_norm_stats(train_clips)
    train = _ClipSet(train_clips, stats)
    val = _ClipSet(val_clips, stats)
    provider = _OperatorProvider(graph_source, layout)
    provider.prepare("train", train.normalized, train.valid)
    provider.prepare("val", val.normalized, val.valid)
    weights = init_weights(model_cfg, cfg.seed)
    if init_from is not None:
        transfer_encoder(weights, init_from)
    params = weights.named_parameters()
    aug_rng = stream(cfg.seed, "augment")
    drop_rng = stream(cfg.seed, "dropout")
    counts = {int(c): int(n) for c, n in zip(*np.unique(train.labels, return_counts=True))}
    report = TrainReport(
        task="classify",
        n_train=len(train),
        n_val=len(val),
        class_counts=counts,
        config={
            "model": asdict(model_cfg),
            "train": asdict(cfg),
            "graph": asdict(graph_source),
        },
    )

    def batch_loss(idx, epoch):
        feats = (
            train.augmented_normalized(idx, aug_rng, layout.names)
            if cfg.augment
            else None
        )
        logits = _forward_logits(
            weights, provider, "train", train, idx, features=feats,
            train_mode=True, rng=drop_rng,
        )
        return cross_entropy(logits, train.labels[idx])

    def val_loss():
        logits = _eval_in_batches(
            len(val),
            cfg.batch_size,
            lambda idx: np.atleast_2d(
                _forward_logits(weights, provider, "val", val, idx).data
            ),
        )
        return float(cross_entropy(Tensor(logits), val.labels).data)

    _fit_loop(params, batch_loss, val_loss, len(train), cfg, report)

    val_logits = _eval_in_batches(
        len(val),
        cfg.batch_size,
        lambda idx: np.atleast_2d(_forward_logits(weights, provider, "val", val, idx).data),
    )
    preds = np.argmax(val_logits, axis=1)
    cm = met.confusion(preds, val.labels, n_classes)
    report.metrics = {
        "val_weighted_f1": met.weighted_f1(preds, val.labels, n_classes),
        "val_accuracy": float(np.mean(preds == val.labels)),
        "val_confusion": cm.counts.tolist(),
    }
    _finish_weights(weights, stats, graph_source, None, train.features.shape[1])
    return weights, report


def pretrain_self_supervised(
    train_clips,
    val_clips,
    graph_source: GraphSource,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    layout: ElectrodeLayout | None = None,
):
    """Sequence-to-sequence future-frame prediction with MAE loss.

    Teacher forcing throughout training; the encoder weights are the
    exported artifact and can initialize either downstream task.
    """
    cfg.validate()
    layout = layout or ElectrodeLayout.standard_10_20()
    if any(c.target is None for c in train_clips + val_clips):
        raise TrainingError("pretraining clips need next-window targets")
    horizon = train_clips[0].target.shape[0]
    model_cfg = replace(
        model_cfg, task="pretrain", conv_kind=graph_source.conv_kind, horizon=horizon
    )
    stats = fit_norm_stats(train_clips)
    train = _ClipSet(train_clips, stats)
    val = _ClipSet(val_clips, stats)
    provider = _OperatorProvider(graph_source, layout)
    provider.prepare("train", train.normalized, train.valid)
    provider.prepare("val", val.normalized, val.valid)
    weights = init_weights(model_cfg, cfg.seed)
    params = weights.named_parameters()
    report = TrainReport(
        task="pretrain",
        n_train=len(train),
        n_val=len(val),
        config={
            "model": asdict(model_cfg),
            "train": asdict(cfg),
            "graph": asdict(graph_source),
        },
    )

    def rollout(data: _ClipSet, idx, teacher_forcing: bool):
        ops = provider.batch("train" if data is train else "val", idx)
        final_states, _ = encode(data.normalized[idx], data.valid[idx], weights, ops)
        teacher = data.norm_targets[idx] if teacher_forcing else None
        return decode(final_states, weights, ops, horizon, teacher=teacher)

    def batch_loss(idx, epoch):
        pred = rollout(train, idx, teacher_forcing=True)
        return mae(pred, train.norm_targets[idx])

    def val_loss():
        losses = []
        for s in range(0, len(val), cfg.batch_size):
            idx = np.arange(s, min(s + cfg.batch_size, len(val)))
            pred = rollout(val, idx, teacher_forcing=True)
            losses.append(float(mae(pred, val.norm_targets[idx]).data) * idx.size)
        return sum(losses) / len(val)

    _fit_loop(params, batch_loss, val_loss, len(train), cfg, report)
    report.metrics = {"val_mae": report.val_losses[report.best_epoch - 1]}
    _finish_weights(weights, stats, graph_source, None, train.features.shape[1])
    return weights, report


def train_auxiliary(
    train_clips,
    val_clips,
    graph_source: GraphSource,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    layout: ElectrodeLayout | None = None,
):
    """Detection with an auxiliary future-prediction loss term.

    The combined objective is detection BCE plus lambda times the MAE of
    predicting the clip's second half from the state after its first half.
    With lambda exactly zero the auxiliary term contributes nothing, so the
    run delegates to plain detection and reproduces its trajectory bitwise.
    """
    cfg.validate()
    if cfg.lambda_aux == 0.0:
        return train_detection(train_clips, val_clips, graph_source, model_cfg, cfg, layout)
    layout = layout or ElectrodeLayout.standard_10_20()
    model_cfg = replace(model_cfg, task="detect", conv_kind=graph_source.conv_kind)
    train, val, stats, provider = _detection_setup(
        train_clips, val_clips, cfg, layout, graph_source
    )
    t_steps = train.features.shape[1]
    split = t_steps - cfg.aux_horizon
    if split < 1:
        raise TrainingError("aux_horizon leaves no encoder steps")
    if np.any(train.valid < t_steps) or np.any(val.valid < t_steps):
        raise TrainingError("auxiliary training expects full-length clips")

    weights = init_weights(model_cfg, cfg.seed)
    aux_cfg = replace(model_cfg, task="pretrain", horizon=cfg.aux_horizon)
    aux_weights = init_weights(aux_cfg, cfg.seed + 1)
    aux_bundle = ModelWeights(
        config=aux_cfg,
        encoder=[],
        decoder=aux_weights.decoder,
        proj_w=aux_weights.proj_w,
        proj_b=aux_weights.proj_b,
    )
    params = dict(weights.named_parameters())
    for name, p in aux_bundle.named_parameters().items():
        params[f"aux.{name}"] = p
    aug_rng = stream(cfg.seed, "augment")
    drop_rng = stream(cfg.seed, "dropout")
    report = TrainReport(
        task="detect-aux",
        n_train=len(train),
        n_val=len(val),
        config={
            "model": asdict(model_cfg),
            "train": asdict(cfg),
            "graph": asdict(graph_source),
        },
    )

    def batch_loss(idx, epoch):
        feats = (
            train.augmented_normalized(idx, aug_rng, layout.names)
            if cfg.augment
            else train.normalized[idx]
        )
        ops = provider.batch("train", idx)
        final_states, mid_states = encode(
            feats, train.valid[idx], weights, ops, capture_step=split
        )
        logits = head_logits(
            final_states[-1], weights, train_mode=True, rng=drop_rng
        )
        detection = bce_with_logits(logits, train.labels[idx])
        pred = decode(mid_states, aux_bundle, ops, cfg.aux_horizon)
        prediction = mae(pred, feats[:, split:])
        return ad.add(detection, ad.mul(cfg.lambda_aux, prediction))

    def val_loss():
        total = 0.0
        for s in range(0, len(val), cfg.batch_size):
            idx = np.arange(s, min(s + cfg.batch_size, len(val)))
            ops = provider.batch("val", idx)
            final_states, mid_states = encode(
                val.normalized[idx], val.valid[idx], weights, ops, capture_step=split
            )
            logits = head_logits(final_states[-1], weights)
            detection = bce_with_logits(logits, val.labels[idx])
            pred = decode(mid_states, aux_bundle, ops, cfg.aux_horizon)
            prediction = mae(pred, val.normalized[idx][:, split:])
            total += (float(detection.data) + cfg.lambda_aux * float(prediction.data)) * idx.size
        return total / len(val)

    _fit_loop(params, batch_loss, val_loss, len(train), cfg, report)

    val_logits = _eval_in_batches(
        len(val),
        cfg.batch_size,
        lambda idx: np.atleast_1d(_forward_logits(weights, provider, "val", val, idx).data),
    )
    probs = expit(val_logits)
    threshold = threshold_search(probs, val.labels)
    report.threshold = threshold
    report.metrics = {"val_auroc": met.auroc(probs, val.labels)}
    _finish_weights(weights, stats, graph_source, threshold, t_steps)
    return weights, report


def split_by_recording(clips, val_frac: float, seed: int):
    """Seeded train/validation split grouped by source recording."""
    ids = sorted({c.source_ref.get("recording", "?") for c in clips})
    rng = stream(seed, "split")
    order = rng.permutation(len(ids))
    n_val = max(1, int(round(val_frac * len(ids))))
    val_ids = {ids[i] for i in order[:n_val]}
    train = [c for c in clips if c.source_ref.get("recording", "?") not in val_ids]
    val = [c for c in clips if c.source_ref.get("recording", "?") in val_ids]
    if not train or not val:
        raise TrainingError("split produced an empty train or validation set")
    return train, val
