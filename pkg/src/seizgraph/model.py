"""Graph-convolutional recurrent networks over EEG graphs.

The recurrent cell is a GRU whose dense multiplications are replaced by
graph convolutions: a bidirectional random-walk diffusion filter on
directed graphs, or a Chebyshev-polynomial spectral filter on undirected
ones.  Stacked cells form the encoder; task heads apply a per-node
fully-connected map and max-pool over nodes, keeping node-level saliency
meaningful and the readout permutation-invariant.  The sequence-to-sequence
variant adds a decoder stack plus an output projection for self-supervised
future-frame prediction.
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphOperators
from .seeding import stream

WEIGHTS_MAGIC = b"SGWGTS01"

GATES = ("theta_r", "b_r", "theta_u", "b_u", "theta_c", "b_c")


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    conv_kind: str = "diffusion"  # "diffusion" (directed) | "chebyshev" (undirected)
    k_hops: int = 2
    layers: int = 2
    hidden: int = 64
    dropout_head: float = 0.0
    task: str = "detect"  # "detect" | "classify" | "pretrain"
    n_classes: int = 4
    horizon: int = 12  # decoder steps for the pretraining task
    n_nodes: int = 19
    n_features: int = 100

    def validate(self) -> None:
        if self.conv_kind not in ("diffusion", "chebyshev"):
            raise ModelError(f"unknown conv_kind {self.conv_kind!r}")
        if self.task not in ("detect", "classify", "pretrain"):
            raise ModelError(f"unknown task {self.task!r}")
        if self.k_hops < 1 or self.layers < 1 or self.hidden < 1:
            raise ModelError("k_hops, layers and hidden must be >= 1")
        if self.task == "classify" and self.n_classes < 2:
            raise ModelError("classification needs at least 2 classes")

    @property
    def directions(self) -> int:
        return 2 if self.conv_kind == "diffusion" else 1

    @property
    def n_supports(self) -> int:
        return self.k_hops * self.directions


@dataclass
class DcgruLayerWeights:
    """Convolution-filter parameters and biases for one recurrent layer."""

    theta_r: Tensor
    b_r: Tensor
    theta_u: Tensor
    b_u: Tensor
    theta_c: Tensor
    b_c: Tensor


@dataclass
class ModelWeights:
    config: ModelConfig
    encoder: list
    head_w: Tensor | None = None
    head_b: Tensor | None = None
    decoder: list = field(default_factory=list)
    proj_w: Tensor | None = None
    proj_b: Tensor | None = None
    meta: dict = field(default_factory=dict)

    def named_parameters(self) -> dict:
        params = {}
        for prefix, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for l, lw in enumerate(layers):
                for name in GATES:
                    params[f"{prefix}.{l}.{name}"] = getattr(lw, name)
        if self.head_w is not None:
            params["head.weight"] = self.head_w
            params["head.bias"] = self.head_b
        if self.proj_w is not None:
            params["proj.weight"] = self.proj_w
            params["proj.bias"] = self.proj_b
        return params

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()


def expected_shapes(config: ModelConfig) -> dict:
    """Tensor name -> shape map implied by a model configuration."""
    config.validate()
    s = config.n_supports
    h = config.hidden
    shapes = {}
    for l in range(config.layers):
        f_in = config.n_features if l == 0 else h
        for name in GATES:
            full = f"encoder.{l}.{name}"
            shapes[full] = (s, f_in + h, h) if name.startswith("theta") else (h,)
    if config.task == "detect":
        shapes["head.weight"] = (h, 1)
        shapes["head.bias"] = (1,)
    elif config.task == "classify":
        shapes["head.weight"] = (h, config.n_classes)
        shapes["head.bias"] = (config.n_classes,)
    else:  # pretrain: decoder stack mirrors the encoder, plus output projection
        for l in range(config.layers):
            f_in = config.n_features if l == 0 else h
            for name in GATES:
                full = f"decoder.{l}.{name}"
                shapes[full] = (s, f_in + h, h) if name.startswith("theta") else (h,)
        shapes["proj.weight"] = (h, config.n_features)
        shapes["proj.bias"] = (config.n_features,)
    return shapes


def _glorot(rng: np.random.Generator, shape) -> np.ndarray:
    if len(shape) == 1:
        return np.zeros(shape)
    if len(shape) == 3:
        fan_in = shape[0] * shape[1]
        fan_out = shape[2]
    else:
        fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    """Seeded uniform Glorot init for filters, zeros for biases.

    Every tensor draws from its own named stream, so adding or removing a
    tensor (for example a decoder) never shifts another tensor's init.
    """
    shapes = expected_shapes(config)
    arrays = {
        name: _glorot(stream(seed, "init", name), shape) for name, shape in shapes.items()
    }
    return _weights_from_arrays(config, arrays)


def _weights_from_arrays(config: ModelConfig, arrays: dict) -> ModelWeights:
    def build_stack(prefix, count):
        stack = []
        for l in range(count):
            stack.append(
                DcgruLayerWeights(
                    **{
                        name: Tensor(arrays[f"{prefix}.{l}.{name}"], requires_grad=True)
                        for name in GATES
                    }
                )
            )
        return stack

    weights = ModelWeights(config=config, encoder=build_stack("encoder", config.layers))
    if config.task in ("detect", "classify"):
        weights.head_w = Tensor(arrays["head.weight"], requires_grad=True)
        weights.head_b = Tensor(arrays["head.bias"], requires_grad=True)
    else:
        weights.decoder = build_stack("decoder", config.layers)
        weights.proj_w = Tensor(arrays["proj.weight"], requires_grad=True)
        weights.proj_b = Tensor(arrays["proj.bias"], requires_grad=True)
    return weights


def _conv_supports(x: Tensor, ops: GraphOperators, kind: str, k_hops: int) -> Tensor:
    """Stack the diffusion or Chebyshev basis blocks along the feature axis.

    Powers are applied iteratively as matrix-vector products; dense matrix
    powers are never formed here.
    """
    if kind == "diffusion":
        blocks = []
        for transition in (ops.out_transition, ops.in_transition):
            cur = x
            blocks.append(cur)
            for _ in range(k_hops - 1):
                cur = ad.matmul(transition, cur)
                blocks.append(cur)
    else:
        if ops.scaled_laplacian is None:
            raise ModelError("chebyshev convolution requires an undirected graph")
        scaled = ops.scaled_laplacian
        blocks = [x]
        if k_hops > 1:
            blocks.append(ad.matmul(scaled, x))
        for _ in range(2, k_hops):
            nxt = ad.sub(ad.mul(2.0, ad.matmul(scaled, blocks[-1])), blocks[-2])
            blocks.append(nxt)
    if len(blocks) == 1:
        return blocks[0]
    return ad.concat(blocks, axis=-1)


def _apply_filter(supports: Tensor, theta: Tensor, bias: Tensor | None) -> Tensor:
    s, f, h = theta.shape
    out = ad.matmul(supports, ad.reshape(theta, (s * f, h)))
    if bias is not None:
        out = ad.add(out, bias)
    return out


def diffusion_conv(x, ops: GraphOperators, theta, bias=None, k_hops: int | None = None) -> Tensor:
    """Bidirectional random-walk diffusion convolution on a directed graph."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    if k_hops is None:
        k_hops = theta.shape[0] // 2
    if k_hops < 1:
        raise ModelError("diffusion convolution needs k_hops >= 1")
    supports = _conv_supports(x, ops, "diffusion", k_hops)
    return _apply_filter(supports, theta, bias)


def chebyshev_conv(x, ops: GraphOperators, theta, bias=None, k_hops: int | None = None) -> Tensor:
    """Chebyshev-polynomial spectral convolution on an undirected graph."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    if k_hops is None:
        k_hops = theta.shape[0]
    supports = _conv_supports(x, ops, "chebyshev", k_hops)
    return _apply_filter(supports, theta, bias)


def dcgru_step(
    x: Tensor,
    h_prev: Tensor,
    lw: DcgruLayerWeights,
    ops: GraphOperators,
    kind: str,
    k_hops: int,
) -> Tensor:
    """One gated recurrent update with graph-convolutional gates."""
    xh = ad.concat([x, h_prev], axis=-1)
    s_gate = _conv_supports(xh, ops, kind, k_hops)
    r = ad.sigmoid(_apply_filter(s_gate, lw.theta_r, lw.b_r))
    u = ad.sigmoid(_apply_filter(s_gate, lw.theta_u, lw.b_u))
    xc = ad.concat([x, ad.mul(r, h_prev)], axis=-1)
    s_cand = _conv_supports(xc, ops, kind, k_hops)
    c = ad.tanh(_apply_filter(s_cand, lw.theta_c, lw.b_c))
    return ad.add(ad.mul(u, h_prev), ad.mul(ad.sub(1.0, u), c))


def encode(
    features: np.ndarray,
    valid_len,
    weights: ModelWeights,
    ops: GraphOperators,
    capture_step: int | None = None,
):
    """Run the encoder stack over a batch of clips.

    ``features`` is (B, T, N, M) with zero padding past each clip's valid
    length; hidden states freeze once a clip's valid steps are exhausted, so
    the returned per-layer states are the last-valid-step states.  When
    ``capture_step`` is set, the per-layer states after that many steps are
    returned as well (used by the auxiliary prediction task).

    Returns (final_states, captured_states) as lists of (B, N, hidden).
    """
    cfg = weights.config
    batch, t_steps = features.shape[0], features.shape[1]
    valid = np.broadcast_to(np.asarray(valid_len, dtype=np.int64), (batch,))
    if np.any(valid < 1):
        raise ModelError("every clip needs at least one valid step")
    hidden = [
        Tensor(np.zeros((batch, cfg.n_nodes, cfg.hidden))) for _ in range(cfg.layers)
    ]
    needs_mask = bool(np.any(valid < t_steps))
    captured = None
    for t in range(t_steps):
        if needs_mask and not np.any(t < valid):
            break
        x_in = Tensor(features[:, t])
        if needs_mask:
            keep = (t < valid).astype(np.float64).reshape(batch, 1, 1)
        for l, lw in enumerate(weights.encoder):
            cand = dcgru_step(x_in, hidden[l], lw, ops, cfg.conv_kind, cfg.k_hops)
            if needs_mask:
                cand = ad.add(ad.mul(cand, keep), ad.mul(hidden[l], 1.0 - keep))
            hidden[l] = cand
            x_in = cand
        if capture_step is not None and t == capture_step - 1:
            captured = list(hidden)
    return hidden, captured


def _dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    mask = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return ad.mul(x, mask)


def head_logits(
    h_top: Tensor,
    weights: ModelWeights,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-node fully-connected map followed by max-pooling over nodes.

    Inverted dropout is applied to the pre-head hidden vector at train time
    only.  Returns (B,) logits for detection, (B, n_classes) otherwise.
    """
    cfg = weights.config
    h = h_top
    if train_mode and cfg.dropout_head > 0.0:
        if rng is None:
            raise ModelError("dropout at train time needs an RNG")
        h = _dropout(h, cfg.dropout_head, rng)
    z = ad.add(ad.matmul(h, weights.head_w), weights.head_b)  # (B, N, out)
    z = ad.max_axis(z, axis=1)
    if cfg.task == "detect":
        z = ad.reshape(z, (z.shape[0],))
    return z


def decode(
    init_states,
    weights: ModelWeights,
    ops: GraphOperators,
    steps: int,
    teacher: np.ndarray | None = None,
) -> Tensor:
    """Roll the decoder out for ``steps`` frames.

    The decoder starts from the encoder's per-layer states and a zero input
    frame.  With ``teacher`` given (B, steps, N, M ground truth) each step
    consumes the previous true frame; otherwise the previous prediction is
    fed back autoregressively.

    Returns predictions of shape (B, steps, N, M).
    """
    cfg = weights.config
    if not weights.decoder:
        raise ModelError("weights carry no decoder stack")
    hidden = list(init_states)
    batch = hidden[0].shape[0]
    if teacher is not None and teacher.shape[1] < steps:
        raise ModelError(
            f"teacher frames cover {teacher.shape[1]} steps, need {steps}"
        )
    x = Tensor(np.zeros((batch, cfg.n_nodes, cfg.n_features)))
    outputs = []
    for t in range(steps):
        x_in = x
        for l, lw in enumerate(weights.decoder):
            hidden[l] = dcgru_step(x_in, hidden[l], lw, ops, cfg.conv_kind, cfg.k_hops)
            x_in = hidden[l]
        frame = ad.add(ad.matmul(hidden[-1], weights.proj_w), weights.proj_b)
        outputs.append(ad.reshape(frame, (batch, 1, cfg.n_nodes, cfg.n_features)))
        x = Tensor(teacher[:, t]) if teacher is not None else frame
    return ad.concat(outputs, axis=1)


def forward_task(
    weights: ModelWeights,
    ops: GraphOperators,
    features: np.ndarray,
    valid_len,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encoder plus task head for detection/classification batches."""
    final_states, _ = encode(features, valid_len, weights, ops)
    return head_logits(final_states[-1], weights, train_mode=train_mode, rng=rng)


def save_weights(weights: ModelWeights, path) -> None:
    """Versioned binary: JSON header (config echo) plus named tensor blobs."""
    params = weights.named_parameters()
    header = {
        "format_version": 1,
        "config": asdict(weights.config),
        "meta": weights.meta,
        "tensors": [
            {"name": name, "shape": list(t.data.shape), "dtype": "<f8"}
            for name, t in params.items()
        ],
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_weights(path) -> ModelWeights:
    raw = Path(path).read_bytes()
    if raw[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise ModelError(f"{path} is not a model weight file")
    (header_len,) = struct.unpack_from("<Q", raw, len(WEIGHTS_MAGIC))
    start = len(WEIGHTS_MAGIC) + 8
    header = json.loads(raw[start : start + header_len].decode("utf-8"))
    config = ModelConfig(**header["config"])
    shapes = expected_shapes(config)
    offset = start + header_len
    arrays = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in shapes:
            raise ModelError(f"unexpected tensor {name!r} in weight file")
        if shape != shapes[name]:
            raise ModelError(
                f"tensor {name!r} shape {shape} does not match config "
                f"expectation {shapes[name]}"
            )
        count = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(raw, dtype=entry["dtype"], count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += count * np.dtype(entry["dtype"]).itemsize
    missing = set(shapes) - set(arrays)
    if missing:
        raise ModelError(f"weight file is missing tensors: {sorted(missing)}")
    weights = _weights_from_arrays(config, arrays)
    weights.meta = header.get("meta", {})
    return weights


def transfer_encoder(target: ModelWeights, source: ModelWeights) -> int:
    """Copy pretrained encoder tensors into a task model, head left fresh.

    Layers are matched by position up to the shallower stack; every copied
    tensor must match shapes exactly.  Returns the number of layers copied.
    """
    n = min(len(target.encoder), len(source.encoder))
    for l in range(n):
        for name in GATES:
            src = getattr(source.encoder[l], name)
            dst = getattr(target.encoder[l], name)
            if src.data.shape != dst.data.shape:
                raise ModelError(
                    f"encoder.{l}.{name} shape mismatch: "
                    f"{src.data.shape} vs {dst.data.shape}"
                )
            dst.data = src.data.copy()
    return n
