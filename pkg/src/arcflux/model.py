"""The sequence classifier: lift, gated scan blocks, RMSNorm, head.

Each amplified window arrives as 2K scalars.  Every scalar is lifted to a
D-vector, the sequence runs through a stack of pre-norm residual blocks
(input projection, depthwise causal conv, SiLU, input-dependent scan,
SiLU gate, output projection), and a configurable head turns the final
representation into two logits.

Internals are time-major: activations have shape (L, B, features).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Workspace
from .errors import CheckpointError, ConfigError
from .fas import FasFeatures
from .ssm import SelectiveParams

__all__ = [
    "HEAD_KINDS",
    "ModelConfig",
    "BlockParams",
    "ModelParams",
    "rmsnorm",
    "block_forward",
    "model_forward",
    "forward_batch",
    "init_params",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
]

HEAD_KINDS = ("linear-last", "linear-dropout", "mlp", "mean-pool-linear")
BLOCK_GRID = (2, 4, 8, 16)
RMSNORM_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    expand: int = 2
    n_state: int = 16
    n_blocks: int = 4
    conv_width: int = 4
    k_fas: int = 512
    head_kind: str = "linear-last"
    dropout_p: float = 0.1

    def __post_init__(self):
        for name in ("d_model", "expand", "n_state", "conv_width", "k_fas"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.n_blocks, (int, np.integer)) or self.n_blocks < 0:
            raise ConfigError("n_blocks must be a non-negative integer")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}, got {self.head_kind!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def seq_len(self) -> int:
        """Model sequence length: the 2K amplified values per window."""
        return 2 * self.k_fas

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "expand": self.expand,
            "n_state": self.n_state,
            "n_blocks": self.n_blocks,
            "conv_width": self.conv_width,
            "k_fas": self.k_fas,
            "head_kind": self.head_kind,
            "dropout_p": self.dropout_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class BlockParams:
    """One gated scan block.  All leaves are autodiff Tensors.

    The decay diagonal is stored as a_log with a_diag = -exp(a_log), which
    keeps it strictly negative no matter what the optimizer does to it.
    """

    w_in: Tensor
    b_in: Tensor
    conv_kernel: Tensor
    w_delta: Tensor
    b_delta: Tensor
    w_b: Tensor
    w_c: Tensor
    a_log: Tensor
    w_out: Tensor
    b_out: Tensor
    norm_gain: Tensor

    FIELDS = (
        "w_in", "b_in", "conv_kernel", "w_delta", "b_delta",
        "w_b", "w_c", "a_log", "w_out", "b_out", "norm_gain",
    )

    @property
    def selective(self) -> SelectiveParams:
        """Validated view of the input-dependent dynamics."""
        return SelectiveParams(
            w_delta=self.w_delta.data,
            b_delta=self.b_delta.data,
            w_b=self.w_b.data,
            w_c=self.w_c.data,
            a_diag=-np.exp(self.a_log.data),
        )


@dataclass
class ModelParams:
    config: ModelConfig
    lift_w: Tensor
    lift_b: Tensor
    blocks: list[BlockParams]
    final_norm_gain: Tensor
    head: dict[str, Tensor]
    _workspace: Workspace = field(default_factory=Workspace, repr=False)

    def named_tensors(self):
        """Stable (name, Tensor) iteration used by optimizer and checkpoint."""
        yield "lift_w", self.lift_w
        yield "lift_b", self.lift_b
        for i, blk in enumerate(self.blocks):
            for name in BlockParams.FIELDS:
                yield f"blocks.{i}.{name}", getattr(blk, name)
        yield "final_norm_gain", self.final_norm_gain
        for name in sorted(self.head):
            yield f"head.{name}", self.head[name]

    def n_params(self) -> int:
        return sum(t.data.size for _, t in self.named_tensors())

    def zero_grad(self):
        for _, t in self.named_tensors():
            t.zero_grad()


def rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float = RMSNORM_EPS) -> np.ndarray:
    """x * gain / sqrt(mean(x^2) + eps) along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    return x * gain / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)


def _head_names(cfg: ModelConfig) -> dict[str, tuple]:
    d = cfg.d_model
    if cfg.head_kind == "mlp":
        return {"w1": (d, d), "b1": (d,), "w2": (d, 2), "b2": (2,)}
    return {"w": (d, 2), "b": (2,)}


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for a config."""
    d, ed, n, w = cfg.d_model, cfg.d_inner, cfg.n_state, cfg.conv_width
    per_block = (
        d * 2 * ed + 2 * ed      # input projection
        + ed * w                 # depthwise conv
        + ed * ed + ed           # delta map
        + 2 * ed * n             # B and C maps
        + n                      # decay diagonal (a_log)
        + ed * d + d             # output projection
        + d                      # block norm gain
    )
    head = sum(int(np.prod(s)) for s in _head_names(cfg).values())
    return 2 * d + cfg.n_blocks * per_block + d + head


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Deterministic fan-in-scaled uniform initialization.

    Biases use the same fan-in-scaled draw as their weights.  A zero lift
    bias would be degenerate here: every position would then be a scalar
    multiple of one vector, which the scale-invariant norm collapses to a
    constant sequence, cutting the blocks off from the input at init.

    The delta bias is drawn so that softplus(b_delta) lands in
    [1e-3, 1e-1], giving every channel a usable initial step size.
    """
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        limit = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-limit, limit, shape), requires_grad=True)

    d, ed, n, w = cfg.d_model, cfg.d_inner, cfg.n_state, cfg.conv_width
    lift_w = uniform((d,), 1)
    lift_b = uniform((d,), 1)
    blocks = []
    for _ in range(cfg.n_blocks):
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), ed))
        b_delta = Tensor(np.log(np.expm1(dt)), requires_grad=True)
        blocks.append(
            BlockParams(
                w_in=uniform((d, 2 * ed), d),
                b_in=uniform((2 * ed,), d),
                conv_kernel=uniform((ed, w), w),
                w_delta=uniform((ed, ed), ed),
                b_delta=b_delta,
                w_b=uniform((ed, n), ed),
                w_c=uniform((ed, n), ed),
                a_log=Tensor(np.log(np.arange(1.0, n + 1.0)), requires_grad=True),
                w_out=uniform((ed, d), ed),
                b_out=uniform((d,), ed),
                norm_gain=Tensor(np.ones(d), requires_grad=True),
            )
        )
    head = {}
    for name, shape in _head_names(cfg).items():
        fan_in = shape[0] if name.startswith("w") else d
        head[name] = uniform(shape, fan_in)
    return ModelParams(
        config=cfg,
        lift_w=lift_w,
        lift_b=lift_b,
        blocks=blocks,
        final_norm_gain=Tensor(np.ones(d), requires_grad=True),
        head=head,
    )


def _block_apply(p: BlockParams, x: Tensor, tag: str | None, ws: Workspace | None) -> Tensor:
    xp = ad.matmul(x, p.w_in) + p.b_in
    ed = p.conv_kernel.data.shape[0]
    x1 = ad.narrow(xp, 0, ed)
    z = ad.narrow(xp, ed, ed)
    u = ad.silu(ad.causal_conv1d(x1, p.conv_kernel))
    delta = ad.softplus(ad.matmul(u, p.w_delta) + p.b_delta)
    bmat = ad.matmul(u, p.w_b)
    cmat = ad.matmul(u, p.w_c)
    a_diag = ad.neg_exp(p.a_log)
    y = ad.selective_scan_fused(delta, u, bmat, cmat, a_diag, tag=tag, workspace=ws)
    o = y * ad.silu(z)
    return ad.matmul(o, p.w_out) + p.b_out


def block_forward(p: BlockParams, x: np.ndarray) -> np.ndarray:
    """One block over a single (L, D) sequence, inference mode.

    The caller is expected to have normalized x already; the residual add
    also belongs to the caller.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must have shape (L, D)")
    with ad.no_grad():
        out = _block_apply(p, Tensor(x[:, None, :]), None, None)
    return out.data[:, 0, :]


def forward_batch(
    params: ModelParams,
    feats: np.ndarray,
    *,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
    reuse_buffers: bool = False,
) -> Tensor:
    """Forward a (B, 2K) batch of amplified windows to (B, 2) logits.

    train=True keeps the graph recording of the caller's context and turns
    the dropout head on (requires dropout_rng).  reuse_buffers opts the
    scan into tagged cross-step buffer reuse; only the training loop,
    which finishes each backward before the next forward, should set it.
    """
    cfg = params.config
    feats = np.asarray(feats, dtype=params.lift_w.dtype)
    if feats.ndim != 2 or feats.shape[1] != cfg.seq_len:
        raise ConfigError(
            f"expected feature batch of shape (B, {cfg.seq_len}), got {feats.shape}"
        )
    ws = params._workspace
    x = Tensor(np.ascontiguousarray(feats.T)[:, :, None])  # (L, B, 1)
    x = x * params.lift_w + params.lift_b
    for i, blk in enumerate(params.blocks):
        tag = f"block{i}" if reuse_buffers else None
        normed = ad.rmsnorm(x, blk.norm_gain, RMSNORM_EPS)
        x = x + _block_apply(blk, normed, tag, ws)
    x = ad.rmsnorm(x, params.final_norm_gain, RMSNORM_EPS)
    head = params.head
    kind = cfg.head_kind
    if kind == "mean-pool-linear":
        pooled = ad.mean_steps(x)
        return ad.matmul(pooled, head["w"]) + head["b"]
    last = ad.select_step(x, x.data.shape[0] - 1)
    if kind == "linear-last":
        return ad.matmul(last, head["w"]) + head["b"]
    if kind == "linear-dropout":
        if train:
            if dropout_rng is None:
                raise ConfigError("linear-dropout head needs a dropout_rng in training mode")
            last = ad.dropout(last, cfg.dropout_p, dropout_rng)
        return ad.matmul(last, head["w"]) + head["b"]
    hidden = ad.silu(ad.matmul(last, head["w1"]) + head["b1"])
    return ad.matmul(hidden, head["w2"]) + head["b2"]


def model_forward(params: ModelParams, features: FasFeatures | np.ndarray) -> np.ndarray:
    """Logits for one amplified window (eval mode, deterministic)."""
    values = features.values if isinstance(features, FasFeatures) else np.asarray(features)
    with ad.no_grad():
        logits = forward_batch(params, values[None, :])
    return logits.data[0]


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config JSON, named float64 tensors,
# then a sha256 of everything before it.  Round-trips byte-identically.

_CKPT_MAGIC = b"ARCFLUX-CKPT"
_CKPT_VERSION = 1


def save_checkpoint(path, params: ModelParams) -> None:
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<I", _CKPT_VERSION))
    cfg_blob = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    named = list(params.named_tensors())
    buf.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        encoded = name.encode()
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as f:
        f.write(payload)
        f.write(digest)


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(_CKPT_MAGIC) + 4 + 32:
        raise CheckpointError("checkpoint file too short to be valid")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch; file is corrupted")
    view = io.BytesIO(payload)

    def take(n, what):
        b = view.read(n)
        if len(b) != n:
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        return b

    if take(len(_CKPT_MAGIC), "magic") != _CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    cfg = ModelConfig.from_dict(json.loads(take(cfg_len, "config")))
    (n_tensors,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode()
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, "shape"))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * count, f"tensor {name}"), dtype="<f8")
        tensors[name] = Tensor(data.reshape(shape).copy(), requires_grad=True)
    return _assemble(cfg, tensors)


def _assemble(cfg: ModelConfig, tensors: dict[str, Tensor]) -> ModelParams:
    try:
        blocks = []
        for i in range(cfg.n_blocks):
            blocks.append(
                BlockParams(**{
                    name: tensors[f"blocks.{i}.{name}"] for name in BlockParams.FIELDS
                })
            )
        head = {
            name: tensors[f"head.{name}"] for name in _head_names(cfg)
        }
        return ModelParams(
            config=cfg,
            lift_w=tensors["lift_w"],
            lift_b=tensors["lift_b"],
            blocks=blocks,
            final_norm_gain=tensors["final_norm_gain"],
            head=head,
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc.args[0]!r}") from exc
