"""BERT-style masked-LM encoder on top of :mod:`bdistill.tensor`.

Post-layernorm residual blocks, GELU feed-forward, learned absolute
positions, no token-type embeddings, and an MLM head whose output
projection is tied to the token embedding matrix.
"""
from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad
from .tokenizer import PAD_ID

MAGIC = b"MLMCKPT1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 2
    hidden_dim: int = 64
    ffn_dim: int = 0  # 0 means 4 * hidden_dim
    max_seq_len: int = 64
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden_dim)

    def validate(self) -> "ModelConfig":
        for name in ("vocab_size", "num_heads", "hidden_dim", "ffn_dim", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ValueError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "paper": dict(num_layers=6, num_heads=4, hidden_dim=512, max_seq_len=128, dropout_rate=0.1),
    "desk": dict(num_layers=2, num_heads=2, hidden_dim=64, max_seq_len=64, dropout_rate=0.1),
}


def preset(name: str, vocab_size: int, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(vocab_size=vocab_size, **{**PRESETS[name], **overrides}).validate()


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    h, f, v = config.hidden_dim, config.ffn_dim, config.vocab_size
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    shapes["embeddings.token"] = (v, h)
    shapes["embeddings.position"] = (config.max_seq_len, h)
    shapes["embeddings.ln.gain"] = (h,)
    shapes["embeddings.ln.bias"] = (h,)
    for i in range(config.num_layers):
        p = f"layers.{i}."
        for proj in ("query", "key", "value", "output"):
            shapes[p + f"attn.{proj}.weight"] = (h, h)
            shapes[p + f"attn.{proj}.bias"] = (h,)
        shapes[p + "attn.ln.gain"] = (h,)
        shapes[p + "attn.ln.bias"] = (h,)
        shapes[p + "ffn.in.weight"] = (h, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, h)
        shapes[p + "ffn.out.bias"] = (h,)
        shapes[p + "ffn.ln.gain"] = (h,)
        shapes[p + "ffn.ln.bias"] = (h,)
    shapes["head.transform.weight"] = (h, h)
    shapes["head.transform.bias"] = (h,)
    shapes["head.ln.gain"] = (h,)
    shapes["head.ln.bias"] = (h,)
    shapes["head.output_bias"] = (v,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Trainable element count; the tied output projection counts once."""
    return int(sum(math.prod(s) for s in param_shapes(config).values()))


def _truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(np.float32)


class MaskedLmModel:
    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params
        self.training = False
        self.rng = np.random.default_rng(config.seed + 7919)

    @classmethod
    def init(cls, config: ModelConfig) -> "MaskedLmModel":
        config.validate()
        rng = np.random.default_rng(config.seed)
        params: OrderedDict[str, Tensor] = OrderedDict()
        for name, shape in param_shapes(config).items():
            if name.endswith(".gain"):
                data = np.ones(shape, np.float32)
            elif name.endswith("bias"):
                data = np.zeros(shape, np.float32)
            else:
                data = _truncated_normal(rng, shape)
            params[name] = Tensor(data, requires_grad=True)
        return cls(config, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def train(self, mode: bool = True) -> "MaskedLmModel":
        self.training = mode
        return self

    def eval(self) -> "MaskedLmModel":
        return self.train(False)

    def copy(self) -> "MaskedLmModel":
        params = OrderedDict((k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.params.items())
        return MaskedLmModel(self.config, params)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v.data = state[k].copy()
            v.grad = None

    def to_bytes(self) -> bytes:
        return T.parameters_bytes(self.parameters())

    # ------------------------------------------------------------ forward

    def _check_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"token_ids must be [batch, seq], got shape {ids.shape}")
        if ids.shape[1] > self.config.max_seq_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_seq_len {self.config.max_seq_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")
        return ids

    def encode(self, ids: np.ndarray) -> Tensor:
        """Final encoder layer output, shape [batch, seq, hidden]."""
        ids = self._check_ids(ids)
        cfg, p = self.config, self.params
        batch, seq = ids.shape
        heads, dh = cfg.num_heads, cfg.hidden_dim // cfg.num_heads
        rate, train, rng = cfg.dropout_rate, self.training, self.rng

        key_mask = (ids != PAD_ID)[:, None, None, :]
        x = T.add(T.embedding(p["embeddings.token"], ids),
                  T.embedding(p["embeddings.position"], np.arange(seq)))
        x = T.layer_norm(x, p["embeddings.ln.gain"], p["embeddings.ln.bias"])
        x = T.dropout(x, rate, rng, train)
        inv_sqrt = 1.0 / math.sqrt(dh)
        for i in range(cfg.num_layers):
            pre = f"layers.{i}."

            def proj(inp, name):
                return T.add(T.matmul(inp, p[pre + name + ".weight"]), p[pre + name + ".bias"])

            def split(t):
                return T.transpose(T.reshape(t, (batch, seq, heads, dh)), (0, 2, 1, 3))

            q = split(proj(x, "attn.query"))
            k = T.transpose(T.reshape(proj(x, "attn.key"), (batch, seq, heads, dh)), (0, 2, 3, 1))
            v = split(proj(x, "attn.value"))
            scores = T.scale(T.matmul(q, k), inv_sqrt)
            probs = T.dropout(T.softmax(scores, mask=key_mask), rate, rng, train)
            ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (batch, seq, cfg.hidden_dim))
            attn = T.dropout(proj(ctx, "attn.output"), rate, rng, train)
            x = T.layer_norm(T.add(x, attn), p[pre + "attn.ln.gain"], p[pre + "attn.ln.bias"])
            ff = T.gelu(proj(x, "ffn.in"))
            ff = T.dropout(proj(ff, "ffn.out"), rate, rng, train)
            x = T.layer_norm(T.add(x, ff), p[pre + "ffn.ln.gain"], p[pre + "ffn.ln.bias"])
        return x

    def forward_mlm(self, ids: np.ndarray, mask_positions: Sequence[Sequence[int]]) -> Tensor:
        """Pre-softmax logits [total masks, vocab] at the masked positions,
        ordered by sequence then by position list order."""
        ids = self._check_ids(ids)
        batch, seq = ids.shape
        if len(mask_positions) != batch:
            raise ValueError(f"{len(mask_positions)} mask lists for a batch of {batch}")
        rows = []
        for b, positions in enumerate(mask_positions):
            for pos in positions:
                if not 0 <= pos < seq:
                    raise ValueError(f"mask position {pos} outside sequence of length {seq}")
                rows.append(b * seq + pos)
        hidden = self.encode(ids)
        flat = T.reshape(hidden, (batch * seq, self.config.hidden_dim))
        picked = T.take_rows(flat, np.asarray(rows, dtype=np.int64))
        return self.head(picked)

    def head(self, h: Tensor) -> Tensor:
        p = self.params
        t = T.gelu(T.add(T.matmul(h, p["head.transform.weight"]), p["head.transform.bias"]))
        t = T.layer_norm(t, p["head.ln.gain"], p["head.ln.bias"])
        logits = T.matmul(t, T.transpose(p["embeddings.token"], (1, 0)))
        return T.add(logits, p["head.output_bias"])

    def hidden_states(self, ids: np.ndarray) -> np.ndarray:
        """Frozen final-layer representations; no graph, dropout off."""
        was = self.training
        self.training = False
        try:
            with no_grad():
                return self.encode(ids).data
        finally:
            self.training = was

    def predict_logits(self, ids: np.ndarray, mask_positions) -> np.ndarray:
        was = self.training
        self.training = False
        try:
            with no_grad():
                return self.forward_mlm(ids, mask_positions).data
        finally:
            self.training = was


# ---------------------------------------------------------------- checkpoints

class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: MaskedLmModel) -> bytes:
    manifest = []
    offset = 0
    for name, t in model.params.items():
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size * 4
    header = json.dumps({"config": asdict(model.config), "tensors": manifest},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f4").tobytes() for t in model.params.values())
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def save(model: MaskedLmModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".partial")
    tmp.write_bytes(checkpoint_bytes(model))
    tmp.replace(path)


def load_bytes(blob: bytes) -> MaskedLmModel:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic: not an MLM checkpoint")
    if len(blob) < 12:
        raise CheckpointError("truncated header")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    try:
        config = ModelConfig.from_dict(header["config"]).validate()
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"invalid config in header: {exc}") from None
    expected = param_shapes(config)
    payload = blob[12 + hlen:]
    params: OrderedDict[str, Tensor] = OrderedDict()
    cursor = 0
    for entry in header["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in expected:
            raise CheckpointError(f"unknown tensor {name!r}")
        if shape != expected[name]:
            raise CheckpointError(f"tensor {name} has shape {shape}, config implies {expected[name]}")
        if offset != cursor:
            raise CheckpointError(f"tensor {name} offset {offset} is not contiguous (expected {cursor})")
        nbytes = math.prod(shape) * 4
        if offset + nbytes > len(payload):
            raise CheckpointError(f"payload truncated inside tensor {name}")
        data = np.frombuffer(payload, dtype="<f4", count=math.prod(shape), offset=offset)
        params[name] = Tensor(data.astype(np.float32).reshape(shape), requires_grad=True)
        cursor += nbytes
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"missing tensors: {sorted(missing)}")
    if cursor != len(payload):
        raise CheckpointError(f"payload length {len(payload)} != manifest total {cursor}")
    return MaskedLmModel(config, OrderedDict((k, params[k]) for k in expected))


def load(path) -> MaskedLmModel:
    return load_bytes(Path(path).read_bytes())


def with_vocab_size(config: ModelConfig, vocab_size: int) -> ModelConfig:
    return replace(config, vocab_size=vocab_size)
