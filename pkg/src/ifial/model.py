"""Feature-tokenized transformer classifier in NumPy (float64).

Every parameter lives in one flat ``dict[str, ndarray]`` on
:class:`ModelState`. Feature-specific tables are keyed by the feature name,
so windows that share a feature share its parameters. Forward and backward
passes are written out by hand; see ``tests/test_model.py`` for the
finite-difference checks.
"""
from __future__ import annotations

import base64
import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import AttentionParams, MaskPair, build_masks, masked_attention, masked_attention_backward
from .data import FeatureSchema
from .partition import DatasetView

ACTIVATIONS = ("relu", "gelu", "leakyrelu")
LN_EPS = 1e-5
LEAKY_SLOPE = 0.01
CHECKPOINT_FORMAT = "ifial-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    model_dim: int = 128
    num_layers: int = 2
    num_heads: int = 8
    ffn_dim: int = 2048
    dropout: float = 0.3
    activation: str = "relu"
    gated_ffn: bool = False
    class_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0 or self.num_layers <= 0 or self.ffn_dim <= 0:
            raise ValueError("model dimensions must be positive")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")

    @classmethod
    def full_scale(cls, **overrides) -> ModelConfig:
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> ModelConfig:
        base = dict(model_dim=64, ffn_dim=256, num_layers=2, num_heads=4, dropout=0.1)
        base.update(overrides)
        return cls(**base)


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)
    features: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig) -> ModelState:
        rng = np.random.default_rng(config.seed)
        D, F = config.model_dim, config.ffn_dim
        p = {"cls": rng.uniform(-1 / np.sqrt(D), 1 / np.sqrt(D), size=D)}
        for layer in range(config.num_layers):
            attn = AttentionParams.init(D, config.num_heads, rng)
            for name in AttentionParams.NAMES:
                p[f"layer{layer}/attn/{name}"] = getattr(attn, name)
            p[f"layer{layer}/ln1/g"] = np.ones(D)
            p[f"layer{layer}/ln1/b"] = np.zeros(D)
            p[f"layer{layer}/ffn/w1"] = _uniform(rng, D, (D, F))
            p[f"layer{layer}/ffn/b1"] = _uniform(rng, D, (F,))
            if config.gated_ffn:
                p[f"layer{layer}/ffn/wg"] = _uniform(rng, D, (D, F))
                p[f"layer{layer}/ffn/bg"] = _uniform(rng, D, (F,))
            p[f"layer{layer}/ffn/w2"] = _uniform(rng, F, (F, D))
            p[f"layer{layer}/ffn/b2"] = _uniform(rng, F, (D,))
            p[f"layer{layer}/ln2/g"] = np.ones(D)
            p[f"layer{layer}/ln2/b"] = np.zeros(D)
        p["head/w"] = _uniform(rng, D, (D, config.class_count))
        p["head/b"] = _uniform(rng, D, (config.class_count,))
        return cls(config=config, params=p)

    def register(self, feature: FeatureSchema) -> None:
        """Create the embedding tables for ``feature`` unless they already exist."""
        D = self.config.model_dim
        info = self.features.get(feature.name)
        if info is None:
            # name-derived stream: registration order does not change the draw
            rng = np.random.default_rng([self.config.seed, zlib.crc32(feature.name.encode("utf-8"))])
            prefix = f"feat/{feature.name}"
            self.params[f"{prefix}/name"] = _uniform(rng, D, (D,))
            if feature.is_categorical:
                count = max(1, len(feature.categories))
                self.params[f"{prefix}/cat"] = _uniform(rng, D, (count, D))
                info = {"kind": "categorical", "categories": count}
            else:
                self.params[f"{prefix}/num_w"] = rng.uniform(-1.0, 1.0, size=D)
                self.params[f"{prefix}/num_b"] = rng.uniform(-1.0, 1.0, size=D)
                info = {"kind": "numerical"}
            self.features[feature.name] = info
            return
        if (info["kind"] == "categorical") != feature.is_categorical:
            raise ValueError(f"feature {feature.name!r} changed kind since registration")
        if feature.is_categorical and len(feature.categories) > info["categories"]:
            table = self.params[f"feat/{feature.name}/cat"]
            extra = len(feature.categories) - table.shape[0]
            rng = np.random.default_rng(
                [self.config.seed, zlib.crc32(feature.name.encode("utf-8")), table.shape[0]]
            )
            self.params[f"feat/{feature.name}/cat"] = np.vstack([table, _uniform(rng, D, (extra, D))])
            info["categories"] = len(feature.categories)

    def feature_keys(self, name: str) -> list[str]:
        prefix = f"feat/{name}/"
        return [key for key in self.params if key.startswith(prefix)]

    def shared_keys(self) -> list[str]:
        return [key for key in self.params if not key.startswith("feat/")]

    def attention(self, layer: int) -> AttentionParams:
        arrays = {name: self.params[f"layer{layer}/attn/{name}"] for name in AttentionParams.NAMES}
        return AttentionParams(num_heads=self.config.num_heads, **arrays)

    def copy(self) -> ModelState:
        return ModelState(
            config=ModelConfig(**asdict(self.config)),
            params={k: v.copy() for k, v in self.params.items()},
            features={k: dict(v) for k, v in self.features.items()},
        )


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class TokenBatch:
    """Token embeddings of shape ``(B, k+1, D)`` with CLS first, plus the masks."""

    embeddings: np.ndarray
    mask: np.ndarray
    features: list[str]
    values: np.ndarray
    observed: np.ndarray
    categorical: np.ndarray

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    def masks(self) -> MaskPair:
        return build_masks(self.mask)


def tokenize(view: DatasetView, state: ModelState, rows, frozen: bool = False, unknown: str = "error") -> TokenBatch:
    """Embed the view's cells for ``rows``; missing cells only set a mask flag.

    In ``frozen`` mode features are never registered. An unregistered feature
    then raises, or with ``unknown="missing"`` is tokenized as missing.
    """
    rows = np.asarray(rows, dtype=np.intp)
    values, missing = view.cells(rows)
    schema = view.schema
    B, k = values.shape
    D = state.config.model_dim
    observed = ~missing
    for j, feat in enumerate(schema):
        info = state.features.get(feat.name)
        grown = info is not None and feat.is_categorical and len(feat.categories) > info["categories"]
        if info is not None and not grown:
            continue
        if not frozen:
            state.register(feat)
        elif unknown != "missing":
            raise KeyError(f"feature {feat.name!r} is not registered in the model")
        elif grown:
            observed[:, j] &= values[:, j] < info["categories"]
        else:
            observed[:, j] = False
    emb = np.zeros((B, k + 1, D))
    emb[:, 0] = state.params["cls"]
    categorical = np.array([f.is_categorical for f in schema], dtype=bool)
    for j, feat in enumerate(schema):
        if feat.name not in state.features:
            continue
        prefix = f"feat/{feat.name}"
        emb[:, j + 1] = state.params[f"{prefix}/name"]
        obs = observed[:, j]
        if not obs.any():
            continue
        if categorical[j]:
            codes = values[obs, j].astype(np.intp)
            emb[obs, j + 1] += state.params[f"{prefix}/cat"][codes]
        else:
            x = values[obs, j][:, None]
            emb[obs, j + 1] += x * state.params[f"{prefix}/num_w"] + state.params[f"{prefix}/num_b"]
    mask = np.zeros((B, k + 1), dtype=np.int8)
    mask[:, 1:] = ~observed
    return TokenBatch(emb, mask, [f.name for f in schema], values, observed, categorical)


def _tokenize_backward(batch: TokenBatch, demb: np.ndarray, grads: dict) -> None:
    grads["cls"] += demb[:, 0].sum(axis=0)
    for j, name in enumerate(batch.features):
        prefix = f"feat/{name}"
        if f"{prefix}/name" not in grads:
            continue
        g = demb[:, j + 1]
        grads[f"{prefix}/name"] += g.sum(axis=0)
        obs = batch.observed[:, j]
        if not obs.any():
            continue
        if batch.categorical[j]:
            np.add.at(grads[f"{prefix}/cat"], batch.values[obs, j].astype(np.intp), g[obs])
        else:
            x = batch.values[obs, j]
            grads[f"{prefix}/num_w"] += x @ g[obs]
            grads[f"{prefix}/num_b"] += g[obs].sum(axis=0)


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    dgain = (dy * xhat).sum(axis=(0, 1))
    dbias = dy.sum(axis=(0, 1))
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


_GELU_C = np.sqrt(2.0 / np.pi)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leakyrelu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    t = np.tanh(_GELU_C * (z + 0.044715 * z**3))
    return 0.5 * z * (1.0 + t)


def _activate_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "leakyrelu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    t = np.tanh(_GELU_C * (z + 0.044715 * z**3))
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _dropout_mask(shape, rate, rng):
    if rng is None or rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _forward(batch: TokenBatch, state: ModelState, train_mode: bool, rng):
    cfg = state.config
    p = state.params
    masks = batch.masks()
    drop_rng = rng if train_mode else None
    caches = []
    h = batch.embeddings
    emb_drop = _dropout_mask(h.shape, cfg.dropout, drop_rng)
    if emb_drop is not None:
        h = h * emb_drop
    for layer in range(cfg.num_layers):
        pre = f"layer{layer}"
        attn = state.attention(layer)
        a, acache = masked_attention(h, attn, masks, return_cache=True)
        h1, ln1 = _layer_norm(h + a, p[f"{pre}/ln1/g"], p[f"{pre}/ln1/b"])
        z = h1 @ p[f"{pre}/ffn/w1"] + p[f"{pre}/ffn/b1"]
        act = _activate(z, cfg.activation)
        gate = None
        if cfg.gated_ffn:
            gate = _sigmoid(h1 @ p[f"{pre}/ffn/wg"] + p[f"{pre}/ffn/bg"])
            u = act * gate
        else:
            u = act
        ffn_drop = _dropout_mask(u.shape, cfg.dropout, drop_rng)
        if ffn_drop is not None:
            u = u * ffn_drop
        f = u @ p[f"{pre}/ffn/w2"] + p[f"{pre}/ffn/b2"]
        h2, ln2 = _layer_norm(h1 + f, p[f"{pre}/ln2/g"], p[f"{pre}/ln2/b"])
        if not np.isfinite(h2).all():
            raise FloatingPointError(f"non-finite activation in encoder layer {layer}")
        caches.append((attn, acache, h1, ln1, z, act, gate, u, ffn_drop, ln2))
        h = h2
    cls_out = h[:, 0]
    logits = cls_out @ p["head/w"] + p["head/b"]
    return logits, (emb_drop, caches, cls_out)


def forward(batch: TokenBatch, state: ModelState, train_mode: bool = False, rng=None) -> np.ndarray:
    """Class logits of shape ``(B, class_count)`` read from the CLS token."""
    logits, _ = _forward(batch, state, train_mode, rng)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(batch: TokenBatch, labels, state: ModelState, rng=None, train_mode: bool | None = None):
    """Mean cross-entropy and gradients for every parameter of ``state``.

    Dropout is active when ``rng`` is given (unless ``train_mode`` says
    otherwise). Parameters not reached by the batch get zero gradients.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if train_mode is None:
        train_mode = rng is not None
    cfg = state.config
    p = state.params
    logits, (emb_drop, caches, cls_out) = _forward(batch, state, train_mode, rng)
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(B), labels].mean()

    grads = {key: np.zeros_like(val) for key, val in p.items()}
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    grads["head/w"] += cls_out.T @ dlogits
    grads["head/b"] += dlogits.sum(axis=0)
    dh = np.zeros_like(batch.embeddings)
    dh[:, 0] = dlogits @ p["head/w"].T
    for layer in reversed(range(cfg.num_layers)):
        pre = f"layer{layer}"
        attn, acache, h1, ln1, zpre, act, gate, u, ffn_drop, ln2 = caches[layer]
        dr2, grads[f"{pre}/ln2/g"], grads[f"{pre}/ln2/b"] = _layer_norm_backward(dh, ln2)
        dh1 = dr2.copy()
        grads[f"{pre}/ffn/w2"] = u.reshape(-1, u.shape[-1]).T @ dr2.reshape(-1, dr2.shape[-1])
        grads[f"{pre}/ffn/b2"] = dr2.sum(axis=(0, 1))
        du = dr2 @ p[f"{pre}/ffn/w2"].T
        if ffn_drop is not None:
            du = du * ffn_drop
        if gate is not None:
            dgate_pre = du * act * gate * (1.0 - gate)
            grads[f"{pre}/ffn/wg"] = h1.reshape(-1, h1.shape[-1]).T @ dgate_pre.reshape(-1, dgate_pre.shape[-1])
            grads[f"{pre}/ffn/bg"] = dgate_pre.sum(axis=(0, 1))
            dh1 += dgate_pre @ p[f"{pre}/ffn/wg"].T
            du = du * gate
        dz = du * _activate_grad(zpre, cfg.activation)
        grads[f"{pre}/ffn/w1"] = h1.reshape(-1, h1.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        grads[f"{pre}/ffn/b1"] = dz.sum(axis=(0, 1))
        dh1 += dz @ p[f"{pre}/ffn/w1"].T
        dr1, grads[f"{pre}/ln1/g"], grads[f"{pre}/ln1/b"] = _layer_norm_backward(dh1, ln1)
        dx_attn, agrads = masked_attention_backward(dr1, acache, attn)
        for name, g in agrads.items():
            grads[f"{pre}/attn/{name}"] = g
        dh = dr1 + dx_attn
    if emb_drop is not None:
        dh = dh * emb_drop
    _tokenize_backward(batch, dh, grads)
    return float(loss), grads


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def state_to_dict(state: ModelState) -> dict:
    return {
        "config": asdict(state.config),
        "features": state.features,
        "params": {key: _encode_array(val) for key, val in state.params.items()},
    }


def state_from_dict(obj: dict) -> ModelState:
    return ModelState(
        config=ModelConfig(**obj["config"]),
        params={key: _decode_array(val) for key, val in obj["params"].items()},
        features={k: dict(v) for k, v in obj["features"].items()},
    )


def dump_checkpoint(state: ModelState, extra: dict | None = None) -> bytes:
    """Serialize to canonical JSON bytes; float64 payloads are stored bit-exactly."""
    obj = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "model": state_to_dict(state)}
    if extra:
        obj["extra"] = extra
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def load_checkpoint(raw: bytes) -> tuple[ModelState, dict]:
    obj = json.loads(raw)
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an ifial checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    return state_from_dict(obj["model"]), obj.get("extra", {})
