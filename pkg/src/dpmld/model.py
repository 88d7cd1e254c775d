"""Toy two-modality encoder with a cross-attention decoder and a classifier head.

EEG is amplitude-binned into tokens and run through a small self-attention
encoder. The other-modality (OM) signal is resampled into a one-channel
image, cut into patches and encoded by a per-patch perceptron. A stack of
decoder blocks lets OM patches (queries) attend to EEG tokens (keys and
values). The three pooled feature blocks are concatenated and min-max
normalized into [0, 1] before any private release.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ModalitySample, stack
from .privacy import NormalizationSpec

BLOCKS = ("eeg", "om", "cm")


@dataclass(frozen=True)
class ModelConfig:
    eeg_channels: int = 8
    om_dims: int = 4
    d_model: int = 32
    d_k: int = 32
    d_feat: int = 16
    d_ff: int = 32
    head_hidden: int = 32
    enc_layers: int = 2
    cross_layers: int = 3
    vocab: int = 32
    patch: int = 4
    om_width: int = 32

    def __post_init__(self):
        if self.cross_layers < 1 or self.enc_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        if self.d_k != self.d_model:
            raise ValueError("decoder residual connections need d_k == d_model")
        if self.om_dims % self.patch or self.om_width % self.patch:
            raise ValueError(
                f"OM image {self.om_dims}x{self.om_width} is not divisible into {self.patch}x{self.patch} patches"
            )

    @property
    def n_features(self) -> int:
        return 3 * self.d_feat

    @property
    def n_patches(self) -> int:
        return (self.om_dims // self.patch) * (self.om_width // self.patch)


@dataclass
class ModelParams:
    """Named trainable tensors; the name prefix says which sub-network owns them."""

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.tensors[k].data = np.array(v, dtype=np.float64)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    d, dk, ff, pp = cfg.d_model, cfg.d_k, cfg.d_ff, cfg.patch * cfg.patch
    shapes: dict[str, tuple[int, ...]] = {"eeg.embed": (cfg.eeg_channels * cfg.vocab, d)}
    for i in range(cfg.enc_layers):
        p = f"eeg.layer{i}."
        shapes.update({p + "Wq": (d, d), p + "Wk": (d, d), p + "Wv": (d, d), p + "Wo": (d, d), p + "W1": (d, ff), p + "b1": (ff,), p + "W2": (ff, d), p + "b2": (d,)})
    shapes.update({"eeg.Wout": (d, cfg.d_feat), "eeg.bout": (cfg.d_feat,)})
    shapes.update({"om.W1": (pp, d), "om.b1": (d,), "om.W2": (d, cfg.d_feat), "om.b2": (cfg.d_feat,)})
    shapes.update({"ca.Wpatch": (pp, d), "ca.bpatch": (d,)})
    for i in range(cfg.cross_layers):
        p = f"ca.layer{i}."
        shapes.update({p + "W_Q": (d, dk), p + "W_K": (d, dk), p + "W_V": (d, dk), p + "W1": (dk, ff), p + "b1": (ff,), p + "W2": (ff, dk), p + "b2": (dk,)})
    shapes.update({"ca.Wout": (dk, cfg.d_feat), "ca.bout": (cfg.d_feat,)})
    shapes.update({"head.W1": (cfg.n_features, cfg.head_hidden), "head.b1": (cfg.head_hidden,), "head.W2": (cfg.head_hidden, 2), "head.b2": (2,)})

    tensors = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            value = np.zeros(shape)
        else:
            value = rng.standard_normal(shape) / np.sqrt(shape[0])
        tensors[name] = Tensor(value, requires_grad=True)
    return ModelParams(tensors)


def positional_encoding(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass(frozen=True)
class EEGTokenizer:
    """Equal-width amplitude bins per channel, bounds frozen from training data."""

    lo: np.ndarray
    hi: np.ndarray
    vocab: int = 32

    @classmethod
    def fit(cls, eeg: np.ndarray, vocab: int = 32) -> EEGTokenizer:
        eeg = np.asarray(eeg, dtype=np.float64)
        if eeg.size == 0:
            raise ValueError("cannot fit tokenizer on empty input")
        axes = (0, 2) if eeg.ndim == 3 else (1,)
        return cls(eeg.min(axis=axes), eeg.max(axis=axes), vocab)

    def __call__(self, eeg: np.ndarray) -> np.ndarray:
        """Bin ids shaped ``[..., T, C]`` for input ``[..., C, T]``."""
        eeg = np.asarray(eeg, dtype=np.float64)
        if eeg.size == 0:
            raise ValueError("empty EEG input")
        if not np.all(np.isfinite(eeg)):
            raise ValueError("EEG input must be finite")
        lo = self.lo[:, None]
        width = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)[:, None]
        bins = np.floor((eeg - lo) / width * self.vocab).astype(np.int64)
        return np.swapaxes(np.clip(bins, 0, self.vocab - 1), -1, -2)


def om_image(om: np.ndarray, width: int) -> np.ndarray:
    """Resample each OM channel linearly to ``width`` points; shape ``[..., H, W, 1]``."""
    om = np.asarray(om, dtype=np.float64)
    if om.size == 0:
        raise ValueError("empty OM input")
    if not np.all(np.isfinite(om)):
        raise ValueError("OM input must be finite")
    steps = om.shape[-1]
    if steps == width:
        out = om.copy()
    elif steps == 1:
        out = np.repeat(om, width, axis=-1)
    else:
        src = np.linspace(0.0, 1.0, steps)
        dst = np.linspace(0.0, 1.0, width)
        lo = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, steps - 2)
        frac = (dst - src[lo]) / (src[lo + 1] - src[lo])
        out = om[..., lo] * (1 - frac) + om[..., lo + 1] * frac
    return out[..., None]


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """Non-overlapping ``patch x patch`` tiles of ``[..., H, W, 1]``, flattened to ``[..., P, patch*patch]``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-3], img.shape[-2]
    if h % patch or w % patch:
        raise ValueError(f"image {h}x{w} is not divisible into {patch}x{patch} patches")
    lead = img.shape[:-3]
    x = img[..., 0].reshape(*lead, h // patch, patch, w // patch, patch)
    x = np.moveaxis(x, -3, -2)
    return x.reshape(*lead, (h // patch) * (w // patch), patch * patch)


@dataclass
class PreparedData:
    """Model-ready arrays: bin ids ``[N, T, C]``, OM patches ``[N, P, p*p]``, labels ``[N]``."""

    tokens: np.ndarray
    patches: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> PreparedData:
        return PreparedData(self.tokens[idx], self.patches[idx], self.labels[idx])


def _linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    return ad.linear(x, W, b)


def _add_const(x: Tensor, c: np.ndarray) -> Tensor:
    return x + Tensor(np.broadcast_to(c, x.shape))


def attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention on batched ``[B, n, d]`` operands; returns (output, weights)."""
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3 or q.shape[-1] != k.shape[-1] or k.shape[1] != v.shape[1]:
        raise ad.ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    scores = (q @ ad.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(q.shape[-1]))
    weights = ad.softmax(scores, axis=-1)
    return weights @ v, weights


def _ffn(x: Tensor, params: ModelParams, p: str) -> Tensor:
    return _linear(ad.relu(_linear(x, params[p + "W1"], params[p + "b1"])), params[p + "W2"], params[p + "b2"])


class MultimodalModel:
    """Parameters plus the frozen preprocessing state needed to run them."""

    def __init__(self, cfg: ModelConfig, params: ModelParams, tokenizer: EEGTokenizer | None = None):
        self.cfg = cfg
        self.params = params
        self.tokenizer = tokenizer
        self.norm: NormalizationSpec | None = None
        self.attention_maps: list[np.ndarray] = []

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int | np.random.Generator = 0) -> MultimodalModel:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(cfg, init_params(cfg, rng))

    # preprocessing
    def fit_tokenizer(self, samples) -> None:
        eeg, _, _ = stack(samples)
        self.tokenizer = EEGTokenizer.fit(eeg, self.cfg.vocab)

    def prepare(self, samples) -> PreparedData:
        if self.tokenizer is None:
            raise RuntimeError("tokenizer not fitted; call fit_tokenizer on training data first")
        eeg, om, labels = stack(samples)
        if eeg.shape[1] != self.cfg.eeg_channels or om.shape[1] != self.cfg.om_dims:
            raise ValueError(
                f"sample shapes eeg {eeg.shape[1:]}, om {om.shape[1:]} do not match "
                f"{self.cfg.eeg_channels} EEG channels / {self.cfg.om_dims} OM dims"
            )
        return PreparedData(self.tokenizer(eeg), self.transform_om(om), labels)

    def transform_om(self, om: np.ndarray) -> np.ndarray:
        """Raw OM ``[..., D, T]`` to flattened patches ``[..., P, patch*patch]``."""
        return patchify(om_image(om, self.cfg.om_width), self.cfg.patch)

    # forward pieces
    def transform_eeg(self, tokens: np.ndarray) -> Tensor:
        """Bin ids ``[B, T, C]`` to token embeddings ``[B, T, d_model]``."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 2:
            tokens = tokens[None]
        b, t, c = tokens.shape
        if t == 0:
            raise ValueError("empty token sequence")
        rows = tokens + (np.arange(c) * self.cfg.vocab)
        h = ad.sum(ad.take_rows(self.params["eeg.embed"], rows), axis=2)
        return _add_const(h, positional_encoding(t, self.cfg.d_model))

    def encode_eeg(self, h: Tensor) -> Tensor:
        """Self-attention encoder over token embeddings, projected and mean-pooled to ``[B, d_feat]``."""
        x = h
        for i in range(self.cfg.enc_layers):
            p = f"eeg.layer{i}."
            q = _linear(x, self.params[p + "Wq"])
            k = _linear(x, self.params[p + "Wk"])
            v = _linear(x, self.params[p + "Wv"])
            out, _ = attention(q, k, v)
            x = ad.layer_normalize(x + _linear(out, self.params[p + "Wo"]))
            x = ad.layer_normalize(x + _ffn(x, self.params, p))
        return ad.mean(_linear(x, self.params["eeg.Wout"], self.params["eeg.bout"]), axis=1)

    def encode_om(self, patches) -> Tensor:
        """Per-patch two-layer perceptron, mean-pooled to ``[B, d_feat]``."""
        patches = ad.as_tensor(patches)
        if patches.ndim == 2:
            patches = ad.reshape(patches, (1,) + patches.shape)
        hidden = ad.relu(_linear(patches, self.params["om.W1"], self.params["om.b1"]))
        return ad.mean(_linear(hidden, self.params["om.W2"], self.params["om.b2"]), axis=1)

    def om_tokens(self, patches) -> Tensor:
        patches = ad.as_tensor(patches)
        x = _linear(patches, self.params["ca.Wpatch"], self.params["ca.bpatch"])
        return _add_const(x, positional_encoding(patches.shape[1], self.cfg.d_model))

    def cross_attention_layer(self, q_src: Tensor, kv_src: Tensor, layer: int) -> tuple[Tensor, Tensor]:
        """One decoder block: OM queries attend to EEG keys/values, then residual + feed-forward."""
        p = f"ca.layer{layer}."
        if q_src.shape[-1] != self.cfg.d_model or kv_src.shape[-1] != self.cfg.d_model:
            raise ad.ShapeError(f"cross attention: expected width {self.cfg.d_model}, got {q_src.shape} and {kv_src.shape}")
        q = _linear(q_src, self.params[p + "W_Q"])
        k = _linear(kv_src, self.params[p + "W_K"])
        v = _linear(kv_src, self.params[p + "W_V"])
        out, weights = attention(q, k, v)
        x = ad.layer_normalize(q_src + out)
        x = ad.layer_normalize(x + _ffn(x, self.params, p))
        return x, weights

    def extract_cross_modal(self, h_e: Tensor, patches, n_layers: int | None = None) -> Tensor:
        x = self.om_tokens(patches)
        self.attention_maps = []
        for i in range(self.cfg.cross_layers if n_layers is None else n_layers):
            x, weights = self.cross_attention_layer(x, h_e, i)
            self.attention_maps.append(weights.data)
        return self.pool_cross_modal(x)

    def pool_cross_modal(self, x: Tensor) -> Tensor:
        return _linear(ad.mean(x, axis=1), self.params["ca.Wout"], self.params["ca.bout"])

    def raw_features(self, batch: PreparedData) -> Tensor:
        """Concatenated ``[f_e, f_o, f_c]`` before normalization, ``[B, 3 * d_feat]``."""
        h_e = self.transform_eeg(batch.tokens)
        f_e = self.encode_eeg(h_e)
        f_o = self.encode_om(batch.patches)
        f_c = self.extract_cross_modal(h_e, batch.patches)
        return ad.concat([f_e, f_o, f_c], axis=1)

    def fit_normalization(self, data: PreparedData, batch_size: int = 256) -> NormalizationSpec:
        """Freeze per-feature min-max bounds from the current parameters' features on ``data``."""
        feats = self.raw_feature_array(data, batch_size)
        self.norm = NormalizationSpec.fit(feats)
        return self.norm

    def raw_feature_array(self, data: PreparedData, batch_size: int = 256) -> np.ndarray:
        with ad.no_grad():
            parts = [self.raw_features(data.subset(slice(i, i + batch_size))).data for i in range(0, len(data), batch_size)]
        return np.concatenate(parts, axis=0)

    def normalize(self, raw: Tensor) -> Tensor:
        if self.norm is None:
            raise RuntimeError("normalization bounds not fitted")
        lo = np.broadcast_to(self.norm.lo, raw.shape)
        inv = np.broadcast_to(1.0 / (self.norm.hi - self.norm.lo), raw.shape)
        return ad.clip((raw - Tensor(lo)) * Tensor(inv), 0.0, 1.0)

    def forward_features(self, batch: PreparedData) -> Tensor:
        return self.normalize(self.raw_features(batch))

    def classify(self, f) -> Tensor:
        """Two-logit head: one ReLU hidden layer then a linear readout."""
        f = ad.as_tensor(f)
        if f.ndim == 1:
            f = ad.reshape(f, (1, f.shape[0]))
        if f.shape[-1] != self.cfg.n_features:
            raise ad.ShapeError(f"classifier expects {self.cfg.n_features} features, got {f.shape[-1]}")
        hidden = ad.relu(_linear(f, self.params["head.W1"], self.params["head.b1"]))
        return _linear(hidden, self.params["head.W2"], self.params["head.b2"])

    def block_slices(self) -> dict[str, slice]:
        d = self.cfg.d_feat
        return {name: slice(i * d, (i + 1) * d) for i, name in enumerate(BLOCKS)}
