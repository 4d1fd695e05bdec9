"""Toy text-conditioned remix network with hand-written gradients.

Topology: a dual-branch audio encoder (1-D conv stack over the waveform plus
a per-frame affine over magnitude bins), a projected text-context token, a
stack of pre-norm transformer blocks, and a bounded mask head whose output
multiplies the input STFT before inverse synthesis (input phase reused).

Everything runs in float64 numpy with explicit forward caches and a manual
backward pass, so gradients can be audited against central finite
differences. The mask-head bias is initialized at the identity gain
(sigmoid ~= 1/mask_max) so an untrained model starts near a pass-through.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .dsp_core import (
    AudioClip,
    Spectrogram,
    StftConfig,
    istft,
    loudness_trajectory,
    ola_weight,
    stft,
)
from .errors import ConfigError, DataError, LengthError, NumericError, ShapeError
from .metrics import (
    StemTrajectories,
    env as env_metric,
    kld as kld_metric,
    mag as mag_metric,
    mel_event_distribution,
    w_dis as w_dis_metric,
)
from .mix_synthesis import STEM_NAMES, StemSet

_LN_EPS = 1e-5
_CHECKPOINT_MAGIC = b"SMXCKPT1"
CHECKPOINT_VERSION = 1

MAX_DEPTH = 6


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters; the parameter count is a deterministic function of
    this config."""

    d_model: int = 64
    n_heads: int = 4
    depth: int = 3
    c_text: int = 4096
    n_bins: int = 1025  # fft_len // 2 + 1 of the analysis config
    conv_channels: tuple[int, ...] | None = None  # time branch; last == d_model
    conv_kernels: tuple[int, ...] | None = None
    d_ff: int = 0  # 0 -> 2 * d_model
    mask_max: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.conv_channels is None:
            object.__setattr__(self, "conv_channels", (16, 32, self.d_model))
        else:
            object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.conv_kernels is None:
            object.__setattr__(self, "conv_kernels", (16, 8, 8)[: len(self.conv_channels)])
        else:
            object.__setattr__(self, "conv_kernels", tuple(self.conv_kernels))
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 2 * self.d_model)

        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be positive and divisible by "
                f"n_heads ({self.n_heads})"
            )
        if not 0 <= self.depth <= MAX_DEPTH:
            raise ConfigError(f"depth must be in [0, {MAX_DEPTH}], got {self.depth}")
        if self.mask_max <= 0:
            raise ConfigError(f"mask_max must be > 0, got {self.mask_max}")
        if self.c_text < 1:
            raise ConfigError(f"c_text must be >= 1, got {self.c_text}")
        if self.n_bins < 2:
            raise ConfigError(f"n_bins must be >= 2, got {self.n_bins}")
        if len(self.conv_channels) != len(self.conv_kernels):
            raise ConfigError("conv_channels and conv_kernels lengths differ")
        if self.conv_channels and self.conv_channels[-1] != self.d_model:
            raise ConfigError(
                f"last conv channel count must equal d_model "
                f"({self.conv_channels[-1]} != {self.d_model})"
            )
        if any(k < 1 for k in self.conv_kernels) or any(
                c < 1 for c in self.conv_channels):
            raise ConfigError("conv channels and kernels must be >= 1")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model, "n_heads": self.n_heads,
            "depth": self.depth, "c_text": self.c_text, "n_bins": self.n_bins,
            "conv_channels": list(self.conv_channels),
            "conv_kernels": list(self.conv_kernels),
            "d_ff": self.d_ff, "mask_max": self.mask_max, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["conv_kernels"] = tuple(d["conv_kernels"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 12
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "epochs": self.epochs, "seed": self.seed, "beta1": self.beta1,
            "beta2": self.beta2, "adam_eps": self.adam_eps,
        }


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter-group shapes; checkpoint layout follows this order."""
    d, dff = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["freq.w"] = (cfg.n_bins, d)
    shapes["freq.b"] = (d,)
    in_ch = 1
    for i, (out_ch, k) in enumerate(zip(cfg.conv_channels, cfg.conv_kernels)):
        shapes[f"conv{i}.w"] = (out_ch, in_ch, k)
        shapes[f"conv{i}.b"] = (out_ch,)
        in_ch = out_ch
    shapes["text.w"] = (cfg.c_text, d)
    shapes["text.b"] = (d,)
    shapes["null.token"] = (d,)
    for i in range(cfg.depth):
        shapes[f"block{i}.ln1.g"] = (d,)
        shapes[f"block{i}.ln1.b"] = (d,)
        # attention projections are bias-free: a key bias is invisible to
        # softmax and would carry an identically zero gradient
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"block{i}.attn.{name}"] = (d, d)
        shapes[f"block{i}.ln2.g"] = (d,)
        shapes[f"block{i}.ln2.b"] = (d,)
        shapes[f"block{i}.ffn.w1"] = (d, dff)
        shapes[f"block{i}.ffn.b1"] = (dff,)
        shapes[f"block{i}.ffn.w2"] = (dff, d)
        shapes[f"block{i}.ffn.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["mask.w"] = (d, cfg.n_bins)
    shapes["mask.b"] = (cfg.n_bins,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


class HighlightModel:
    """Weight container. ``params`` maps group name to float64 array."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def build_model(cfg: ModelConfig) -> HighlightModel:
    """Deterministic scaled-uniform fan-in initialization from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif name.endswith((".b", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        elif name == "null.token":
            params[name] = rng.uniform(-1, 1, shape) / np.sqrt(cfg.d_model)
        else:
            fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
            if name.startswith("conv"):
                fan_in = shape[1] * shape[2]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, shape)
    # start at the identity gain: mask_max * sigmoid(b) == 1
    params["mask.b"] = np.full(cfg.n_bins, _identity_bias(cfg.mask_max))
    if not np.all([np.all(np.isfinite(p)) for p in params.values()]):
        raise NumericError("non-finite initial weights")
    return HighlightModel(cfg, params)


def _identity_bias(mask_max: float) -> float:
    p = 1.0 / mask_max
    if p >= 1.0:  # mask_max <= 1: start at mid-range instead
        return 0.0
    return float(np.log(p / (1.0 - p)))


# ---------------------------------------------------------------------------
# low-level pieces (forward + backward pairs)
# ---------------------------------------------------------------------------

def factor_strides(hop: int, n_layers: int) -> tuple[int, ...]:
    """Per-layer conv strides whose product equals the STFT hop."""
    if n_layers == 0:
        return ()
    strides = []
    remaining = hop
    for i in range(n_layers - 1):
        target = max(1, round(remaining ** (1.0 / (n_layers - i))))
        best = 1
        for cand in range(target, 0, -1):
            if remaining % cand == 0:
                best = cand
                break
        strides.append(best)
        remaining //= best
    strides.append(remaining)
    return tuple(strides)


def _conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                    stride: int) -> tuple[np.ndarray, np.ndarray]:
    # x [C_in, L], w [C_out, C_in, K] -> out [C_out, L_out]; returns (out, cols)
    k = w.shape[2]
    if x.shape[1] < k:
        raise LengthError(
            f"time-branch input of {x.shape[1]} samples shorter than kernel {k}"
        )
    cols = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)[:, ::stride, :]
    out = np.einsum("oik,itk->ot", w, cols) + b[:, None]
    return out, cols


def _conv1d_backward(g_out: np.ndarray, cols: np.ndarray, w: np.ndarray,
                     stride: int, in_len: int):
    g_w = np.einsum("ot,itk->oik", g_out, cols)
    g_b = g_out.sum(axis=1)
    g_cols = np.einsum("oik,ot->itk", w, g_out)
    g_x = np.zeros((w.shape[1], in_len))
    k = w.shape[2]
    for t in range(g_out.shape[1]):
        g_x[:, t * stride: t * stride + k] += g_cols[:, t, :]
    return g_w, g_b, g_x


def _layer_norm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xn = xc * inv
    return g * xn + b, (xn, inv, g)


def _layer_norm_backward(g_out: np.ndarray, cache):
    xn, inv, g = cache
    d = xn.shape[-1]
    g_gain = (g_out * xn).sum(axis=tuple(range(g_out.ndim - 1)))
    g_bias = g_out.sum(axis=tuple(range(g_out.ndim - 1)))
    gx_hat = g_out * g
    g_x = (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
           - xn * (gx_hat * xn).mean(axis=-1, keepdims=True)) * inv
    return g_x, g_gain, g_bias


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)  # [H, N, dh]


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _block_forward(x: np.ndarray, p: dict[str, np.ndarray], prefix: str,
                   n_heads: int):
    cache: dict = {"x_in": x}
    u, cache["ln1"] = _layer_norm_forward(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    cache["u"] = u
    q = u @ p[f"{prefix}.attn.wq"]
    k = u @ p[f"{prefix}.attn.wk"]
    v = u @ p[f"{prefix}.attn.wv"]
    qh, kh, vh = (_split_heads(z, n_heads) for z in (q, k, v))
    dh = qh.shape[-1]
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    attn = _softmax(scores)
    ctx = attn @ vh
    merged = _merge_heads(ctx)
    o = merged @ p[f"{prefix}.attn.wo"]
    x1 = x + o
    cache.update(qh=qh, kh=kh, vh=vh, attn=attn, merged=merged, x1=x1)

    u2, cache["ln2"] = _layer_norm_forward(x1, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    cache["u2"] = u2
    f1 = u2 @ p[f"{prefix}.ffn.w1"] + p[f"{prefix}.ffn.b1"]
    a1 = np.tanh(f1)
    f2 = a1 @ p[f"{prefix}.ffn.w2"] + p[f"{prefix}.ffn.b2"]
    cache["a1"] = a1
    return x1 + f2, cache


def _block_backward(g_out: np.ndarray, cache, p: dict[str, np.ndarray],
                    prefix: str, n_heads: int, grads: dict[str, np.ndarray]):
    a1, u2 = cache["a1"], cache["u2"]
    grads[f"{prefix}.ffn.w2"] += a1.T @ g_out
    grads[f"{prefix}.ffn.b2"] += g_out.sum(axis=0)
    g_a1 = g_out @ p[f"{prefix}.ffn.w2"].T
    g_f1 = g_a1 * (1.0 - a1 ** 2)
    grads[f"{prefix}.ffn.w1"] += u2.T @ g_f1
    grads[f"{prefix}.ffn.b1"] += g_f1.sum(axis=0)
    g_u2 = g_f1 @ p[f"{prefix}.ffn.w1"].T
    g_x1_ln, g_g2, g_b2 = _layer_norm_backward(g_u2, cache["ln2"])
    grads[f"{prefix}.ln2.g"] += g_g2
    grads[f"{prefix}.ln2.b"] += g_b2
    g_x1 = g_out + g_x1_ln  # residual + pre-norm path

    qh, kh, vh = cache["qh"], cache["kh"], cache["vh"]
    attn, merged, u = cache["attn"], cache["merged"], cache["u"]
    grads[f"{prefix}.attn.wo"] += merged.T @ g_x1
    g_merged = g_x1 @ p[f"{prefix}.attn.wo"].T
    g_ctx = _split_heads(g_merged, n_heads)
    g_attn = g_ctx @ vh.transpose(0, 2, 1)
    g_vh = attn.transpose(0, 2, 1) @ g_ctx
    g_scores = (g_attn - (g_attn * attn).sum(axis=-1, keepdims=True)) * attn
    dh = qh.shape[-1]
    g_qh = g_scores @ kh / np.sqrt(dh)
    g_kh = g_scores.transpose(0, 2, 1) @ qh / np.sqrt(dh)
    g_q, g_k, g_v = (_merge_heads(z) for z in (g_qh, g_kh, g_vh))
    grads[f"{prefix}.attn.wq"] += u.T @ g_q
    grads[f"{prefix}.attn.wk"] += u.T @ g_k
    grads[f"{prefix}.attn.wv"] += u.T @ g_v
    g_u = (g_q @ p[f"{prefix}.attn.wq"].T
           + g_k @ p[f"{prefix}.attn.wk"].T
           + g_v @ p[f"{prefix}.attn.wv"].T)
    g_x_ln, g_g1, g_b1 = _layer_norm_backward(g_u, cache["ln1"])
    grads[f"{prefix}.ln1.g"] += g_g1
    grads[f"{prefix}.ln1.b"] += g_b1
    return g_x1 + g_x_ln


def _positional_encoding(n: int, d: int) -> np.ndarray:
    pe = np.zeros((n, d))
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe


def pad_for_analysis(clip: AudioClip, cfg: StftConfig) -> tuple[AudioClip, int]:
    """Zero-pad so every original sample gets full window coverage.

    The public analysis grid starts frames at sample 0 with no padding, which
    makes the first/last ``window_len - hop`` samples partially covered;
    dividing a *modified* spectrogram by those small overlap-add weights
    amplifies edge content without bound. The model's decode path therefore
    pads by ``window_len - hop`` on the left (plus tail alignment on the
    right) and trims after synthesis. Returns (padded clip, left pad)."""
    if len(clip) < cfg.window_len:
        raise LengthError(
            f"clip of {len(clip)} samples is shorter than one window "
            f"({cfg.window_len})"
        )
    left = cfg.window_len - cfg.hop
    right = cfg.window_len - cfg.hop
    total = left + len(clip) + right
    rem = (total - cfg.window_len) % cfg.hop
    right += (cfg.hop - rem) % cfg.hop
    padded = np.pad(clip.samples, (left, right))
    return AudioClip(padded, clip.sample_rate, id=clip.id), left


def mask_frame_count(cfg: StftConfig, n_samples: int) -> int:
    """Frame count of the model's (padded) mask grid for a clip length."""
    left = cfg.window_len - cfg.hop
    right = cfg.window_len - cfg.hop
    total = left + n_samples + right
    rem = (total - cfg.window_len) % cfg.hop
    total += (cfg.hop - rem) % cfg.hop
    return (total - cfg.window_len) // cfg.hop + 1


# STFT/iSTFT adjoints. Complex gradients are packed as dL/dRe + 1j * dL/dIm.

def _stft_adjoint(g_bins: np.ndarray, cfg: StftConfig, n_samples: int) -> np.ndarray:
    n_frames = g_bins.shape[0]
    padded = np.zeros((n_frames, cfg.fft_len), dtype=np.complex128)
    padded[:, : g_bins.shape[1]] = g_bins
    g_frames_pad = cfg.fft_len * np.real(np.fft.ifft(padded, axis=1))
    g_frames = g_frames_pad[:, : cfg.window_len] * cfg.window_array()
    g_x = np.zeros(n_samples)
    for t in range(n_frames):
        start = t * cfg.hop
        stop = min(start + cfg.window_len, n_samples)
        g_x[start:stop] += g_frames[t, : stop - start]
    return g_x


def _istft_adjoint(g_y: np.ndarray, cfg: StftConfig, n_frames: int) -> np.ndarray:
    n = g_y.size
    den = ola_weight(cfg, n_frames, n)
    g_raw = np.zeros(n)
    np.divide(g_y, den, out=g_raw, where=den > 1e-12)
    window = cfg.window_array()
    g_frames = np.zeros((n_frames, cfg.fft_len))
    for t in range(n_frames):
        start = t * cfg.hop
        stop = min(start + cfg.window_len, n)
        g_frames[t, : stop - start] = g_raw[start:stop] * window[: stop - start]
    g_spec = np.fft.rfft(g_frames, n=cfg.fft_len, axis=1) * (2.0 / cfg.fft_len)
    g_spec[:, 0] *= 0.5
    if cfg.fft_len % 2 == 0:
        g_spec[:, -1] *= 0.5
    return g_spec


# ---------------------------------------------------------------------------
# model forward / backward
# ---------------------------------------------------------------------------

def _forward(model: HighlightModel, clip: AudioClip,
             text_embedding: np.ndarray | None, cfg: StftConfig,
             use_time_branch: bool = True,
             mask_override: np.ndarray | None = None):
    mcfg, p = model.cfg, model.params
    padded, left_pad = pad_for_analysis(clip, cfg)
    spec = stft(padded, cfg)
    if spec.n_bins != mcfg.n_bins:
        raise ShapeError(
            f"analysis yields {spec.n_bins} bins but the model was built for "
            f"{mcfg.n_bins}"
        )
    if text_embedding is not None:
        emb = np.asarray(text_embedding, dtype=np.float64)
        if emb.shape != (mcfg.c_text,):
            raise ShapeError(
                f"text embedding width {emb.shape} != (c_text={mcfg.c_text},)"
            )
    else:
        emb = None

    cache: dict = {"spec": spec, "emb": emb, "use_time_branch": use_time_branch,
                   "stft_cfg": cfg, "left_pad": left_pad, "out_len": len(clip)}
    s = spec.bins
    t_frames = s.shape[0]
    a_mag = np.abs(s)
    x_f = np.log1p(a_mag)
    cache["x_f"] = x_f
    freq_out = x_f @ p["freq.w"] + p["freq.b"]

    use_convs = use_time_branch and len(mcfg.conv_channels) > 0
    cache["use_convs"] = use_convs
    if use_convs:
        strides = factor_strides(cfg.hop, len(mcfg.conv_channels))
        cache["strides"] = strides
        h = padded.samples[None, :]
        conv_caches = []
        for i, stride in enumerate(strides):
            z, cols = _conv1d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"], stride)
            a = np.tanh(z)
            conv_caches.append({"cols": cols, "a": a, "in_len": h.shape[1]})
            h = a
        cache["conv_caches"] = conv_caches
        t_conv = h.shape[1]
        stride_total = int(np.prod(strides))
        idx = np.clip(np.round(np.arange(t_frames) * cfg.hop / stride_total),
                      0, t_conv - 1).astype(int)
        cache["pool_idx"] = idx
        time_feat = h.T[idx]
        fused = freq_out + time_feat
    else:
        fused = freq_out
    cache["fused"] = fused

    if emb is not None:
        ctx = emb @ p["text.w"] + p["text.b"]
    else:
        ctx = p["null.token"].copy()
    cache["ctx"] = ctx

    if mcfg.depth > 0:
        pe = _positional_encoding(t_frames, mcfg.d_model)
        seq = np.vstack([ctx[None, :], fused + pe])
        block_caches = []
        for i in range(mcfg.depth):
            seq, bc = _block_forward(seq, p, f"block{i}", mcfg.n_heads)
            block_caches.append(bc)
        cache["block_caches"] = block_caches
        h_frames = seq[1:]
    else:
        h_frames = fused + ctx[None, :]

    h_out, cache["final_ln"] = _layer_norm_forward(
        h_frames, p["final_ln.g"], p["final_ln.b"])
    cache["h_out"] = h_out
    logits = h_out @ p["mask.w"] + p["mask.b"]
    sig = 1.0 / (1.0 + np.exp(-logits))
    mask = mcfg.mask_max * sig
    cache["sig"] = sig
    if mask_override is not None:
        if mask_override.shape != mask.shape:
            raise ShapeError(
                f"mask override shape {mask_override.shape} != {mask.shape}"
            )
        mask = np.asarray(mask_override, dtype=np.float64)
        cache["overridden"] = True
    cache["mask"] = mask

    s_out = mask * s
    out_padded = istft(spec.with_bins(s_out))
    out_clip = AudioClip(
        out_padded.samples[left_pad: left_pad + len(clip)],
        clip.sample_rate, id=f"{clip.id}:remix" if clip.id else "remix",
    )
    return out_clip, mask, cache


def forward_remix(model: HighlightModel, poor_mix: AudioClip,
                  text_embedding: np.ndarray | None, cfg: StftConfig,
                  use_time_branch: bool = True,
                  mask_override: np.ndarray | None = None
                  ) -> tuple[AudioClip, np.ndarray]:
    """Predict a remix mask and apply it to the input's STFT (input phase
    kept). The mask lives on the padded analysis grid of
    ``mask_frame_count``; padding is trimmed after synthesis. An absent
    embedding falls back to the learned null token; ``mask_override`` is a
    test hook that bypasses the predicted mask."""
    out, mask, _ = _forward(model, poor_mix, text_embedding, cfg,
                            use_time_branch, mask_override)
    return out, mask


def apply_mask_to_clip(mask: np.ndarray, clip: AudioClip,
                       cfg: StftConfig) -> AudioClip:
    """Run the decode path (pad, analyze, multiply, synthesize, trim) with a
    given mask; used to re-gain ground-truth stems under a predicted mask."""
    padded, left = pad_for_analysis(clip, cfg)
    spec = stft(padded, cfg)
    if mask.shape != spec.bins.shape:
        raise ShapeError(f"mask shape {mask.shape} != grid {spec.bins.shape}")
    out = istft(spec.with_bins(mask * spec.bins))
    return AudioClip(out.samples[left: left + len(clip)], clip.sample_rate,
                     id=f"{clip.id}:regain" if clip.id else "regain")


def backward(model: HighlightModel, cache: dict,
             g_out_samples: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss wrt every parameter group, given the
    gradient wrt the output samples."""
    if cache.get("overridden"):
        raise ConfigError("cannot backprop through an overridden mask")
    mcfg, p = model.cfg, model.params
    spec: Spectrogram = cache["spec"]
    cfg: StftConfig = cache["stft_cfg"]
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    left_pad, out_len = cache["left_pad"], cache["out_len"]
    if g_out_samples.size != out_len:
        raise ShapeError(
            f"output gradient length {g_out_samples.size} != clip length {out_len}"
        )
    g_padded = np.zeros(spec.origin_len)
    g_padded[left_pad: left_pad + out_len] = g_out_samples
    g_s_out = _istft_adjoint(g_padded, cfg, spec.n_frames)
    g_mask = np.real(np.conj(g_s_out) * spec.bins)
    sig = cache["sig"]
    g_logits = g_mask * mcfg.mask_max * sig * (1.0 - sig)

    h_out = cache["h_out"]
    grads["mask.w"] += h_out.T @ g_logits
    grads["mask.b"] += g_logits.sum(axis=0)
    g_h_out = g_logits @ p["mask.w"].T

    g_h_frames, g_fg, g_fb = _layer_norm_backward(g_h_out, cache["final_ln"])
    grads["final_ln.g"] += g_fg
    grads["final_ln.b"] += g_fb

    if mcfg.depth > 0:
        g_seq = np.vstack([np.zeros((1, mcfg.d_model)), g_h_frames])
        for i in reversed(range(mcfg.depth)):
            g_seq = _block_backward(g_seq, cache["block_caches"][i], p,
                                    f"block{i}", mcfg.n_heads, grads)
        g_ctx = g_seq[0]
        g_fused = g_seq[1:]
    else:
        g_fused = g_h_frames
        g_ctx = g_h_frames.sum(axis=0)

    emb = cache["emb"]
    if emb is not None:
        grads["text.w"] += np.outer(emb, g_ctx)
        grads["text.b"] += g_ctx
    else:
        grads["null.token"] += g_ctx

    x_f = cache["x_f"]
    grads["freq.w"] += x_f.T @ g_fused
    grads["freq.b"] += g_fused.sum(axis=0)

    if cache["use_convs"]:
        idx = cache["pool_idx"]
        conv_caches = cache["conv_caches"]
        t_conv = conv_caches[-1]["a"].shape[1]
        g_conv_out = np.zeros((t_conv, mcfg.d_model))
        np.add.at(g_conv_out, idx, g_fused)
        g_h = g_conv_out.T
        strides = cache["strides"]
        for i in reversed(range(len(conv_caches))):
            cc = conv_caches[i]
            g_z = g_h * (1.0 - cc["a"] ** 2)
            g_w, g_b, g_h = _conv1d_backward(
                g_z, cc["cols"], p[f"conv{i}.w"], strides[i], cc["in_len"])
            grads[f"conv{i}.w"] += g_w
            grads[f"conv{i}.b"] += g_b

    return grads


# ---------------------------------------------------------------------------
# oracle mask and loss
# ---------------------------------------------------------------------------

def oracle_mask(poor: Spectrogram, target: Spectrogram,
                mask_max: float = 4.0) -> np.ndarray:
    """Magnitude-ratio mask clipped to [0, mask_max]; decode-path oracle."""
    if poor.bins.shape != target.bins.shape:
        raise ShapeError(
            f"spectrogram shapes differ: {poor.bins.shape} vs {target.bins.shape}"
        )
    return np.clip(target.magnitude() / (poor.magnitude() + 1e-8), 0.0, mask_max)


def loss_l1(pred: AudioClip, target: AudioClip, cfg: StftConfig) -> float:
    """Mean L1 distance over TF magnitude cells (mag metric / 100)."""
    return mag_metric(pred, target, cfg) / 100.0


def loss_l1_grad(pred: AudioClip, target: AudioClip,
                 cfg: StftConfig) -> tuple[float, np.ndarray]:
    """(loss, gradient wrt the prediction's samples)."""
    if len(pred) != len(target):
        raise ShapeError(f"length mismatch: {len(pred)} vs {len(target)}")
    spec_p = stft(pred, cfg)
    mag_p = spec_p.magnitude()
    mag_t = stft(target, cfg).magnitude()
    diff = mag_p - mag_t
    loss = float(np.abs(diff).mean())
    n_cells = diff.size
    safe = np.where(mag_p > 0, mag_p, 1.0)
    g_bins = np.sign(diff) / n_cells * (spec_p.bins / safe)
    g_bins[mag_p == 0] = 0.0
    g_pred = _stft_adjoint(g_bins, cfg, len(pred))
    return loss, g_pred


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

@dataclass
class TrainSample:
    """One training/eval item: degraded input, target mix, conditioning."""

    poor: AudioClip
    target: AudioClip
    text_embedding: np.ndarray | None = None
    clip_id: str = ""
    stems: StemSet | None = None


def _sample_loss(model: HighlightModel, sample: TrainSample, cfg: StftConfig,
                 use_time_branch: bool = True) -> float:
    out, _, _ = _forward(model, sample.poor, sample.text_embedding, cfg,
                         use_time_branch)
    return loss_l1(out, sample.target, cfg)


def grad_check(model: HighlightModel, sample: TrainSample, cfg: StftConfig,
               epsilon: float = 1e-5, use_time_branch: bool = True
               ) -> tuple[float, dict[str, float]]:
    """Worst relative error between analytic gradients and central finite
    differences, over every parameter group. Returns (max_err, per-group)."""
    out, _, cache = _forward(model, sample.poor, sample.text_embedding, cfg,
                             use_time_branch)
    _, g_pred = loss_l1_grad(out, sample.target, cfg)
    analytic = backward(model, cache, g_pred)

    errors: dict[str, float] = {}
    for name, arr in model.params.items():
        if not np.all(np.isfinite(analytic[name])):
            raise NumericError(f"non-finite analytic gradient in group {name}")
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            hi = _sample_loss(model, sample, cfg, use_time_branch)
            flat[j] = orig - epsilon
            lo = _sample_loss(model, sample, cfg, use_time_branch)
            flat[j] = orig
            fd_flat[j] = (hi - lo) / (2.0 * epsilon)
        na = float(np.linalg.norm(analytic[name]))
        nf = float(np.linalg.norm(fd))
        denom = na + nf
        errors[name] = 0.0 if denom == 0 else float(
            np.linalg.norm(analytic[name] - fd) / denom)
    return max(errors.values()), errors


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainTrace:
    epoch_losses: list[float] = field(default_factory=list)
    model_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"epoch_losses": self.epoch_losses,
                "model_config": self.model_config,
                "train_config": self.train_config}


def train_toy(model: HighlightModel, dataset: list[TrainSample],
              tcfg: TrainConfig, cfg: StftConfig,
              checkpoint_path=None) -> TrainTrace:
    """Adam training loop, deterministic given (model seed, tcfg.seed).

    Per-epoch mean loss is recorded; a NaN loss aborts with the epoch/batch
    index. The final model is serialized when ``checkpoint_path`` is given.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    rng = np.random.default_rng(tcfg.seed)
    m_state = {n: np.zeros_like(a) for n, a in model.params.items()}
    v_state = {n: np.zeros_like(a) for n, a in model.params.items()}
    step = 0
    trace = TrainTrace(model_config=model.cfg.to_dict(),
                       train_config=tcfg.to_dict())

    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(dataset))
        # indexed by sample so the epoch mean is independent of shuffle order
        losses = np.zeros(len(dataset))
        for b_start in range(0, len(dataset), tcfg.batch_size):
            batch = order[b_start: b_start + tcfg.batch_size]
            grads = {n: np.zeros_like(a) for n, a in model.params.items()}
            for si in batch:
                sample = dataset[si]
                try:
                    out, _, cache = _forward(model, sample.poor,
                                             sample.text_embedding, cfg)
                    loss, g_pred = loss_l1_grad(out, sample.target, cfg)
                except DataError as e:
                    raise NumericError(
                        f"non-finite forward at epoch {epoch}, batch "
                        f"{b_start // tcfg.batch_size}: {e}"
                    )
                if not np.isfinite(loss):
                    raise NumericError(
                        f"loss became non-finite at epoch {epoch}, "
                        f"batch {b_start // tcfg.batch_size}"
                    )
                losses[si] = loss
                sample_grads = backward(model, cache, g_pred)
                for n in grads:
                    grads[n] += sample_grads[n] / len(batch)
            step += 1
            bc1 = 1.0 - tcfg.beta1 ** step
            bc2 = 1.0 - tcfg.beta2 ** step
            for n, arr in model.params.items():
                g = grads[n]
                m_state[n] = tcfg.beta1 * m_state[n] + (1 - tcfg.beta1) * g
                v_state[n] = tcfg.beta2 * v_state[n] + (1 - tcfg.beta2) * g * g
                arr -= (tcfg.learning_rate * (m_state[n] / bc1)
                        / (np.sqrt(v_state[n] / bc2) + tcfg.adam_eps))
                if not np.all(np.isfinite(arr)):
                    raise NumericError(
                        f"weights in {n} became non-finite at epoch {epoch}, "
                        f"batch {b_start // tcfg.batch_size}"
                    )
        trace.epoch_losses.append(float(np.mean(losses)))

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model)
    return trace


# ---------------------------------------------------------------------------
# depth sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    depth: int
    mag: float
    env: float
    kld: float
    w_dis: float
    param_count: int


def evaluate_model(model: HighlightModel, eval_set: list[TrainSample],
                   cfg: StftConfig) -> dict[str, float]:
    """Mean mag/env/kld/w_dis of model outputs against the targets.

    W-dis trajectories come from the ground-truth stems under the predicted
    mask versus unit gain, so no separator is needed."""
    scores: dict[str, list[float]] = {"mag": [], "env": [], "kld": [], "w_dis": []}
    for sample in eval_set:
        out, mask = forward_remix(model, sample.poor, sample.text_embedding, cfg)
        scores["mag"].append(mag_metric(out, sample.target, cfg))
        scores["env"].append(env_metric(out, sample.target))
        scores["kld"].append(kld_metric(
            mel_event_distribution(out, cfg),
            mel_event_distribution(sample.target, cfg)))
        if sample.stems is not None:
            pred_trajs = {}
            ref_trajs = {}
            for name in STEM_NAMES:
                stem = sample.stems.stem(name)
                masked = apply_mask_to_clip(mask, stem, cfg)
                pred_trajs[name] = loudness_trajectory(
                    masked, cfg.window_len, cfg.hop, stem_class=name)
                ref_trajs[name] = loudness_trajectory(
                    stem, cfg.window_len, cfg.hop, stem_class=name)
            scores["w_dis"].append(w_dis_metric(
                StemTrajectories(**pred_trajs), StemTrajectories(**ref_trajs)))
    return {k: float(np.mean(v)) if v else float("nan")
            for k, v in scores.items()}


def depth_sweep(train_set: list[TrainSample], depths: list[int],
                tcfg: TrainConfig, eval_set: list[TrainSample],
                cfg: StftConfig, base_cfg: ModelConfig) -> list[SweepRow]:
    """Train one model per depth under identical data/seeds and score each."""
    if not depths:
        raise ConfigError("depth sweep needs at least one depth")
    if any(not 0 <= d <= MAX_DEPTH for d in depths):
        raise ConfigError(f"depths must lie in [0, {MAX_DEPTH}]: {depths}")
    rows = []
    for depth in depths:
        mcfg = replace(base_cfg, depth=depth)
        model = build_model(mcfg)
        train_toy(model, train_set, tcfg, cfg)
        scores = evaluate_model(model, eval_set, cfg)
        rows.append(SweepRow(depth, scores["mag"], scores["env"],
                             scores["kld"], scores["w_dis"], param_count(mcfg)))
    return rows


SWEEP_COLUMNS = ("depth", "mag", "env", "kld", "w_dis", "param_count")


def save_sweep_csv(path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([r.depth, repr(r.mag), repr(r.env), repr(r.kld),
                             repr(r.w_dis), r.param_count])


def load_sweep_csv(path) -> list[SweepRow]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(SweepRow(int(row["depth"]), float(row["mag"]),
                                float(row["env"]), float(row["kld"]),
                                float(row["w_dis"]), int(row["param_count"])))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: HighlightModel) -> None:
    """Single-file binary: magic, JSON header, little-endian float32 data."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "param_count": model.param_count,
        "seed": model.cfg.seed,
        "groups": [{"name": n, "shape": list(a.shape)}
                   for n, a in model.params.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in model.params.values():
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> HighlightModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["format_version"] != CHECKPOINT_VERSION:
            raise ConfigError(
                f"{path}: unsupported checkpoint version "
                f"{header['format_version']}"
            )
        cfg = ModelConfig.from_dict(header["config"])
        params = {}
        for group in header["groups"]:
            shape = tuple(group["shape"])
            count = int(np.prod(shape))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ConfigError(f"{path}: truncated checkpoint data")
            params[group["name"]] = np.frombuffer(raw, dtype="<f4").astype(
                np.float64).reshape(shape)
    model = HighlightModel(cfg, params)
    if model.param_count != header["param_count"]:
        raise ConfigError(f"{path}: parameter count mismatch")
    return model
