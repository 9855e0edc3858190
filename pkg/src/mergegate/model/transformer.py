"""Byte-level encoder-decoder with a deletion gate at a fixed encoder layer.

Pre-norm T5-style blocks (RMSNorm, additive relative-position biases, no
linear biases, ReLU feed-forward) built on the taped numerics engine. The
encoder runs every layer up to the gate layer on the full sequence, applies
the gate, then either masks deleted tokens in the remaining layers (soft),
physically compacts the batch (hard), or ignores the gate entirely (none).
"""

from __future__ import annotations

import time
from typing import Callable, Optional

import numpy as np

from ..numerics import Tensor, cross_entropy, embedding, relu, rms_norm
from .attention import (
    additive_mask,
    causal_mask,
    merge_heads,
    relative_position_bias,
    soft_deletion_attention,
    split_heads,
)
from .config import Batch, EncoderResult, GateOutput, ModelConfig
from .gate import delete_gate, hard_delete, saturate_gate as _saturate, zero_gate

# A pooling baseline drops in at the gate layer: hidden, valid -> compacted
# hidden, new valid mask, bias-source positions, auxiliary loss terms.
Pooler = Callable[[Tensor, np.ndarray], tuple[Tensor, np.ndarray, np.ndarray, dict]]


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """T5-scaled random parameters, keyed by dotted names.

    The gate starts near "keep everything": zero projection, unit norm gain
    and bias -4 put every gate value around 0.018 * floor.
    """
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    d, ff, heads = config.d_model, config.d_ff, config.n_heads
    p: dict[str, Tensor] = {}

    def param(name, shape, std):
        if std == 0.0:
            data = np.zeros(shape, dtype=dt)
        else:
            data = rng.normal(0.0, std, size=shape).astype(dt)
        p[name] = Tensor(data, requires_grad=True)

    def ones(name, shape):
        p[name] = Tensor(np.ones(shape, dtype=dt), requires_grad=True)

    param("embed.weight", (config.vocab_size, d), 1.0)
    param("head.weight", (d, config.vocab_size), d**-0.5)
    param("enc.bias.weight", (config.n_buckets, heads), d**-0.5)
    param("dec.bias.weight", (config.n_buckets, heads), d**-0.5)

    def attn_block(prefix):
        param(f"{prefix}.wq", (d, d), (d * config.d_head) ** -0.5)
        param(f"{prefix}.wk", (d, d), d**-0.5)
        param(f"{prefix}.wv", (d, d), d**-0.5)
        param(f"{prefix}.wo", (d, d), d**-0.5)

    for i in range(config.n_encoder_layers):
        attn_block(f"enc.{i}.attn")
        ones(f"enc.{i}.attn_norm.gain", (d,))
        param(f"enc.{i}.ff.wi", (d, ff), d**-0.5)
        param(f"enc.{i}.ff.wo", (ff, d), ff**-0.5)
        ones(f"enc.{i}.ff_norm.gain", (d,))
    ones("enc.final_norm.gain", (d,))

    for i in range(config.n_decoder_layers):
        attn_block(f"dec.{i}.self")
        ones(f"dec.{i}.self_norm.gain", (d,))
        attn_block(f"dec.{i}.cross")
        ones(f"dec.{i}.cross_norm.gain", (d,))
        param(f"dec.{i}.ff.wi", (d, ff), d**-0.5)
        param(f"dec.{i}.ff.wo", (ff, d), ff**-0.5)
        ones(f"dec.{i}.ff_norm.gain", (d,))
    ones("dec.final_norm.gain", (d,))

    param("gate.w", (d,), 0.0)
    p["gate.b"] = Tensor(np.full((1,), -4.0, dtype=dt), requires_grad=True)
    ones("gate.norm_gain", (d,))
    return p


def gate_param_count(config: ModelConfig) -> int:
    return 2 * config.d_model + 1


def _attention_sublayer(
    p: dict,
    prefix: str,
    norm_name: str,
    h: Tensor,
    kv_source: Tensor,
    cfg: ModelConfig,
    bias,
    mask_add,
    gate_vec,
    collect: Optional[list],
) -> Tensor:
    x = rms_norm(h, p[f"{norm_name}.gain"])
    if kv_source is h:
        kv_in = x
    else:
        kv_in = kv_source
    q = split_heads(x @ p[f"{prefix}.wq"], cfg.n_heads, cfg.d_head)
    k = split_heads(kv_in @ p[f"{prefix}.wk"], cfg.n_heads, cfg.d_head)
    v = split_heads(kv_in @ p[f"{prefix}.wv"], cfg.n_heads, cfg.d_head)
    out, scores = soft_deletion_attention(q, k, v, bias, mask_add, gate_vec)
    if collect is not None:
        collect.append(scores)
    return h + merge_heads(out) @ p[f"{prefix}.wo"]


def _ff_sublayer(p: dict, prefix: str, norm_name: str, h: Tensor) -> Tensor:
    x = rms_norm(h, p[f"{norm_name}.gain"])
    return h + relu(x @ p[f"{prefix}.wi"]) @ p[f"{prefix}.wo"]


def _encoder_layer(p, i, h, cfg, bias, mask_add, gate_vec, collect):
    h = _attention_sublayer(
        p, f"enc.{i}.attn", f"enc.{i}.attn_norm", h, h, cfg, bias, mask_add, gate_vec, collect
    )
    return _ff_sublayer(p, f"enc.{i}.ff", f"enc.{i}.ff_norm", h)


def encoder_forward(
    p: dict,
    cfg: ModelConfig,
    encoder_ids: np.ndarray,
    encoder_valid: np.ndarray,
    mode: str | None = None,
    external_gate: GateOutput | None = None,
    gate_noise: tuple[np.ndarray, np.ndarray] | None = None,
    saturate_gate: bool = False,
    pooler: Pooler | None = None,
    collect_scores: bool = True,
) -> EncoderResult:
    """Run the encoder stack, returning memory plus gate decisions and stats.

    Score matrices (scaled q k^T, before bias/mask/gate) are collected from
    the gate layer onward for the attention-score regularizer.
    """
    mode = cfg.deletion_mode if mode is None else mode
    dt = cfg.np_dtype
    batch, n = encoder_ids.shape
    gate_idx = cfg.gate_layer  # 1-based; layers [0, gate_idx) run before the gate

    h = embedding(p["embed.weight"], encoder_ids)
    positions = np.arange(n)
    bias = relative_position_bias(
        p["enc.bias.weight"], positions, positions,
        bidirectional=True, max_distance=cfg.max_distance,
    )
    mask_add = additive_mask(encoder_valid, dt)
    scores: list[Tensor] = []
    collect = scores if collect_scores else None

    t0 = time.perf_counter()
    for i in range(gate_idx):
        layer_collect = collect if (i + 1) >= gate_idx else None
        h = _encoder_layer(p, i, h, cfg, bias, mask_add, None, layer_collect)
    pre_gate_s = time.perf_counter() - t0

    stats: dict = {"mode": mode, "original_length": n}
    gate: Optional[GateOutput] = None
    cross_gate: Optional[Tensor] = None
    kept_positions: Optional[np.ndarray] = None
    memory_valid = encoder_valid.astype(bool)

    t1 = time.perf_counter()
    if pooler is not None:
        h, memory_valid, kept_positions, aux = pooler(h, encoder_valid)
        stats.update(aux)
        bias = relative_position_bias(
            p["enc.bias.weight"], kept_positions, kept_positions,
            bidirectional=True, max_distance=cfg.max_distance,
        )
        mask_add = additive_mask(memory_valid, dt)
        for i in range(gate_idx, cfg.n_encoder_layers):
            h = _encoder_layer(p, i, h, cfg, bias, mask_add, None, collect)
        stats["compacted_length"] = h.shape[1]
    else:
        if external_gate is not None:
            gate = external_gate
        elif mode == "none":
            gate = zero_gate(batch, n, encoder_valid, cfg.gate_floor, dt)
        else:
            gate = delete_gate(
                h, p["gate.w"], p["gate.b"], p["gate.norm_gain"],
                cfg.gate_floor, encoder_valid, noise=gate_noise,
            )
        if saturate_gate:
            gate = _saturate(gate)

        if mode in ("none", "soft"):
            gate_vec = gate.values if mode == "soft" else None
            for i in range(gate_idx, cfg.n_encoder_layers):
                h = _encoder_layer(p, i, h, cfg, bias, mask_add, gate_vec, collect)
            cross_gate = gate.values if mode == "soft" else None
        elif mode == "hard":
            h, memory_valid, kept_positions, rescued = hard_delete(h, gate)
            stats["rescued_sequences"] = rescued
            stats["compacted_length"] = h.shape[1]
            bias = relative_position_bias(
                p["enc.bias.weight"], kept_positions, kept_positions,
                bidirectional=True, max_distance=cfg.max_distance,
            )
            mask_add = additive_mask(memory_valid, dt)
            for i in range(gate_idx, cfg.n_encoder_layers):
                h = _encoder_layer(p, i, h, cfg, bias, mask_add, None, collect)
        else:
            raise ValueError(f"unknown deletion mode {mode!r}")
        stats["deletion_ratio"] = gate.deletion_ratio
        stats["per_sequence_reduction"] = gate.per_sequence_reduction
    stats["pre_gate_seconds"] = pre_gate_s
    stats["post_gate_seconds"] = time.perf_counter() - t1

    memory = rms_norm(h, p["enc.final_norm.gain"])
    return EncoderResult(
        memory=memory,
        memory_valid=memory_valid,
        gate=gate,
        cross_gate=cross_gate,
        kept_positions=kept_positions,
        scores=scores,
        stats=stats,
    )


def decoder_forward(
    p: dict,
    cfg: ModelConfig,
    decoder_ids: np.ndarray,
    enc: EncoderResult,
    decoder_valid: np.ndarray | None = None,
    collect_scores: bool = True,
) -> tuple[Tensor, list[Tensor]]:
    """Teacher-forced decoder pass; returns next-token logits and the
    cross-attention score matrices."""
    dt = cfg.np_dtype
    batch, m = decoder_ids.shape

    h = embedding(p["embed.weight"], decoder_ids)
    positions = np.arange(m)
    self_bias = relative_position_bias(
        p["dec.bias.weight"], positions, positions,
        bidirectional=False, max_distance=cfg.max_distance,
    )
    self_mask = causal_mask(m, dt)
    if decoder_valid is not None:
        self_mask = self_mask + additive_mask(decoder_valid, dt)
    mem_mask = additive_mask(enc.memory_valid, dt)

    cross_scores: list[Tensor] = []
    collect = cross_scores if collect_scores else None
    for i in range(cfg.n_decoder_layers):
        h = _attention_sublayer(
            p, f"dec.{i}.self", f"dec.{i}.self_norm", h, h, cfg,
            self_bias, self_mask, None, None,
        )
        h = _attention_sublayer(
            p, f"dec.{i}.cross", f"dec.{i}.cross_norm", h, enc.memory, cfg,
            None, mem_mask, enc.cross_gate, collect,
        )
        h = _ff_sublayer(p, f"dec.{i}.ff", f"dec.{i}.ff_norm", h)

    h = rms_norm(h, p["dec.final_norm.gain"])
    return h @ p["head.weight"], cross_scores


def model_forward(
    p: dict,
    cfg: ModelConfig,
    batch: Batch,
    mode: str | None = None,
    pad_id: int = 0,
    gate_noise=None,
    external_gate: GateOutput | None = None,
    pooler: Pooler | None = None,
    collect_scores: bool = True,
    saturate_gate: bool = False,
) -> dict:
    """Full encoder/decoder pass plus cross-entropy.

    Returns a dict with the loss pieces still attached to the tape:
    ce (Tensor), logits, encoder result, and the score matrices from the
    gate layer onward (encoder) plus all cross-attention layers.
    """
    enc = encoder_forward(
        p, cfg, batch.encoder_ids, batch.encoder_valid,
        mode=mode, external_gate=external_gate, gate_noise=gate_noise,
        saturate_gate=saturate_gate, pooler=pooler, collect_scores=collect_scores,
    )
    decoder_valid = batch.decoder_targets != pad_id
    logits, cross_scores = decoder_forward(
        p, cfg, batch.decoder_ids, enc,
        decoder_valid=decoder_valid, collect_scores=collect_scores,
    )
    ce = cross_entropy(logits, batch.decoder_targets, ignore_id=pad_id)
    return {
        "ce": ce,
        "logits": logits,
        "encoder": enc,
        "scores": enc.scores + cross_scores,
    }
