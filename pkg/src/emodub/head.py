"""Hierarchical aggregation head and desk-scale toy trainer.

The head fuses the three encoded graph-stage feature matrices into an
aligned feature sequence in four steps, each a cross-attention read
followed by a width-preserving convolution over the concatenation:

1. attend the aligned sequence over the basic-stage features,
2. attend that result over the indirect-stage features,
3. attend that result over the direct-stage features,
4. fuse the original aligned sequence with the step-3 output.

The upstream aligner that produces the aligned sequence is out of scope
and replaced by a seeded stub; a toy mel projection plus MSE loss gives
the whole pipeline a scalar objective so training and gradient checking
are end-to-end exercises of every parameter.

Training is single-threaded per step; evaluation over many inputs is
embarrassingly parallel with shared read-only parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamState,
    Conv1dParams,
    CrossAttentionParams,
    LinearParams,
    Parameter,
    Tensor,
    apply_linear,
    as_tensor,
    concat_cols,
    conv1d,
    cross_attention,
    mse,
)
from .errors import ArgumentError, NumericError, ShapeError
from .graph import GAEParams, ProgressiveEncoding, ProjectionParams, progressive_encode
from .library import FootageLibrary, Modality
from .retrieval import Metric, Mode, Query, RetrievalResult, retrieve_all
from .rng import SplitMix64, stream


@dataclass
class HeadParams:
    """Three cross-attention blocks, four convolutions, and the mel head."""

    ca_basic: CrossAttentionParams
    ca_indirect: CrossAttentionParams
    ca_direct: CrossAttentionParams
    conv_basic: Conv1dParams
    conv_indirect: Conv1dParams
    conv_direct: Conv1dParams
    conv_out: Conv1dParams
    mel: LinearParams

    @classmethod
    def init(
        cls,
        dim: int,
        rng: SplitMix64,
        n_mel: int = 80,
        conv_width: int = 1,
        heads: int = 1,
    ) -> "HeadParams":
        return cls(
            ca_basic=CrossAttentionParams.init("head.ca_basic", dim, rng, heads),
            ca_indirect=CrossAttentionParams.init("head.ca_indirect", dim, rng, heads),
            ca_direct=CrossAttentionParams.init("head.ca_direct", dim, rng, heads),
            conv_basic=Conv1dParams.init("head.conv_basic", 2 * dim, dim, rng, conv_width),
            conv_indirect=Conv1dParams.init("head.conv_indirect", 2 * dim, dim, rng, conv_width),
            conv_direct=Conv1dParams.init("head.conv_direct", 2 * dim, dim, rng, conv_width),
            conv_out=Conv1dParams.init("head.conv_out", 2 * dim, dim, rng, conv_width),
            mel=LinearParams.init("head.mel", dim, n_mel, rng),
        )

    @property
    def dim(self) -> int:
        return self.ca_basic.dim

    def parameters(self) -> list[Parameter]:
        out = []
        for block in (self.ca_basic, self.ca_indirect, self.ca_direct):
            out.extend(block.parameters())
        for conv in (self.conv_basic, self.conv_indirect, self.conv_direct, self.conv_out):
            out.extend(conv.parameters())
        out.extend(self.mel.parameters())
        return out


def aggregate(
    aligned: Tensor,
    h_basic: Tensor,
    h_indirect: Tensor,
    h_direct: Tensor,
    params: HeadParams,
    with_weights: bool = False,
):
    """Fuse the three stage encodings into the aligned sequence.

    Sequence length is preserved at every step; the final fusion reads the
    original aligned sequence again, so the output depends on it both
    directly and through the attention chain. Returns the L x d output,
    plus all cross-attention weight matrices when requested.
    """
    aligned = as_tensor(aligned)
    for mat, label in ((h_basic, "basic"), (h_indirect, "indirect"), (h_direct, "direct")):
        if as_tensor(mat).rows < 1:
            raise ShapeError(f"{label} stage features must be non-empty")
    weights: list[np.ndarray] = []

    def attend(q, kv, block):
        out, w = cross_attention(q, kv, kv, block, with_weights=True)
        weights.extend(w)
        return out

    fused_basic = conv1d(concat_cols(aligned, attend(aligned, h_basic, params.ca_basic)), params.conv_basic)
    fused_indirect = conv1d(
        concat_cols(fused_basic, attend(fused_basic, h_indirect, params.ca_indirect)),
        params.conv_indirect,
    )
    fused_direct = conv1d(
        concat_cols(fused_indirect, attend(fused_indirect, h_direct, params.ca_direct)),
        params.conv_direct,
    )
    out = conv1d(concat_cols(aligned, fused_direct), params.conv_out)
    return (out, weights) if with_weights else out


def stub_aligned_sequence(seed: int, length: int, dim: int) -> Tensor:
    """Deterministic stand-in for the cross-modal aligner output.

    Values are uniform in [-1, 1) from the stream keyed by
    ``(seed, "aligned")``, drawn row-major over an L x dim matrix.
    """
    if length < 1:
        raise ArgumentError(f"sequence length must be >= 1, got {length}")
    rng = stream(seed, "aligned")
    data = np.array([[rng.next_signed_unit() for _ in range(dim)] for _ in range(length)])
    return Tensor(data)


def toy_mel_head(fused: Tensor, params: HeadParams) -> Tensor:
    """Per-frame linear projection of the fused features to mel bins."""
    return apply_linear(fused, params.mel)


@dataclass
class PipelineParams:
    """All trainable parameters of the desk-scale pipeline."""

    proj: ProjectionParams
    gae: GAEParams
    head: HeadParams

    @classmethod
    def init(
        cls,
        scene_dim: int,
        face_dim: int,
        text_dim: int,
        audio_dim: int,
        dim: int,
        rng: SplitMix64,
        n_mel: int = 80,
        conv_width: int = 1,
        gae_layers: int = 1,
        gae_heads: int = 1,
        ca_heads: int = 1,
    ) -> "PipelineParams":
        return cls(
            proj=ProjectionParams.init(scene_dim, face_dim, text_dim, audio_dim, dim, rng),
            gae=GAEParams.init(dim, rng, num_layers=gae_layers, heads=gae_heads),
            head=HeadParams.init(dim, rng, n_mel=n_mel, conv_width=conv_width, heads=ca_heads),
        )

    @classmethod
    def init_for_library(
        cls, lib: FootageLibrary, dim: int, rng: SplitMix64, **kwargs
    ) -> "PipelineParams":
        return cls.init(
            scene_dim=lib.schema[Modality.SCENE],
            face_dim=lib.schema[Modality.FACE],
            text_dim=lib.schema[Modality.TEXT_SELF] + lib.schema[Modality.TEXT_REACT],
            audio_dim=lib.schema[Modality.AUDIO],
            dim=dim,
            rng=rng,
            **kwargs,
        )

    def parameters(self) -> list[Parameter]:
        return self.proj.parameters() + self.gae.parameters() + self.head.parameters()


@dataclass
class ToyBatch:
    """One fixed training example: query vectors, retrieval, aligned stub, target."""

    scene: np.ndarray
    face: np.ndarray
    text_concat: np.ndarray
    retrieved: RetrievalResult
    aligned: Tensor
    target_mel: np.ndarray


def make_toy_batch(
    lib: FootageLibrary,
    query: Query,
    seed: int,
    length: int,
    dim: int,
    n_mel: int,
    k: int = 3,
    metric: Metric = Metric.COSINE,
    mode: Mode = Mode.SPEAKER_AGNOSTIC,
) -> ToyBatch:
    """Assemble a deterministic batch from a library query.

    The mel target is uniform in [-1, 1) from the stream keyed by
    ``(seed, "mel-target")``.
    """
    retrieved = retrieve_all(lib, query, k, metric, mode)
    rng = stream(seed, "mel-target")
    target = np.array([[rng.next_signed_unit() for _ in range(n_mel)] for _ in range(length)])
    return ToyBatch(
        scene=query.scene.values,
        face=query.face.values,
        text_concat=np.concatenate([query.text_self.values, query.text_react.values]),
        retrieved=retrieved,
        aligned=stub_aligned_sequence(seed, length, dim),
        target_mel=target,
    )


def toy_forward(batch: ToyBatch, model: PipelineParams) -> tuple[Tensor, ProgressiveEncoding]:
    """Full forward pass: progressive encode, aggregate, mel projection."""
    encoding = progressive_encode(
        batch.scene, batch.face, batch.text_concat, batch.retrieved, model.proj, model.gae
    )
    fused = aggregate(
        batch.aligned, encoding.h_basic, encoding.h_indirect, encoding.h_direct, model.head
    )
    return toy_mel_head(fused, model.head), encoding


def toy_loss(batch: ToyBatch, model: PipelineParams) -> Tensor:
    pred, _ = toy_forward(batch, model)
    return mse(pred, batch.target_mel)


def toy_train_step(batch: ToyBatch, model: PipelineParams, adam: AdamState) -> float:
    """One training step: forward, MSE, backward, Adam update. Returns the loss."""
    loss = toy_loss(batch, model)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"training loss is non-finite: {value}")
    loss.backward()
    adam.step()
    return value


def train_toy(
    batch: ToyBatch,
    model: PipelineParams,
    steps: int,
    lr: float = 0.00625,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> list[float]:
    """Run the toy loop for ``steps`` updates; returns the loss per step."""
    if steps < 1:
        raise ArgumentError(f"steps must be >= 1, got {steps}")
    adam = AdamState(model.parameters(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    return [toy_train_step(batch, model, adam) for _ in range(steps)]
