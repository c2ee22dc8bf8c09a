"""Emotion-similarity top-K retrieval over a footage library.

Each of the three query channels (scene, face, text) is searched
independently with the target's own emotion vectors as queries. The text
channel scores a candidate by the mean of the self-half and react-half
similarities. Every hit also carries the candidate's stored audio vector,
matched by index lookup, so downstream consumers get the direct audio
signal for each indirect hit.

Ranking uses an exhaustive scan with the total order (score descending,
record_id ascending); with library sizes around 10^4 this is faster to
verify and plenty fast to run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ArgumentError, SchemaError
from .library import EmotionVector, FootageLibrary, FootageRecord, Modality

#: The three retrieval channels, in documented order.
CHANNELS: tuple[str, ...] = ("scene", "face", "text")


class Metric(Enum):
    COSINE = "cosine"
    DOT = "dot"
    NEG_EUCLIDEAN = "euclid"


class Mode(Enum):
    SPEAKER_AGNOSTIC = "agnostic"
    SPEAKER_SPECIFIC = "specific"


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


def similarity(metric: Metric, a: EmotionVector, b: EmotionVector) -> float:
    """Score a pair of vectors; higher is always better.

    Cosine: dot(a, b) / (|a| * |b|), requires both norms > 0.
    Dot: plain inner product. NegEuclidean: negated L2 distance, so the
    max-K interface is shared by all three metrics.
    """
    va, vb = a.values, b.values
    if va.shape[0] != vb.shape[0]:
        raise SchemaError(f"similarity dim mismatch: {va.shape[0]} vs {vb.shape[0]}")
    if metric is Metric.COSINE:
        na = math.sqrt(_dot(va, va))
        nb = math.sqrt(_dot(vb, vb))
        if na == 0.0 or nb == 0.0:
            raise ArgumentError("cosine similarity is undefined for a zero vector")
        return _dot(va, vb) / (na * nb)
    if metric is Metric.DOT:
        return _dot(va, vb)
    diff = va - vb
    return -math.sqrt(_dot(diff, diff))


def text_criterion(
    metric: Metric,
    q_self: EmotionVector,
    q_react: EmotionVector,
    r_self: EmotionVector,
    r_react: EmotionVector,
) -> float:
    """Text-channel score: mean of the self-half and react-half similarities."""
    return 0.5 * (similarity(metric, q_self, r_self) + similarity(metric, q_react, r_react))


@dataclass
class Query:
    """The target utterance's own emotion vectors, used as retrieval queries."""

    scene: EmotionVector
    face: EmotionVector
    text_self: EmotionVector
    text_react: EmotionVector
    speaker_id: str | None = None
    exclude_ids: frozenset[int] = field(default_factory=frozenset)

    @classmethod
    def from_record(cls, record: FootageRecord, exclude_self: bool = True) -> "Query":
        """Query a library with one of its own records, excluding it by default."""
        return cls(
            scene=record.scene,
            face=record.face,
            text_self=record.text_self,
            text_react=record.text_react,
            speaker_id=record.speaker_id,
            exclude_ids=frozenset({record.record_id}) if exclude_self else frozenset(),
        )

    def validate(self, lib: FootageLibrary, metric: Metric) -> None:
        pairs = (
            (self.scene, Modality.SCENE),
            (self.face, Modality.FACE),
            (self.text_self, Modality.TEXT_SELF),
            (self.text_react, Modality.TEXT_REACT),
        )
        for vec, modality in pairs:
            want = lib.schema[modality]
            if vec.dim != want:
                raise SchemaError(
                    f"query {modality.value} dim {vec.dim} does not match schema dim {want}"
                )
            if metric is Metric.COSINE and not np.any(vec.values):
                raise ArgumentError(
                    f"query {modality.value} is all-zero; undefined under cosine"
                )


def _channel_score(metric: Metric, query: Query, rec: FootageRecord, channel: str) -> float:
    if channel == "scene":
        return similarity(metric, query.scene, rec.scene)
    if channel == "face":
        return similarity(metric, query.face, rec.face)
    if channel == "text":
        return text_criterion(metric, query.text_self, query.text_react, rec.text_self, rec.text_react)
    raise ArgumentError(f"unknown retrieval channel {channel!r}")


def retrieve_modality(
    lib: FootageLibrary,
    query: Query,
    channel: str,
    k: int,
    metric: Metric = Metric.COSINE,
    mode: Mode = Mode.SPEAKER_AGNOSTIC,
) -> list[tuple[int, float]]:
    """Top-K candidates for one channel as (record_id, score) pairs.

    Candidates are all records minus ``query.exclude_ids``, restricted to
    the query's speaker under SPEAKER_SPECIFIC. Returns fewer than K pairs
    only when the candidate set is smaller than K; an empty candidate set
    yields an empty list.
    """
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if mode is Mode.SPEAKER_SPECIFIC and query.speaker_id is None:
        raise ArgumentError("speaker-specific retrieval requires query.speaker_id")
    query.validate(lib, metric)
    scored: list[tuple[float, int]] = []
    for rec in lib.records:
        if rec.record_id in query.exclude_ids:
            continue
        if mode is Mode.SPEAKER_SPECIFIC and rec.speaker_id != query.speaker_id:
            continue
        scored.append((_channel_score(metric, query, rec, channel), rec.record_id))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [(rid, score) for score, rid in scored[:k]]


@dataclass
class RetrievalResult:
    """Per-channel rankings plus the vectors the graph stages consume.

    ``indirect_vectors[channel][j]`` is the emotion vector of the rank-j hit
    (for text, the concatenation of its self and react halves);
    ``matched_audio[channel][j]`` is that same record's stored audio vector.
    """

    rankings: dict[str, list[tuple[int, float]]]
    indirect_vectors: dict[str, list[np.ndarray]]
    matched_audio: dict[str, list[np.ndarray]]

    @classmethod
    def empty(cls) -> "RetrievalResult":
        return cls(
            rankings={c: [] for c in CHANNELS},
            indirect_vectors={c: [] for c in CHANNELS},
            matched_audio={c: [] for c in CHANNELS},
        )


def retrieve_all(
    lib: FootageLibrary,
    query: Query,
    k: int,
    metric: Metric = Metric.COSINE,
    mode: Mode = Mode.SPEAKER_AGNOSTIC,
) -> RetrievalResult:
    """Run all three channels and gather indirect vectors and matched audio."""
    result = RetrievalResult.empty()
    for channel in CHANNELS:
        ranking = retrieve_modality(lib, query, channel, k, metric, mode)
        result.rankings[channel] = ranking
        for record_id, _score in ranking:
            rec = lib.lookup(record_id)
            if channel == "text":
                vec = np.concatenate([rec.text_self.values, rec.text_react.values])
            elif channel == "scene":
                vec = rec.scene.values
            else:
                vec = rec.face.values
            result.indirect_vectors[channel].append(vec)
            result.matched_audio[channel].append(rec.audio.values)
    return result
