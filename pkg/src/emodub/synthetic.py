"""Seeded synthetic libraries with labeled emotion clusters.

Records are drawn from per-label isotropic Gaussian clusters (unit sigma)
whose centroids sit on orthogonal axes, scaled so every pair of centroids
is exactly ``separation`` sigmas apart. The label is stored on each record,
which lets the harness score retrieval quality as *purity*: the fraction
of retrieved records sharing the query's label. Purity is a synthetic
surrogate signal, not a reproduction of any speech-model metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .library import (
    EmotionVector,
    FootageLibrary,
    FootageRecord,
    Modality,
    MODALITY_ORDER,
    Schema,
    uniform_schema,
)
from .retrieval import CHANNELS, Metric, Mode, Query, retrieve_all
from .rng import stream


@dataclass
class ClusterSpec:
    """Configuration of one synthetic library."""

    n: int = 200
    clusters: int = 4
    separation: float = 8.0
    dim: int = 8
    seed: int = 0
    speakers: int = 4
    speaker_per_cluster: bool = False
    movies: int = 4

    def schema(self) -> Schema:
        return uniform_schema(self.dim)


def generate_clustered_library(spec: ClusterSpec) -> FootageLibrary:
    """Build a labeled clustered library, deterministic in the seed.

    Cluster ``c`` lives at ``(separation / sqrt(2)) * e_c`` in every
    modality (``e_c`` the c-th standard basis vector), so pairwise centroid
    distances equal ``separation`` exactly; per-record noise is a standard
    Gaussian from the documented stream. Labels are assigned round-robin.
    Requires ``clusters <= dim`` to keep the placement exact.
    """
    if spec.n < 1:
        raise ArgumentError(f"library size must be >= 1, got {spec.n}")
    if spec.clusters < 1:
        raise ArgumentError(f"cluster count must be >= 1, got {spec.clusters}")
    if spec.clusters > spec.dim:
        raise ArgumentError(
            f"cluster count {spec.clusters} exceeds dimension {spec.dim}; "
            "orthogonal centroid placement needs clusters <= dim"
        )
    if spec.separation < 0.0:
        raise ArgumentError(f"separation must be >= 0, got {spec.separation}")
    if spec.speakers < 1:
        raise ArgumentError(f"speaker count must be >= 1, got {spec.speakers}")
    radius = spec.separation / np.sqrt(2.0)
    rng = stream(spec.seed, "clustered-library")
    lib = FootageLibrary(spec.schema())
    for i in range(spec.n):
        label = i % spec.clusters
        centroid = np.zeros(spec.dim)
        centroid[label] = radius
        vectors = {}
        for m in MODALITY_ORDER:
            noise = np.array([rng.next_gaussian() for _ in range(spec.dim)])
            vectors[m] = EmotionVector(m, centroid + noise)
        speaker = f"speaker_{label if spec.speaker_per_cluster else i % spec.speakers}"
        lib.add(
            FootageRecord(
                record_id=i,
                movie_id=f"movie_{i % spec.movies}",
                speaker_id=speaker,
                emotion_label=f"cluster_{label}",
                scene=vectors[Modality.SCENE],
                face=vectors[Modality.FACE],
                text_self=vectors[Modality.TEXT_SELF],
                text_react=vectors[Modality.TEXT_REACT],
                audio=vectors[Modality.AUDIO],
            )
        )
    return lib


@dataclass
class PurityResult:
    purity: float
    mean_score: float
    retrieved: int
    queries: int


def evaluate_purity(
    lib: FootageLibrary,
    k: int,
    metric: Metric = Metric.COSINE,
    mode: Mode = Mode.SPEAKER_AGNOSTIC,
) -> PurityResult:
    """Label purity of top-K retrieval with every record as its own query.

    Each query excludes its own record. Purity pools hits across the three
    channels: (hits sharing the query's label) / (total retrieved). Queries
    whose candidate pool is empty contribute nothing to either count.
    """
    hits = 0
    total = 0
    score_sum = 0.0
    for rec in lib.records:
        query = Query.from_record(rec)
        result = retrieve_all(lib, query, k, metric, mode)
        for channel in CHANNELS:
            for record_id, score in result.rankings[channel]:
                total += 1
                score_sum += score
                if lib.lookup(record_id).emotion_label == rec.emotion_label:
                    hits += 1
    purity = hits / total if total else 0.0
    mean_score = score_sum / total if total else 0.0
    return PurityResult(purity=purity, mean_score=mean_score, retrieved=total, queries=len(lib.records))
