"""Shared fixtures and builders for the test suite."""

import numpy as np
import pytest

from emodub.library import (
    EmotionVector,
    FootageLibrary,
    FootageRecord,
    Modality,
    MODALITY_ORDER,
)


def make_record(record_id, vectors, speaker_id="spk0", movie_id="m0", label=None):
    """Build a record from a {modality: array} mapping."""
    return FootageRecord(
        record_id=record_id,
        movie_id=movie_id,
        speaker_id=speaker_id,
        emotion_label=label,
        scene=EmotionVector(Modality.SCENE, vectors[Modality.SCENE]),
        face=EmotionVector(Modality.FACE, vectors[Modality.FACE]),
        text_self=EmotionVector(Modality.TEXT_SELF, vectors[Modality.TEXT_SELF]),
        text_react=EmotionVector(Modality.TEXT_REACT, vectors[Modality.TEXT_REACT]),
        audio=EmotionVector(Modality.AUDIO, vectors[Modality.AUDIO]),
    )


def random_library(rng: np.random.Generator, n: int, dims=None, speakers=3) -> FootageLibrary:
    """Library of n records with standard-normal vectors (test-side randomness)."""
    if dims is None:
        dims = {m: 8 for m in MODALITY_ORDER}
    elif isinstance(dims, int):
        dims = {m: dims for m in MODALITY_ORDER}
    lib = FootageLibrary(dict(dims))
    for i in range(n):
        vectors = {m: rng.normal(size=dims[m]) for m in MODALITY_ORDER}
        lib.add(
            make_record(
                i,
                vectors,
                speaker_id=f"spk{rng.integers(speakers)}",
                movie_id=f"mov{i % 4}",
                label=f"lab{i % 3}",
            )
        )
    return lib


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
