"""Shared fixtures: a small synthetic world and corpus helpers."""

from __future__ import annotations

import numpy as np
import pytest

from asrtriage.oracle import OracleConfig, ToyTransducer, build_world
from asrtriage.rng import seeded_rng
from asrtriage.types import EVENT_INDEX, FrameEventTrack, UtteranceRef


@pytest.fixture(scope="session")
def small_world():
    cfg = OracleConfig(vocab_size=96, d_model=32)
    codebook, lexicon = build_world(cfg, n_words=140, hard_fraction=0.25, lexicon_seed=11)
    return cfg, codebook, lexicon, ToyTransducer(cfg, codebook, lexicon)


def sample_words(lexicon, rng, n_words, n_hard=0):
    hard = sorted(lexicon.hard_words)
    normal = sorted(set(lexicon.words) - lexicon.hard_words)
    words = [str(w) for w in rng.choice(normal, size=n_words - n_hard, replace=False)]
    words += [str(w) for w in rng.choice(hard, size=n_hard, replace=False)]
    rng.shuffle(words)
    return words


def make_utterance(lexicon, uid, rng, n_words=8, n_hard=0) -> UtteranceRef:
    words = sample_words(lexicon, rng, n_words, n_hard)
    return UtteranceRef(id=uid, words=words, hard_flags=[w in lexicon.hard_words for w in words])


def noisy_track(n_frames: int, missing_span: tuple[int, int] | None = None) -> FrameEventTrack:
    classes = np.full(n_frames, EVENT_INDEX["Noise"], dtype=np.int64)
    if missing_span is not None:
        classes[missing_span[0] : missing_span[1]] = EVENT_INDEX["Missing"]
    return FrameEventTrack(classes)


def make_corpus(transducer, lexicon, n, seed, track_fn=None, n_hard=0, n_words=8):
    """List of (utt, track, decode, labels, clean_decode) tuples."""
    rng = seeded_rng(seed, "fixture-corpus")
    out = []
    for i in range(n):
        utt = make_utterance(lexicon, f"fx{seed}_{i}", rng, n_words=n_words, n_hard=n_hard)
        n_frames = len(transducer.clean_track(utt, seed))
        track = track_fn(n_frames, rng) if track_fn else FrameEventTrack.all_clean(n_frames)
        decode, labels = transducer.decode(utt, track, seed)
        clean = transducer.clean_reference_decode(utt, seed)
        out.append((utt, track, decode, labels, clean))
    return out
