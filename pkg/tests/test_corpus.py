import numpy as np
import pytest

from asrtriage.corpus import (
    CorpusParams,
    assign_splits,
    build_corpus,
    sample_utterance,
    synthesize_waveform,
)
from asrtriage.distort import AssetBank
from asrtriage.oracle import synthesize_timeline
from asrtriage.types import FRAME_SECONDS, ValidationError


def test_condition_subsets_take_one_sixth(small_world):
    _, _, lexicon, _ = small_world
    params = CorpusParams(n_utterances=600, words_min=6, words_max=8)
    bank = AssetBank(seed=1)
    items = build_corpus(
        lexicon,
        params,
        ["Noise", "Missing"],
        seed=2,
        bank=bank,
        timeline_of=lambda utt: synthesize_timeline(utt, lexicon, 2),
    )
    by_cond = {}
    for item in items:
        by_cond.setdefault(item.condition, []).append(item)
    assert len(by_cond["Clean"]) == 600
    assert len(by_cond["Noise"]) == 100
    assert len(by_cond["Missing"]) == 100
    # overlap across conditions is allowed and expected
    noise_ids = {i.utterance.id for i in by_cond["Noise"]}
    missing_ids = {i.utterance.id for i in by_cond["Missing"]}
    assert noise_ids != missing_ids


def test_corpus_is_deterministic(small_world):
    _, _, lexicon, _ = small_world
    params = CorpusParams(n_utterances=30)
    bank = AssetBank(seed=1)

    def build():
        return build_corpus(
            lexicon, params, ["Noise"], 5, bank,
            timeline_of=lambda utt: synthesize_timeline(utt, lexicon, 5),
        )

    a, b = build(), build()
    assert [i.instance_id for i in a] == [i.instance_id for i in b]
    assert all(
        (x.spec is None and y.spec is None) or x.spec.to_json() == y.spec.to_json()
        for x, y in zip(a, b)
    )


def test_utterances_have_distinct_words(small_world):
    _, _, lexicon, _ = small_world
    params = CorpusParams(n_utterances=10)
    for i in range(20):
        utt = sample_utterance(lexicon, f"u{i}", params, seed=3)
        assert len(set(utt.words)) == len(utt.words)
        assert all((w in lexicon.hard_words) == f for w, f in zip(utt.words, utt.hard_flags))


def test_split_assignment_quota_and_determinism():
    params = CorpusParams(n_utterances=100)
    ids = [f"u{i}" for i in range(100)]
    a = assign_splits(ids, params, seed=4)
    b = assign_splits(ids, params, seed=4)
    assert a == b
    counts = {s: sum(1 for v in a.values() if v == s) for s in ("train", "valid", "test")}
    assert counts["train"] == 70 and counts["valid"] == 15 and counts["test"] == 15


def test_waveform_matches_frame_grid(small_world):
    _, _, lexicon, _ = small_world
    params = CorpusParams(n_utterances=1)
    utt = sample_utterance(lexicon, "w0", params, seed=6)
    timeline = synthesize_timeline(utt, lexicon, 6)
    clip = synthesize_waveform(timeline, seed=6, sample_rate=16000)
    assert clip.samples.size == timeline.n_frames * int(FRAME_SECONDS * 16000)
    assert np.max(np.abs(clip.samples)) <= 0.6 + 1e-6
    # gap frames are silent
    frame_len = int(FRAME_SECONDS * 16000)
    for gap in timeline.gap_frames:
        assert np.all(clip.samples[gap * frame_len : (gap + 1) * frame_len] == 0.0)


def test_corpus_params_validation():
    with pytest.raises(ValidationError):
        CorpusParams(n_utterances=0)
    with pytest.raises(ValidationError):
        CorpusParams(words_min=5, words_max=3)
    with pytest.raises(ValidationError):
        CorpusParams(splits={"train": 0.5, "valid": 0.2, "test": 0.2})
