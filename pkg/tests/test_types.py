import numpy as np
import pytest

from asrtriage.types import (
    AudioClip,
    DecodeResult,
    FrameEventTrack,
    LabelSet,
    TokenRecord,
    UtteranceRef,
    ValidationError,
    WordSpan,
    n_frames_for_duration,
    word_labels_from_tokens,
)


def one_hot(v, i):
    p = np.zeros(v, dtype=np.float32)
    p[i] = 1.0
    return p


def make_decode(n_tokens=2, vocab=16, d=8, n_frames=10):
    tokens = [
        TokenRecord(
            token_id=i,
            piece=("▁t%d" % i),
            emit_frame=2 * i,
            duration=2,
            probs=one_hot(vocab, i),
            joint_embedding=np.zeros(d, dtype=np.float32),
        )
        for i in range(n_tokens)
    ]
    words = [WordSpan(f"t{i}", i, i + 1) for i in range(n_tokens)]
    return DecodeResult(
        utterance_id="u1",
        frame_embeddings=np.zeros((n_frames, d), dtype=np.float32),
        tokens=tokens,
        hypothesis_words=words,
        vocab_size=vocab,
    )


def test_frame_grid_is_ceil_of_80ms():
    assert n_frames_for_duration(0.080) == 1
    assert n_frames_for_duration(0.081) == 2
    assert n_frames_for_duration(5.0) == 63


def test_audio_clip_invariants():
    with pytest.raises(ValidationError):
        AudioClip(np.array([], dtype=np.float32))
    with pytest.raises(ValidationError):
        AudioClip(np.array([0.0, np.nan], dtype=np.float32))
    with pytest.raises(ValidationError):
        AudioClip(np.zeros(4, dtype=np.float32), sample_rate=0)


def test_utterance_ref_invariants():
    with pytest.raises(ValidationError, match="empty reference"):
        UtteranceRef(id="u", words=[], hard_flags=[])
    with pytest.raises(ValidationError):
        UtteranceRef(id="u", words=["a"], hard_flags=[])
    with pytest.raises(ValidationError):
        UtteranceRef(id="", words=["a"], hard_flags=[False])


def test_duration_outside_choices_rejected():
    decode = make_decode()
    decode.tokens[0].duration = 7
    with pytest.raises(ValidationError, match="duration outside"):
        decode.validate()


def test_probs_not_normalized_rejected():
    decode = make_decode()
    decode.tokens[0].probs = decode.tokens[0].probs * 0.9
    with pytest.raises(ValidationError, match="probs not normalized"):
        decode.validate()


def test_emit_frames_must_strictly_increase():
    decode = make_decode()
    decode.tokens[1].emit_frame = decode.tokens[0].emit_frame
    with pytest.raises(ValidationError, match="strictly increase"):
        decode.validate()


def test_label_set_consistency():
    decode = make_decode()
    labels = LabelSet(
        token_labels=[0, 1],
        deletion_frame_flags=np.zeros(decode.n_frames, dtype=bool),
        word_labels=[0, 1],
    )
    labels.validate(decode)
    bad = LabelSet(
        token_labels=[0, 1],
        deletion_frame_flags=np.zeros(decode.n_frames, dtype=bool),
        word_labels=[0, 0],
    )
    with pytest.raises(ValidationError, match="any-token"):
        bad.validate(decode)


def test_deletion_flags_cannot_sit_on_emissions():
    decode = make_decode()
    flags = np.zeros(decode.n_frames, dtype=bool)
    flags[decode.tokens[0].emit_frame] = True
    labels = LabelSet(token_labels=[0, 0], deletion_frame_flags=flags, word_labels=[0, 0])
    with pytest.raises(ValidationError, match="emission"):
        labels.validate(decode)


def test_word_labels_any_token_rule():
    spans = [WordSpan("a", 0, 2), WordSpan("b", 2, 3)]
    assert word_labels_from_tokens([0, 0, 0], spans) == [0, 0]
    assert word_labels_from_tokens([0, 1, 0], spans) == [1, 0]
    assert word_labels_from_tokens([0, 0, 2], spans) == [0, 1]


def test_event_track_bounds():
    with pytest.raises(ValidationError):
        FrameEventTrack(np.array([0, 6]))
    track = FrameEventTrack.all_clean(5)
    assert len(track) == 5
