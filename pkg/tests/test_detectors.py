import numpy as np
import pytest

from asrtriage.cnn import CnnConfig, DetectorModel, init_params
from asrtriage.detectors import (
    DeletionEvents,
    OracleDetectorBank,
    events_from_flags,
    predict_deletions,
    predict_events,
    predict_token_errors,
    token_event_labels,
    token_joint_matrix,
    token_pooled_frames,
)
from asrtriage.types import EVENT_INDEX, LABEL_COMP, LABEL_PERC, ValidationError

from conftest import make_corpus, noisy_track


def test_run_length_aggregation():
    flags = np.array([0, 1, 1, 0, 0, 1, 1, 1, 0], dtype=bool)
    events = events_from_flags(flags)
    assert events.spans == [(1, 3), (5, 8)]
    assert len(events) == 2
    assert events_from_flags(np.zeros(5, dtype=bool)).spans == []
    assert events_from_flags(np.array([1, 1], dtype=bool)).spans == [(0, 2)]


def test_deletion_events_invariants():
    DeletionEvents([(0, 2), (3, 4)])
    with pytest.raises(ValidationError):
        DeletionEvents([(2, 2)])
    with pytest.raises(ValidationError):
        DeletionEvents([(0, 3), (2, 4)])


def zero_model(classes, in_dim):
    cfg = CnnConfig(layers=1, kernel=3, hidden=4, dropout=0.0, classes=classes, in_dim=in_dim)
    return DetectorModel(cfg, [np.zeros_like(p) for p in init_params(cfg, 0)], np.ones(classes))


def all_fire_model(in_dim):
    """Binary model whose head always prefers class 1."""
    cfg = CnnConfig(layers=1, kernel=3, hidden=4, dropout=0.0, classes=2, in_dim=in_dim)
    params = [np.zeros_like(p) for p in init_params(cfg, 0)]
    params[-1] = np.array([0.0, 1.0])  # head bias
    return DetectorModel(cfg, params, np.ones(2))


def test_zero_model_never_flags(small_world):
    _, _, lexicon, transducer = small_world
    corpus = make_corpus(transducer, lexicon, 3, seed=61, track_fn=lambda n, rng: noisy_track(n))
    for _, _, decode, _, _ in corpus:
        model = zero_model(2, decode.d_model)
        assert not predict_token_errors(model, decode, "perception").any()
        assert predict_deletions(model, decode).spans == []


def test_emission_mask_forces_zero_events(small_world):
    """Even an always-firing classifier yields no event on emitted frames."""
    _, _, lexicon, transducer = small_world
    corpus = make_corpus(transducer, lexicon, 3, seed=62)
    for _, _, decode, _, _ in corpus:
        model = all_fire_model(decode.d_model)
        events = predict_deletions(model, decode)
        emitted = decode.emission_frames()
        for start, end in events.spans:
            assert not emitted[start:end].any()
        if emitted.all():
            assert events.spans == []


def test_token_error_kind_and_head_validation(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=63)[0]
    with pytest.raises(ValidationError, match="unknown detector"):
        predict_token_errors(zero_model(2, decode.d_model), decode, "nope")
    with pytest.raises(ValidationError, match="binary"):
        predict_token_errors(zero_model(6, decode.d_model), decode, "perception")
    with pytest.raises(ValidationError, match="6-class"):
        predict_events(zero_model(2, decode.d_model), decode)


def test_empty_token_list_yields_empty_flags(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=64)[0]
    decode.tokens = []
    decode.hypothesis_words = []
    model = zero_model(2, decode.d_model)
    assert predict_token_errors(model, decode, "comprehension").size == 0
    assert predict_events(zero_model(6, decode.d_model), decode).size == 0


def test_token_pooling_duration_zero_uses_single_frame(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=65)[0]
    decode.tokens[0].duration = 0
    pooled = token_pooled_frames(decode)
    frame = decode.frame_embeddings[decode.tokens[0].emit_frame].astype(np.float64)
    assert np.allclose(pooled[0], frame)


def test_token_event_labels_majority_and_tie(small_world):
    _, _, lexicon, transducer = small_world
    (_, track, decode, _, _) = make_corpus(
        transducer, lexicon, 1, seed=66, track_fn=lambda n, rng: noisy_track(n)
    )[0]
    labels = token_event_labels(decode, track)
    assert np.all(labels == EVENT_INDEX["Noise"])
    # engineered tie: half Clean, half Missing over one token's span resolves
    # to the more severe class
    tok = decode.tokens[0]
    if tok.duration >= 2:
        track.classes[:] = EVENT_INDEX["Clean"]
        half = tok.emit_frame + tok.duration // 2
        track.classes[tok.emit_frame : half] = EVENT_INDEX["Missing"]
        if (half - tok.emit_frame) * 2 == tok.duration:
            labels = token_event_labels(decode, track)
            assert labels[0] == EVENT_INDEX["Missing"]


def test_oracle_bank_reproduces_labels(small_world):
    _, _, lexicon, transducer = small_world
    corpus = make_corpus(
        transducer, lexicon, 10, seed=67, n_hard=2,
        track_fn=lambda n, rng: noisy_track(n, (n // 4, n // 2)),
    )
    labels_by_id = {u.id: l for u, _, _, l, _ in corpus}
    tracks_by_id = {u.id: t for u, t, _, _, _ in corpus}
    bank = OracleDetectorBank(labels_by_id, tracks_by_id)
    for utt, track, decode, labels, _ in corpus:
        det = bank.detect(decode)
        assert np.array_equal(det.comp_flags, np.asarray(labels.token_labels) == LABEL_COMP)
        assert np.array_equal(det.perc_flags, np.asarray(labels.token_labels) == LABEL_PERC)
        spans_flags = np.zeros(decode.n_frames, dtype=bool)
        for s, e in det.deletion_events.spans:
            spans_flags[s:e] = True
        assert np.array_equal(spans_flags, labels.deletion_frame_flags)


def test_joint_matrix_shape(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=68)[0]
    mat = token_joint_matrix(decode)
    assert mat.shape == (len(decode.tokens), decode.d_model)
    assert np.allclose(mat[0], decode.tokens[0].joint_embedding.astype(np.float64))
