import numpy as np
import pytest

from asrtriage.detectors import DeletionEvents, Detections, OracleDetectorBank, events_from_flags
from asrtriage.fuse import (
    CAUSE_COMP,
    CAUSE_NONE,
    CAUSE_PERC,
    EVENT_TAG,
    STRATEGIES,
    fuse,
    strategy_hint,
    strip_tags,
    tag_transcript,
)
from asrtriage.types import EVENT_CLASSES, EVENT_INDEX, ValidationError

from conftest import make_corpus, noisy_track


def detections_for(decode, comp=None, perc=None, del_spans=(), events=None):
    n = len(decode.tokens)
    return Detections(
        comp_flags=np.asarray(comp if comp is not None else [False] * n),
        perc_flags=np.asarray(perc if perc is not None else [False] * n),
        deletion_events=DeletionEvents(list(del_spans)),
        event_classes=np.asarray(events if events is not None else [0] * n),
    )


def test_priority_comprehension_over_perception(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=71)[0]
    n = len(decode.tokens)
    det = detections_for(decode, comp=[True] + [False] * (n - 1), perc=[True] + [False] * (n - 1))
    profile = fuse(decode, det)
    assert profile.token_causes[0] == CAUSE_COMP
    det = detections_for(decode, perc=[True] + [False] * (n - 1))
    assert fuse(decode, det).token_causes[0] == CAUSE_PERC


def test_fusion_is_idempotent_and_total(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=72)[0]
    n = len(decode.tokens)
    rngish = [i % 3 == 0 for i in range(n)]
    det = detections_for(decode, comp=rngish, perc=[True] * n)
    p1 = fuse(decode, det)
    p2 = fuse(decode, det)
    assert p1.token_causes == p2.token_causes
    assert all(c in (CAUSE_NONE, CAUSE_COMP, CAUSE_PERC) for c in p1.token_causes)
    assert len(p1.token_causes) == n


def test_deletion_event_suppressed_by_flagged_token(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=73)[0]
    n = len(decode.tokens)
    tok = decode.tokens[0]
    overlap = (tok.emit_frame, tok.emit_frame + max(tok.duration, 1))
    det = detections_for(decode, comp=[True] + [False] * (n - 1), del_spans=[overlap])
    profile = fuse(decode, det)
    assert profile.deletion_events.spans == []

    # an event over never-emitted frames survives
    free = decode.n_frames - 1
    emitted = decode.emission_frames()
    if not emitted[free]:
        det = detections_for(decode, del_spans=[(free, free + 1)])
        assert fuse(decode, det).deletion_events.spans == [(free, free + 1)]


def test_index_mismatch_rejected(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=74)[0]
    det = detections_for(decode)
    det.comp_flags = det.comp_flags[:-1]
    with pytest.raises(ValidationError, match="length"):
        fuse(decode, det)


def test_strategy_mapping_examples_and_totality():
    assert strategy_hint(CAUSE_COMP, "Noise") == "SpellOrParaphrase"
    assert strategy_hint(CAUSE_PERC, "Noise") == "QuieterRoom"
    assert strategy_hint(CAUSE_PERC, "RIR") == "QuieterRoom"
    assert strategy_hint(CAUSE_PERC, "Interference") == "WaitForOtherSpeaker"
    assert strategy_hint(CAUSE_PERC, "PacketLoss") == "CheckConnection"
    assert strategy_hint(CAUSE_PERC, "Clean") == "Repeat"
    assert strategy_hint(CAUSE_PERC, "Missing") == "Repeat"
    assert strategy_hint("Deletion", "Missing") == "AskMissingContent"
    for cause in (CAUSE_COMP, CAUSE_PERC, "Deletion"):
        for event in EVENT_CLASSES:
            assert strategy_hint(cause, event) in STRATEGIES


def test_tagging_uses_majority_event_class(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=75)[0]
    n = len(decode.tokens)
    span = decode.hypothesis_words[0]
    perc = [span.token_start <= i < span.token_end for i in range(n)]
    events = [EVENT_INDEX["Noise"]] * n
    tagged = tag_transcript(decode, fuse(decode, detections_for(decode, perc=perc, events=events)))
    assert "<noise>" in tagged.text and "</noise>" in tagged.text

    events = [EVENT_INDEX["Clean"]] * n
    tagged = tag_transcript(decode, fuse(decode, detections_for(decode, perc=perc, events=events)))
    assert "<unknown>" in tagged.text  # clean majority falls back to generic


def test_comprehension_cause_tags_unknown(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=76)[0]
    n = len(decode.tokens)
    span = decode.hypothesis_words[-1]
    comp = [span.token_start <= i < span.token_end for i in range(n)]
    events = [EVENT_INDEX["Noise"]] * n  # even under noise, comprehension tags unknown
    tagged = tag_transcript(decode, fuse(decode, detections_for(decode, comp=comp, events=events)))
    assert "<unknown>" in tagged.text


def test_no_errors_yields_tag_free_transcript(small_world):
    _, _, lexicon, transducer = small_world
    (_, _, decode, _, _) = make_corpus(transducer, lexicon, 1, seed=77)[0]
    tagged = tag_transcript(decode, fuse(decode, detections_for(decode)))
    assert tagged.text == decode.hypothesis_text
    assert tagged.spans == []


def test_detagging_recovers_hypothesis_exactly(small_world):
    _, _, lexicon, transducer = small_world
    corpus = make_corpus(
        transducer, lexicon, 25, seed=78, n_hard=2,
        track_fn=lambda n, rng: noisy_track(n, (n // 4, n // 2)),
    )
    labels_by_id = {u.id: l for u, _, _, l, _ in corpus}
    tracks_by_id = {u.id: t for u, t, _, _, _ in corpus}
    bank = OracleDetectorBank(labels_by_id, tracks_by_id)
    tag_seen = del_seen = False
    for _, _, decode, _, _ in corpus:
        profile = fuse(decode, bank.detect(decode))
        tagged = tag_transcript(decode, profile)
        assert strip_tags(tagged.text) == decode.hypothesis_text
        tag_seen |= "</" in tagged.text
        del_seen |= "<del/>" in tagged.text
    assert tag_seen and del_seen


def test_del_marker_lands_at_nearest_boundary(small_world):
    _, _, lexicon, transducer = small_world
    corpus = make_corpus(
        transducer, lexicon, 30, seed=79,
        track_fn=lambda n, rng: noisy_track(n, (n // 3, 2 * n // 3)),
    )
    for _, track, decode, labels, clean in corpus:
        if not labels.deletion_frame_flags.any() or not decode.tokens:
            continue
        det = Detections(
            comp_flags=np.zeros(len(decode.tokens), dtype=bool),
            perc_flags=np.zeros(len(decode.tokens), dtype=bool),
            deletion_events=events_from_flags(labels.deletion_frame_flags),
            event_classes=np.zeros(len(decode.tokens), dtype=np.int64),
        )
        tagged = tag_transcript(decode, fuse(decode, det))
        assert tagged.text.count("<del/>") == len(det.deletion_events.spans)
