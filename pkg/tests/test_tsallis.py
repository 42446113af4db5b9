import numpy as np
import pytest

from asrtriage.rng import seeded_rng
from asrtriage.tsallis import (
    ConfidenceConfig,
    calibrate_threshold,
    flag_words,
    tsallis_confidence,
    word_confidence,
)
from asrtriage.types import ValidationError

# High-precision oracle value for p = [0.7, 0.1, 0.1, 0.1], alpha = 0.33,
# computed with mpmath at 60 digits before implementation.
ORACLE_0_7_CASE = 0.048604743105036634


def one_hot(v, i=0):
    p = np.zeros(v)
    p[i] = 1.0
    return p


def test_one_hot_is_full_confidence():
    for v in (4, 1024):
        assert tsallis_confidence(one_hot(v), 0.33) == pytest.approx(1.0, abs=1e-9)


def test_uniform_is_zero_confidence():
    for v in (4, 1024):
        assert tsallis_confidence(np.full(v, 1.0 / v), 0.33) == pytest.approx(0.0, abs=1e-9)


def test_skewed_case_matches_high_precision_oracle():
    got = tsallis_confidence(np.array([0.7, 0.1, 0.1, 0.1]), alpha=0.33)
    assert got == pytest.approx(ORACLE_0_7_CASE, abs=1e-3)
    assert got == pytest.approx(ORACLE_0_7_CASE, rel=1e-9)  # implementation is exact, not just close


def test_confidence_is_permutation_invariant():
    rng = seeded_rng(1, "perm")
    p = rng.dirichlet(np.ones(16))
    base = tsallis_confidence(p, 0.4)
    for _ in range(5):
        assert tsallis_confidence(rng.permutation(p), 0.4) == pytest.approx(base, rel=1e-12)


def test_confidence_bounded_for_random_distributions():
    rng = seeded_rng(2, "bounds")
    for _ in range(200):
        v = int(rng.integers(2, 64))
        alpha = float(rng.uniform(0.05, 0.95))
        p = rng.dirichlet(np.ones(v) * rng.uniform(0.2, 3.0))
        c = tsallis_confidence(p, alpha)
        assert 0.0 <= c <= 1.0


def test_alpha_and_probs_validation():
    with pytest.raises(ValidationError):
        tsallis_confidence(one_hot(4), alpha=1.0)
    with pytest.raises(ValidationError):
        tsallis_confidence(np.array([0.5, 0.4]), alpha=0.33)
    with pytest.raises(ValidationError):
        ConfidenceConfig(alpha=0.0)
    with pytest.raises(ValidationError):
        ConfidenceConfig(alpha=0.33, beta=1.5)


def test_word_confidence_is_arithmetic_mean():
    assert word_confidence([0.8]) == pytest.approx(0.8)
    assert word_confidence([1.0, 0.0]) == pytest.approx(0.5)
    assert word_confidence([0.37] * 7) == pytest.approx(0.37)
    with pytest.raises(ValidationError):
        word_confidence([])


def sweep_best(conf, gold, beta):
    """Exhaustive threshold sweep oracle over a dense candidate grid."""
    taus = np.unique(np.concatenate([[0.0, 1.0 + 1e-9], conf, (conf[:-1] + conf[1:]) / 2]))
    n_err = gold.sum()
    n_ok = (~gold).sum()
    best = None
    for tau in taus:
        flags = conf < tau
        fpr = (flags & ~gold).sum() / n_ok
        recall = (flags & gold).sum() / n_err
        if fpr <= beta and (best is None or recall > best[0] + 1e-12):
            best = (recall, fpr, tau)
    return best


def test_calibration_worked_example():
    conf = np.array([0.9, 0.4, 0.2, 0.35])
    gold = np.array([False, False, True, True])
    th = calibrate_threshold(conf, gold, beta=0.0)
    assert th.tau == pytest.approx(0.375)
    assert th.achieved_recall == pytest.approx(1.0)
    assert th.achieved_fpr == pytest.approx(0.0)


def test_calibration_with_inactive_cap():
    conf = np.array([0.9, 0.4, 0.2, 0.35])
    gold = np.array([False, False, True, True])
    th = calibrate_threshold(conf, gold, beta=1.0)
    assert th.tau > 1.0
    assert th.achieved_recall == pytest.approx(1.0)
    assert th.achieved_fpr == pytest.approx(1.0)


def test_calibration_interleaved_classes():
    # errors outscoring some corrects force recall < 1 at beta = 0
    conf = np.array([0.1, 0.3, 0.5, 0.2, 0.4, 0.6])
    gold = np.array([True, True, True, False, False, False])
    th = calibrate_threshold(conf, gold, beta=0.0)
    assert th.achieved_fpr == 0.0
    assert th.achieved_recall < 1.0
    best = sweep_best(conf, gold, beta=0.0)
    assert th.achieved_recall == pytest.approx(best[0], abs=1e-12)


def test_calibration_matches_sweep_oracle_on_random_sets():
    rng = seeded_rng(3, "calib")
    for trial in range(50):
        n = int(rng.integers(8, 60))
        conf = np.round(rng.uniform(size=n), 3)
        gold = rng.uniform(size=n) < 0.4
        if gold.all() or not gold.any():
            continue
        for beta in (0.0, 0.05, 0.2, 0.5):
            th = calibrate_threshold(conf, gold, beta)
            best = sweep_best(conf, gold, beta)
            assert th.achieved_fpr <= beta + 1e-12
            assert th.achieved_recall == pytest.approx(best[0], abs=1e-12)


def test_calibration_rejects_single_class():
    with pytest.raises(ValidationError):
        calibrate_threshold(np.array([0.1, 0.2]), np.array([True, True]), beta=0.1)


def test_flag_words_on_decodes(small_world):
    from conftest import make_corpus, noisy_track

    _, _, lexicon, transducer = small_world
    corpus = make_corpus(transducer, lexicon, 6, seed=21, track_fn=lambda n, rng: noisy_track(n))
    from asrtriage.tsallis import Threshold, decode_word_confidences

    for _, _, decode, labels, _ in corpus:
        confs = decode_word_confidences(decode, alpha=0.33)
        none_flags = flag_words(decode, Threshold(tau=0.0, achieved_fpr=0, achieved_recall=0))
        assert not none_flags.any()
        all_flags = flag_words(decode, Threshold(tau=1.1, achieved_fpr=1, achieved_recall=1))
        assert all_flags.all()
        mid = flag_words(decode, Threshold(tau=0.375, achieved_fpr=0, achieved_recall=0))
        assert np.array_equal(mid, confs < 0.375)
