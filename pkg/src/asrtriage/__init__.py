"""Cause-aware ASR error detection and clarification, desk scale.

The package synthesizes distorted speech-like corpora, decodes them with
a deterministic token-and-duration oracle, trains small CNN detectors
that separate comprehension, perception, and deletion failures, fuses
the diagnoses into cause-tagged transcripts, and drives a K-round
clarification loop with a quarantined dialogue manager.
"""

from .aligner import align_words, label_comprehension, label_perception_deletion
from .bundleio import read_bundle, read_manifest, validate_manifest, write_bundle, write_manifest
from .clarify import ClarifySession, ScriptedUser, TemplatedManager, merge_corrections, run_session
from .cnn import CnnConfig, DetectorModel, TrainConfig, train
from .detectors import (
    OracleDetectorBank,
    TrainedDetectorBank,
    predict_deletions,
    predict_events,
    predict_token_errors,
)
from .distort import AssetBank, DistortionSpec, apply_rir, apply_spec, mask_missing, mix_at_snr, simulate_packet_loss
from .fuse import ErrorProfile, fuse, strategy_hint, strip_tags, tag_transcript
from .metrics import DetectionReport, detection_report, maj_score, round_stats, wer, werr
from .oracle import Codebook, Lexicon, OracleConfig, ToyTransducer, build_world, synthesize_timeline
from .tsallis import ConfidenceConfig, Threshold, calibrate_threshold, tsallis_confidence, word_confidence
from .types import (
    AudioClip,
    CorpusManifest,
    DecodeResult,
    FrameEventTrack,
    LabelSet,
    TokenRecord,
    UtteranceRef,
    ValidationError,
)

__version__ = "0.1.0"
