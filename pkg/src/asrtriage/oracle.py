"""
Deterministic stand-in for the frozen ASR backbone.

Given a reference utterance and a per-frame event track, the oracle
produces a decode whose failure modes follow the causal story the
detectors are meant to learn:

* perception errors fire under distortion, with near-flat token
  distributions and attenuated content in the frame embeddings;
* comprehension errors fire on hard (domain-term-like) words even on
  clean audio, with distributions confidently peaked on the wrong token;
* deletions drop whole words, leaving frames without emissions.

All randomness is drawn from substreams keyed by (seed, utterance id,
purpose), so a clean decode and a distorted decode of the same utterance
share their timeline and their per-word outcome draws. A word corrupted
on clean audio is therefore corrupted identically under distortion,
which is exactly what differential labeling against the clean
pseudo-reference assumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import seeded_rng
from .types import (
    DecodeResult,
    EVENT_CLASSES,
    EVENT_INDEX,
    FrameEventTrack,
    LABEL_COMP,
    LABEL_CORRECT,
    LABEL_PERC,
    LabelSet,
    TokenRecord,
    UtteranceRef,
    ValidationError,
    WORD_BOUNDARY_MARK,
    WordSpan,
    word_labels_from_tokens,
)

# Severity ranking used when a word straddles several event classes.
_CLASS_SEVERITY = {"Missing": 5, "PacketLoss": 4, "Interference": 3, "Noise": 2, "RIR": 1, "Clean": 0}


@dataclass
class OracleConfig:
    """Knobs of the synthetic decoder.

    The per-class corruption probabilities are monotone with how much
    each condition hurts recognition; they are artifact constants, not
    measured quantities.
    """

    vocab_size: int = 1024
    d_model: int = 640
    codebook_seed: int = 7
    noise_std: float = 0.08  # sigma of the additive embedding noise
    distortion_gain: float = 1.0  # gamma: scale of event signatures in frame embeddings
    temp_correct: float = 0.04  # softmax temperature of confident (correct / comp) tokens
    temp_perc: float = 1.0  # softmax temperature of perception-corrupted tokens
    support_k: int = 8  # nonzero entries per token distribution
    p_perc: dict = field(
        default_factory=lambda: {
            "Clean": 0.01,
            "RIR": 0.10,
            "Noise": 0.25,
            "Interference": 0.30,
            "PacketLoss": 0.35,
            "Missing": 0.10,
        }
    )
    p_del: dict = field(
        default_factory=lambda: {
            "Clean": 0.0,
            "RIR": 0.01,
            "Noise": 0.02,
            "Interference": 0.02,
            "PacketLoss": 0.05,
            "Missing": 0.80,
        }
    )
    p_comp_hard: float = 0.6  # substitution probability for hard words, any audio
    p_ins_given_perc: float = 0.1  # insertion probability after a perception-corrupted word
    content_attenuation: float = 0.75  # how strongly severity eats the content component
    uncorrupted_severity_cap: float = 0.45  # severity ceiling for surviving words under distortion
    clean_severity: float = 0.08  # residual signature scale on clean frames
    deleted_retention: dict = field(
        default_factory=lambda: {
            "Clean": 0.4,
            "RIR": 0.4,
            "Noise": 0.4,
            "Interference": 0.4,
            "PacketLoss": 0.4,
            "Missing": 0.0,
        }
    )
    confusable_policy: str = "second_cosine"

    def __post_init__(self):
        if not (self.temp_perc > self.temp_correct > 0):
            raise ValidationError("need temp_perc > temp_correct > 0")
        if self.vocab_size < 16:
            raise ValidationError("vocab_size must be at least 16")
        for table in (self.p_perc, self.p_del):
            for name, p in table.items():
                if not (0.0 <= p <= 1.0):
                    raise ValidationError(f"probability {name}={p} outside [0, 1]")
        if not (0.0 <= self.p_comp_hard <= 1.0):
            raise ValidationError("p_comp_hard outside [0, 1]")


class Codebook:
    """Seed-deterministic embedding geometry of the synthetic backbone.

    Holds unit base vectors per vocabulary piece (hard pieces biased into
    a dedicated direction), one signature vector per event class, a
    silence vector, decoder-state vectors, and two well-conditioned
    mixing matrices for the joiner-input embedding.
    """

    def __init__(self, cfg: OracleConfig, hard_piece_ids: np.ndarray):
        v, d = cfg.vocab_size, cfg.d_model
        rng = seeded_rng(cfg.codebook_seed, "codebook", v, d)
        raw = rng.standard_normal((v, d))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        # probability geometry: unbiased, so confusable neighborhoods and
        # distribution shapes look the same for hard and normal pieces
        self.prob_vectors = raw
        hard_dir = rng.standard_normal(d)
        hard_dir /= np.linalg.norm(hard_dir)
        base = raw.copy()
        base[hard_piece_ids] += 1.6 * hard_dir
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        # embedding geometry: hard pieces lean into a dedicated direction,
        # which is what makes domain-term failures learnable
        self.base_vectors = base
        self.hard_direction = hard_dir

        sig = rng.standard_normal((d, len(EVENT_CLASSES)))
        q, _ = np.linalg.qr(sig)
        self.event_signatures = q.T.copy()  # (6, d), orthonormal rows

        silence = rng.standard_normal(d)
        self.silence_vector = silence / np.linalg.norm(silence)

        dec = rng.standard_normal((v + 1, d))  # last row = start-of-sequence state
        self.decoder_states = dec / np.linalg.norm(dec, axis=1, keepdims=True)

        self.w_enc = self._well_conditioned(rng, d)
        self.w_dec = self._well_conditioned(rng, d)

    @staticmethod
    def _well_conditioned(rng: np.random.Generator, d: int) -> np.ndarray:
        q1, _ = np.linalg.qr(rng.standard_normal((d, d)))
        q2, _ = np.linalg.qr(rng.standard_normal((d, d)))
        scales = rng.uniform(0.5, 2.0, size=d)
        return (q1 * scales) @ q2.T

    def neighbors(self, k: int, within: np.ndarray) -> dict[int, np.ndarray]:
        """Top-k most similar piece ids per piece (probability geometry),
        restricted to `within` ids."""
        sub = self.prob_vectors[within]
        sims = sub @ sub.T
        np.fill_diagonal(sims, -np.inf)
        order = np.argsort(-sims, axis=1)[:, : k - 1]
        return {int(pid): within[order[i]] for i, pid in enumerate(within)}


@dataclass
class Lexicon:
    """Synthetic subword lexicon over the oracle vocabulary.

    Piece ids < n_initial are word-initial and their piece strings carry
    the boundary mark; the rest are continuation pieces. Each word is a
    sequence of one to three pieces. Hard words start with a hard piece.
    """

    pieces: list[str]
    n_initial: int
    hard_piece_ids: np.ndarray
    words: list[str]
    word_pieces: dict[str, list[int]]
    hard_words: set[str]
    confusable: np.ndarray  # piece id -> confusable piece id (same boundary class)

    def tokenize(self, word: str) -> list[int]:
        if word not in self.word_pieces:
            raise ValidationError(f"word missing from lexicon: {word}")
        return self.word_pieces[word]

    def piece_string(self, piece_id: int) -> str:
        return self.pieces[piece_id]

    @staticmethod
    def word_string(piece_strings: list[str]) -> str:
        return "".join(p.lstrip(WORD_BOUNDARY_MARK) for p in piece_strings)


def build_world(
    cfg: OracleConfig,
    n_words: int = 240,
    hard_fraction: float = 0.25,
    lexicon_seed: int = 11,
) -> tuple[Codebook, Lexicon]:
    """Construct the codebook and a collision-free lexicon for one run."""
    v = cfg.vocab_size
    rng = seeded_rng(lexicon_seed, "lexicon", v, n_words)
    n_initial = max(8, int(0.6 * v))

    cores: list[str] = []
    seen = set()
    letters = "abcdefghijklmnopqrstuvwxyz"
    while len(cores) < v:
        core = "".join(rng.choice(list(letters), size=3))
        if core not in seen:
            seen.add(core)
            cores.append(core)
    pieces = [
        (WORD_BOUNDARY_MARK + core) if i < n_initial else core for i, core in enumerate(cores)
    ]

    n_hard_pieces = max(2, int(0.2 * n_initial))
    hard_piece_ids = rng.choice(n_initial, size=n_hard_pieces, replace=False)
    hard_set = set(int(i) for i in hard_piece_ids)

    codebook = Codebook(cfg, np.asarray(sorted(hard_set)))

    # Confusables stay within the same boundary class so a substituted
    # word keeps its word-boundary structure.
    confusable = np.zeros(v, dtype=np.int64)
    initial_ids = np.arange(n_initial)
    cont_ids = np.arange(n_initial, v)
    for ids in (initial_ids, cont_ids):
        if ids.size < 2:
            continue
        for pid, neigh in codebook.neighbors(2, ids).items():
            confusable[pid] = neigh[0]

    n_hard_words = int(round(hard_fraction * n_words))
    words: list[str] = []
    word_pieces: dict[str, list[int]] = {}
    hard_words: set[str] = set()
    taken: set[str] = set()  # word strings plus their first-piece-swap variants

    def try_add(first_pool: np.ndarray, hard: bool) -> bool:
        n_pieces = int(rng.integers(1, 4))
        first = int(rng.choice(first_pool))
        rest = [int(rng.choice(cont_ids)) for _ in range(n_pieces - 1)] if cont_ids.size else []
        ids = [first] + rest
        string = Lexicon.word_string([pieces[i] for i in ids])
        variant = Lexicon.word_string([pieces[confusable[first]]] + [pieces[i] for i in rest])
        if string in taken or variant in taken or string == variant:
            return False
        words.append(string)
        word_pieces[string] = ids
        taken.add(string)
        taken.add(variant)
        if hard:
            hard_words.add(string)
        return True

    hard_pool = np.asarray(sorted(hard_set))
    normal_pool = np.asarray([i for i in range(n_initial) if i not in hard_set])
    budget = 200 * n_words
    while len(words) < n_words and budget > 0:
        budget -= 1
        want_hard = len(hard_words) < n_hard_words
        try_add(hard_pool if want_hard else normal_pool, want_hard)
    if len(words) < n_words:
        raise ValidationError("lexicon construction did not converge; increase vocab_size")

    lexicon = Lexicon(
        pieces=pieces,
        n_initial=n_initial,
        hard_piece_ids=np.asarray(sorted(hard_set)),
        words=words,
        word_pieces=word_pieces,
        hard_words=hard_words,
        confusable=confusable,
    )
    return codebook, lexicon


@dataclass
class TimelineToken:
    piece_id: int
    word_index: int
    start_frame: int
    duration: int


@dataclass
class Timeline:
    tokens: list[TimelineToken]
    n_frames: int
    gap_frames: list[int]  # one silence frame between consecutive words

    def word_token_indices(self, n_words: int) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(n_words)]
        for i, tok in enumerate(self.tokens):
            out[tok.word_index].append(i)
        return out


def synthesize_timeline(utt: UtteranceRef, lexicon: Lexicon, seed: int) -> Timeline:
    """Lay the utterance's tokens on the frame grid.

    Every token occupies one to four frames; consecutive words are
    separated by exactly one silence frame.
    """
    rng = seeded_rng(seed, utt.id, "timeline")
    tokens: list[TimelineToken] = []
    gaps: list[int] = []
    frame = 0
    for wi, word in enumerate(utt.words):
        if wi > 0:
            gaps.append(frame)
            frame += 1
        for pid in lexicon.tokenize(word):
            dur = int(rng.integers(1, 5))
            tokens.append(TimelineToken(pid, wi, frame, dur))
            frame += dur
    return Timeline(tokens=tokens, n_frames=frame, gap_frames=gaps)


@dataclass
class _WordOutcome:
    deleted: bool = False
    label: int = LABEL_CORRECT
    emitted_pieces: list[int] = field(default_factory=list)
    insertion_piece: int | None = None
    severity: float = 0.0  # drives content attenuation and signature strength
    dominant_class: int = 0


def _dominant_class(track: FrameEventTrack, frames: list[int]) -> int:
    counts = np.bincount(track.classes[frames], minlength=len(EVENT_CLASSES))
    best = np.flatnonzero(counts == counts.max())
    if best.size == 1:
        return int(best[0])
    return int(max(best, key=lambda c: _CLASS_SEVERITY[EVENT_CLASSES[c]]))


def _word_outcome(
    utt: UtteranceRef,
    word_index: int,
    pieces: list[int],
    dom: int,
    cfg: OracleConfig,
    lexicon: Lexicon,
    seed: int,
) -> _WordOutcome:
    """Resolve one word's fate from its private draw stream.

    The stream depends only on (seed, utterance, word), never on the
    event track, so clean and distorted decodes stay coupled; the track
    enters through the probability tables only.
    """
    rng = seeded_rng(seed, utt.id, "word", word_index)
    u_del, u_comp, u_perc, u_ins, u_sev = rng.uniform(size=5)
    swap_draw = rng.uniform(size=3)

    cls = EVENT_CLASSES[dom]
    out = _WordOutcome(dominant_class=dom)
    p_del = cfg.p_del[cls]
    p_perc = cfg.p_perc[cls]
    p_clean = cfg.p_perc["Clean"]
    hard = bool(utt.hard_flags[word_index])

    if u_del < p_del:
        out.deleted = True
        out.severity = 1.0 - u_del / p_del
        return out

    intrinsic = (hard and u_comp < cfg.p_comp_hard) or (u_perc < p_clean)
    if intrinsic:
        out.label = LABEL_COMP
        out.emitted_pieces = [int(lexicon.confusable[pieces[0]])] + list(pieces[1:])
        kappa = cfg.uncorrupted_severity_cap if cls != "Clean" else cfg.clean_severity
        out.severity = kappa * u_sev
        return out

    if u_perc < p_perc:
        out.label = LABEL_PERC
        sev = 1.0 - u_perc / p_perc
        out.severity = 0.35 + 0.65 * sev
        swap = [swap_draw[i % 3] < 0.5 for i in range(len(pieces))]
        if not any(swap):
            swap[int(np.argmin(swap_draw[: len(pieces)]))] = True
        out.emitted_pieces = [
            int(lexicon.confusable[p]) if s else p for p, s in zip(pieces, swap)
        ]
        if u_ins < cfg.p_ins_given_perc:
            out.insertion_piece = int(lexicon.confusable[pieces[0]])
        return out

    out.emitted_pieces = list(pieces)
    kappa = cfg.uncorrupted_severity_cap if cls != "Clean" else cfg.clean_severity
    out.severity = kappa * u_sev
    return out


def _token_probs(
    emitted: int,
    temp: float,
    codebook: Codebook,
    support: np.ndarray,
    vocab_size: int,
) -> np.ndarray:
    """Sparse softmax over a small support set around the emitted token.

    Mass off the support set is exactly zero, so confident outputs keep a
    Tsallis confidence near one even for large vocabularies; the
    temperature alone separates confident from flat shapes.
    """
    sims = codebook.prob_vectors[support] @ codebook.prob_vectors[emitted]
    logits = sims / temp
    logits -= logits.max()
    weights = np.exp(logits)
    probs = np.zeros(vocab_size, dtype=np.float64)
    probs[support] = weights / weights.sum()
    return probs.astype(np.float32)


class ToyTransducer:
    """Greedy token-and-duration decoder with an oracle error channel."""

    def __init__(self, cfg: OracleConfig, codebook: Codebook, lexicon: Lexicon):
        self.cfg = cfg
        self.codebook = codebook
        self.lexicon = lexicon
        self._support = codebook.neighbors(cfg.support_k, np.arange(cfg.vocab_size))

    def decode(
        self, utt: UtteranceRef, track: FrameEventTrack, seed: int
    ) -> tuple[DecodeResult, LabelSet]:
        cfg, lex = self.cfg, self.lexicon
        timeline = synthesize_timeline(utt, lex, seed)
        if len(track) != timeline.n_frames:
            raise ValidationError(
                f"track length {len(track)} differs from timeline frames {timeline.n_frames}"
            )

        word_tokens = timeline.word_token_indices(len(utt.words))
        outcomes: list[_WordOutcome] = []
        for wi, tidx in enumerate(word_tokens):
            frames: list[int] = []
            for ti in tidx:
                tok = timeline.tokens[ti]
                frames.extend(range(tok.start_frame, tok.start_frame + tok.duration))
            dom = _dominant_class(track, frames)
            pieces = [timeline.tokens[ti].piece_id for ti in tidx]
            outcomes.append(_word_outcome(utt, wi, pieces, dom, cfg, lex, seed))

        frame_emb, deletion_flags = self._frame_embeddings(timeline, track, outcomes, utt, seed)
        tokens, token_labels, spans = self._emit_tokens(
            timeline, track, outcomes, word_tokens, frame_emb, utt, seed
        )

        result = DecodeResult(
            utterance_id=utt.id,
            frame_embeddings=frame_emb.astype(np.float32),
            tokens=tokens,
            hypothesis_words=spans,
            vocab_size=cfg.vocab_size,
        )
        labels = LabelSet(
            token_labels=token_labels,
            deletion_frame_flags=deletion_flags,
            word_labels=word_labels_from_tokens(token_labels, spans),
        )
        return result, labels

    def clean_reference_decode(self, utt: UtteranceRef, seed: int) -> DecodeResult:
        """The pseudo-reference hypothesis: same utterance on clean audio."""
        timeline = synthesize_timeline(utt, self.lexicon, seed)
        track = FrameEventTrack.all_clean(timeline.n_frames)
        return self.decode(utt, track, seed)[0]

    def clean_track(self, utt: UtteranceRef, seed: int) -> FrameEventTrack:
        timeline = synthesize_timeline(utt, self.lexicon, seed)
        return FrameEventTrack.all_clean(timeline.n_frames)

    # internals

    def _frame_embeddings(
        self,
        timeline: Timeline,
        track: FrameEventTrack,
        outcomes: list[_WordOutcome],
        utt: UtteranceRef,
        seed: int,
    ) -> tuple[np.ndarray, np.ndarray]:
        cfg, cb = self.cfg, self.codebook
        n, d = timeline.n_frames, cfg.d_model
        rng = seeded_rng(seed, utt.id, "frames")
        noise = rng.standard_normal((n, d)) * cfg.noise_std

        content = np.tile(cb.silence_vector, (n, 1))
        content_scale = np.empty(n)
        sig_scale = np.empty(n)
        for t in range(n):
            lam = 0.45 if track.classes[t] != EVENT_INDEX["Clean"] else 0.5 * cfg.clean_severity
            content_scale[t] = 1.0 - 0.5 * lam
            sig_scale[t] = cfg.distortion_gain * lam

        deletion_flags = np.zeros(n, dtype=bool)
        for tok in timeline.tokens:
            out = outcomes[tok.word_index]
            rng_frames = range(tok.start_frame, tok.start_frame + tok.duration)
            if out.deleted:
                cls = EVENT_CLASSES[out.dominant_class]
                c_scale = cfg.deleted_retention[cls]
                s_scale = cfg.distortion_gain * (0.55 + 0.45 * out.severity)
                for t in rng_frames:
                    deletion_flags[t] = True
            elif out.label == LABEL_PERC:
                lam = out.severity
                c_scale = 1.0 - cfg.content_attenuation * lam
                s_scale = cfg.distortion_gain * lam
            else:
                lam = out.severity
                c_scale = 1.0 - cfg.content_attenuation * lam
                s_scale = cfg.distortion_gain * lam
            for t in rng_frames:
                content[t] = cb.base_vectors[tok.piece_id]
                content_scale[t] = c_scale
                sig_scale[t] = s_scale

        signatures = cb.event_signatures[track.classes]
        emb = content * content_scale[:, None] + signatures * sig_scale[:, None] + noise
        return emb, deletion_flags

    def _emit_tokens(
        self,
        timeline: Timeline,
        track: FrameEventTrack,
        outcomes: list[_WordOutcome],
        word_tokens: list[list[int]],
        frame_emb: np.ndarray,
        utt: UtteranceRef,
        seed: int,
    ) -> tuple[list[TokenRecord], list[int], list[WordSpan]]:
        cfg, lex, cb = self.cfg, self.lexicon, self.codebook
        tokens: list[TokenRecord] = []
        labels: list[int] = []
        prev_state = cb.decoder_states[-1]  # start-of-sequence

        emissions: list[tuple[int, int, int, int, float]] = []
        # (emit_frame, duration, emitted_id, label, temp)
        for wi, tidx in enumerate(word_tokens):
            out = outcomes[wi]
            if out.deleted:
                continue
            # perception errors are flat; correct and comprehension-error
            # tokens are peaked on whatever was emitted
            temp = cfg.temp_perc if out.label == LABEL_PERC else cfg.temp_correct
            for k, ti in enumerate(tidx):
                tok = timeline.tokens[ti]
                emissions.append((tok.start_frame, tok.duration, out.emitted_pieces[k], out.label, temp))
            if out.insertion_piece is not None and wi < len(word_tokens) - 1:
                gap_frame = timeline.gap_frames[wi]
                emissions.append((gap_frame, 1, out.insertion_piece, LABEL_PERC, cfg.temp_perc))

        emissions.sort(key=lambda e: e[0])
        for emit_frame, duration, emitted, label, temp in emissions:
            support = np.concatenate(([emitted], self._support[emitted]))
            probs = _token_probs(emitted, temp, cb, support, cfg.vocab_size)
            joint = cb.w_enc @ frame_emb[emit_frame] + cb.w_dec @ prev_state
            tokens.append(
                TokenRecord(
                    token_id=emitted,
                    piece=lex.piece_string(emitted),
                    emit_frame=emit_frame,
                    duration=duration,
                    probs=probs,
                    joint_embedding=joint.astype(np.float32),
                )
            )
            labels.append(label)
            prev_state = cb.decoder_states[emitted]

        spans = words_from_tokens([t.piece for t in tokens])
        return tokens, labels, spans


def words_from_tokens(pieces: list[str]) -> list[WordSpan]:
    """Group tokens into words: a piece starts a new word iff it carries
    the boundary mark."""
    spans: list[WordSpan] = []
    start = 0
    for i, piece in enumerate(pieces):
        if piece.startswith(WORD_BOUNDARY_MARK) and i > start:
            spans.append(_make_span(pieces, start, i))
            start = i
    if pieces:
        spans.append(_make_span(pieces, start, len(pieces)))
    return spans


def _make_span(pieces: list[str], start: int, end: int) -> WordSpan:
    word = "".join(p.lstrip(WORD_BOUNDARY_MARK) for p in pieces[start:end])
    return WordSpan(word=word, token_start=start, token_end=end)
