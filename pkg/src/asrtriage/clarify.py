"""
K-round clarification state machine.

Each round: detect -> tag -> ask -> parse the user's reply -> merge the
corrections, repeating until the detectors confirm a clean transcript or
the round budget K runs out. Merging is restricted to flagged spans and
deletion sites; everything else is untouchable by construction.

Span addressing: within a round, flagged word spans are numbered S0, S1,
... left to right and deletion sites D0, D1, ... left to right. Replies
use one line per span, `S0: word ...`, with `-` meaning "remove this
span" and `I am not sure` meaning no edit. The dialogue manager sees only
the tagged transcript, strategy hints, and earlier queries/replies; the
reference transcript lives exclusively inside the user agent (quarantine).
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .aligner import DEL, INS, MATCH, SUB, align_words
from .chat import ChatClient, ChatTransportError
from .fuse import ErrorProfile, fuse, strip_tags, tag_transcript
from .metrics import wer
from .rng import seeded_rng
from .types import DecodeResult, UtteranceRef, ValidationError

MANAGER_ALLOWED_FIELDS = ("tagged_transcript", "strategies", "history")

UNSURE = "I am not sure"
REMOVE = "-"

_REPLY_LINE = re.compile(r"^\s*([SD]\d+)\s*:\s*(.*?)\s*$")
_READBACK = re.compile(r'I heard: "(.*)"')


@dataclass
class WorkingSpan:
    """A still-unresolved query target in current-hypothesis coordinates."""

    span_id: str
    kind: str  # "words" | "deletion"
    start: int  # word index; for deletions, the boundary index
    end: int  # exclusive; unused for deletions
    tag: str
    strategy: str


@dataclass
class RoundLog:
    round_index: int
    tagged_transcript: str
    spans: list[dict]
    query: str
    reply: str
    merged_hypothesis: str
    wer: float | None
    resolved: list[str]
    rejected: list[str]


@dataclass
class ClarifySession:
    utterance_id: str
    k: int
    mode: str
    rounds: list[RoundLog] = field(default_factory=list)
    final_hypothesis: str = ""
    termination: str = ""
    initial_hypothesis: str = ""
    initial_wer: float | None = None
    quarantine_violations: list[str] = field(default_factory=list)

    def wer_trajectory(self) -> list[float]:
        """Initial WER followed by the WER after each merging round."""
        traj = [self.initial_wer]
        for r in self.rounds:
            if r.wer is not None:
                traj.append(r.wer)
        return [x for x in traj if x is not None]

    def clean_round(self) -> int | None:
        """Round whose detect pass confirmed a clean transcript, if any."""
        if self.termination != "clean_detected":
            return None
        return next((r.round_index for r in self.rounds if not r.spans and not r.query), None)

    def to_json_lines(self) -> str:
        header = {
            "utterance_id": self.utterance_id,
            "k": self.k,
            "mode": self.mode,
            "initial_hypothesis": self.initial_hypothesis,
            "initial_wer": self.initial_wer,
            "termination": self.termination,
            "final_hypothesis": self.final_hypothesis,
            "quarantine_violations": self.quarantine_violations,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.rounds]
        return "\n".join(lines) + "\n"


def enforce_quarantine(payload: dict) -> tuple[dict, list[str]]:
    """Strip every field the dialogue manager is not allowed to see."""
    clean = {}
    violations = []
    for key, value in payload.items():
        if key in MANAGER_ALLOWED_FIELDS:
            clean[key] = value
        else:
            violations.append(f"quarantine: stripped manager payload field {key!r}")
    return clean, violations


class TemplatedManager:
    """Deterministic offline dialogue manager."""

    PHRASING = {
        "QuieterRoom": "could you move somewhere quieter and repeat it?",
        "WaitForOtherSpeaker": "someone else was talking; once it is quiet, what was it?",
        "CheckConnection": "the connection glitched; please check it and repeat that part.",
        "SpellOrParaphrase": "could you spell that word or say it another way?",
        "Repeat": "could you say that part again?",
        "AskMissingContent": "I think I missed some words there. What did I miss?",
    }

    def query(self, payload: dict) -> str:
        lines = [f'I heard: "{payload["tagged_transcript"]}"']
        for span_id, strategy, excerpt in payload["strategies"]:
            prompt = self.PHRASING[strategy]
            if excerpt:
                lines.append(f'[{span_id}] About "{excerpt}": {prompt}')
            else:
                lines.append(f"[{span_id}] {prompt}")
        return "\n".join(lines)


class LlmManager:
    """Chat-backed dialogue manager; receives only the quarantined payload."""

    SYSTEM = (
        "You are the clarification manager of a speech interface. You get a "
        "transcript with unreliable spans tagged (<noise>, <unknown>, ...) and "
        "<del/> where content seems missing, plus a recovery strategy per span. "
        'Start your question with the exact line: I heard: "<tagged transcript>" '
        "and then ask one short question per span, prefixed with its id in "
        "brackets, e.g. [S0]."
    )

    def __init__(self, client: ChatClient):
        self.client = client

    def query(self, payload: dict) -> str:
        return self.client.complete(
            [
                {"role": "system", "content": self.SYSTEM},
                {"role": "user", "content": json.dumps(payload, sort_keys=True)},
            ]
        )


@dataclass
class ScriptedUser:
    """Deterministic user-simulator proxy.

    Holds the private reference transcript; answers each queried span
    truthfully with probability `fidelity`, otherwise pleads ignorance.
    Alignment of the read-back hypothesis against the reference uses the
    same tie rule as the evaluator.
    """

    fidelity: float = 1.0
    seed: int = 0

    def reply(self, query: str, reference: list[str], utterance_id: str, round_index: int) -> str:
        readback = _READBACK.search(query)
        if not readback:
            return ""
        spans, hyp_words = parse_tagged(readback.group(1))
        answers = resolve_span_answers(spans, hyp_words, reference)
        rng = seeded_rng(self.seed, utterance_id, "user", round_index)
        lines = []
        for span_id in sorted(answers, key=_span_sort_key):
            if rng.uniform() < self.fidelity:
                words = answers[span_id]
                lines.append(f"{span_id}: {' '.join(words) if words else REMOVE}")
            else:
                lines.append(f"{span_id}: {UNSURE}")
        return "\n".join(lines)


class TerminalUser:
    """Human in the loop over standard input."""

    def reply(self, query: str, reference: list[str], utterance_id: str, round_index: int) -> str:
        print(query)
        print("Answer one line per span id (e.g. `S0: word`), empty line to finish:")
        lines = []
        while True:
            line = input()
            if not line.strip():
                break
            lines.append(line)
        return "\n".join(lines)


class LlmUser:
    """Chat-backed user simulator; the only party holding the reference."""

    SYSTEM = (
        "You are simulating the speaker in a dialogue. Your original words "
        "were: {reference!r}. The system asks about spans it may have "
        "misheard, each with an id like S0 or D0. Reply with one line per "
        "id, exactly `ID: the correct words`, `ID: -` if the span should be "
        "removed, or `ID: I am not sure`. No other text."
    )

    def __init__(self, client: ChatClient, max_reprompts: int = 2):
        self.client = client
        self.max_reprompts = max_reprompts

    def reply(self, query: str, reference: list[str], utterance_id: str, round_index: int) -> str:
        messages = [
            {"role": "system", "content": self.SYSTEM.format(reference=" ".join(reference))},
            {"role": "user", "content": query},
        ]
        text = self.client.complete(messages)
        for _ in range(self.max_reprompts):
            if parse_reply(text):
                break
            messages.append({"role": "assistant", "content": text})
            messages.append(
                {"role": "user", "content": "Please answer again using only `ID: words` lines."}
            )
            text = self.client.complete(messages)
        return text


def parse_tagged(tagged_text: str) -> tuple[list[WorkingSpan], list[str]]:
    """Recover span structure from a tagged transcript readback.

    Returns spans in S/D numbering order plus the plain hypothesis words.
    """
    tokens = tagged_text.split()
    words: list[str] = []
    spans: list[WorkingSpan] = []
    open_start = None
    open_tag = ""
    deletion_boundaries = []
    for tok in tokens:
        if tok == "<del/>":
            deletion_boundaries.append(len(words))
        elif tok.startswith("</"):
            spans.append(
                WorkingSpan("", "words", open_start, len(words), open_tag, "")
            )
            open_start = None
        elif tok.startswith("<"):
            open_tag = tok.strip("<>")
            open_start = len(words)
        else:
            words.append(tok)
    for i, span in enumerate(spans):
        span.span_id = f"S{i}"
    for j, b in enumerate(sorted(set(deletion_boundaries))):
        spans.append(WorkingSpan(f"D{j}", "deletion", b, b, "del", ""))
    return spans, words


def resolve_span_answers(
    spans: list[WorkingSpan], hyp_words: list[str], reference: list[str]
) -> dict[str, list[str]]:
    """True words per queried span, from the reference-side alignment."""
    alignment = align_words(reference, hyp_words)
    by_hyp: dict[int, list[str]] = {}
    boundary_deletions: dict[int, list[str]] = {}
    consumed_hyp = 0
    for op in alignment.ops:
        if op.kind in (MATCH, SUB):
            by_hyp[op.hyp_index] = [reference[op.ref_index]]
            consumed_hyp = op.hyp_index + 1
        elif op.kind == INS:
            by_hyp[op.hyp_index] = []
            consumed_hyp = op.hyp_index + 1
        elif op.kind == DEL:
            boundary_deletions.setdefault(consumed_hyp, []).append(reference[op.ref_index])

    answers: dict[str, list[str]] = {}
    for span in spans:
        if span.kind == "words":
            words: list[str] = []
            for wi in range(span.start, span.end):
                words.extend(by_hyp.get(wi, [hyp_words[wi]]))
            answers[span.span_id] = words
        else:
            answers[span.span_id] = boundary_deletions.get(span.start, [])
    return answers


def parse_reply(text: str) -> dict[str, list[str] | None]:
    """`S0: words` lines -> edits; None marks an unsure (skipped) span."""
    edits: dict[str, list[str] | None] = {}
    for line in text.splitlines():
        m = _REPLY_LINE.match(line)
        if not m:
            continue
        span_id, content = m.group(1), m.group(2)
        if content == UNSURE or not content:
            edits[span_id] = None
        elif content == REMOVE:
            edits[span_id] = []
        else:
            edits[span_id] = content.split()
    return edits


def merge_corrections(
    words: list[str],
    spans: list[WorkingSpan],
    edits: dict[str, list[str] | None],
) -> tuple[list[str], list[WorkingSpan], list[str], list[str], dict[str, tuple[int, int]]]:
    """Apply reply edits to flagged spans only.

    Returns (new words, surviving spans with shifted indices, resolved
    span ids, rejected edit diagnostics, new position per applied edit).
    Edits addressing unknown span ids are rejected; everything outside
    flagged spans is untouched.
    """
    known = {s.span_id: s for s in spans}
    rejected = [
        f"edit targets unflagged span {span_id!r}; rejected"
        for span_id in sorted(edits.keys() - known.keys(), key=_span_sort_key)
    ]
    applied: list[tuple[WorkingSpan, list[str]]] = []
    for span_id in sorted(edits.keys() & known.keys(), key=_span_sort_key):
        if edits[span_id] is not None:
            applied.append((known[span_id], edits[span_id]))

    new_words = list(words)
    deltas: list[tuple[int, int, int]] = []  # (start, old_end, delta)
    for span, replacement in sorted(applied, key=lambda p: p[0].start, reverse=True):
        if span.kind == "words":
            new_words[span.start : span.end] = replacement
            deltas.append((span.start, span.end, len(replacement) - (span.end - span.start)))
        else:
            new_words[span.start : span.start] = replacement
            deltas.append((span.start, span.start, len(replacement)))

    def shift(start: int, end: int) -> tuple[int, int]:
        for es, ee, delta in deltas:
            if start >= ee:
                start += delta
                end += delta
            elif start > es:  # boundary inside an edited region: clamp after it
                repl_len = max(0, delta + (ee - es))
                start = min(start, es + repl_len)
                end = max(start, min(end, es + repl_len))
        return start, end

    resolved = [span.span_id for span, _ in applied]
    applied_positions: dict[str, tuple[int, int]] = {}
    for span, replacement in applied:
        pos = span.start
        for es, ee, delta in deltas:
            if span.start >= ee and not (span.start == es and span.end == ee):
                pos += delta
        applied_positions[span.span_id] = (pos, pos + len(replacement))

    survivors = []
    for span in spans:
        if span.span_id in resolved:
            continue
        start, end = shift(span.start, span.end)
        survivors.append(WorkingSpan(span.span_id, span.kind, start, end, span.tag, span.strategy))
    return new_words, survivors, resolved, rejected, applied_positions


def _span_sort_key(span_id: str) -> tuple[int, int]:
    return (0 if span_id.startswith("S") else 1, int(span_id[1:]))


class TextBypassChannel:
    """Feeds reply words straight back: the theoretical upper-bound mode."""

    def transmit(self, words: list[str], seed: int, context: str) -> tuple[list[str], list[bool]]:
        return list(words), [False] * len(words)


class ToyReplyChannel:
    """Re-decodes each revealed word through the synthetic clean channel."""

    def __init__(self, transducer):
        self.transducer = transducer

    def transmit(self, words: list[str], seed: int, context: str) -> tuple[list[str], list[bool]]:
        out, corrupted = [], []
        for i, word in enumerate(words):
            if word not in self.transducer.lexicon.word_pieces:
                out.append(word)  # cannot be spoken through the toy lexicon
                corrupted.append(False)
                continue
            utt = UtteranceRef(id=f"{context}:reply{i}", words=[word], hard_flags=[False])
            track = self.transducer.clean_track(utt, seed)
            result, labels = self.transducer.decode(utt, track, seed)
            text = result.hypothesis_text or word
            out.extend(text.split())
            corrupted.append(text != word)
        return out, corrupted


def working_spans_from_profile(decode: DecodeResult, profile: ErrorProfile) -> list[WorkingSpan]:
    """Convert a fused error profile into session working spans."""
    tagged = tag_transcript(decode, profile)
    spans: list[WorkingSpan] = []
    for s in tagged.spans:
        if s.kind == "words":
            spans.append(WorkingSpan("", "words", s.word_start, s.word_end, s.tag, s.strategy))
        else:
            spans.append(WorkingSpan("", "deletion", s.boundary, s.boundary, "del", s.strategy))
    return renumber_spans(spans)


def renumber_spans(spans: list[WorkingSpan]) -> list[WorkingSpan]:
    """Assign the round's span ids: S0.. left-to-right word spans, then
    D0.. left-to-right deletion sites (one per boundary).

    The scripted user recovers the same numbering from the tagged
    readback alone, which is what keeps replies addressable.
    """
    word_spans = sorted((s for s in spans if s.kind == "words"), key=lambda s: s.start)
    seen: set[int] = set()
    del_spans = []
    for s in sorted((s for s in spans if s.kind == "deletion"), key=lambda s: s.start):
        if s.start in seen:
            continue
        seen.add(s.start)
        del_spans.append(s)
    out = []
    for i, s in enumerate(word_spans):
        out.append(WorkingSpan(f"S{i}", s.kind, s.start, s.end, s.tag, s.strategy))
    for j, s in enumerate(del_spans):
        out.append(WorkingSpan(f"D{j}", s.kind, s.start, s.end, s.tag, s.strategy))
    return out


def render_tagged(words: list[str], spans: list[WorkingSpan]) -> str:
    """Tagged text for the current working hypothesis."""
    opens: dict[int, WorkingSpan] = {}
    closes: dict[int, WorkingSpan] = {}
    dels: dict[int, int] = {}
    for s in spans:
        if s.kind == "words":
            opens[s.start] = s
            closes[s.end - 1] = s
        else:
            dels[s.start] = dels.get(s.start, 0) + 1
    parts = []
    for wi, word in enumerate(words):
        parts.extend(["<del/>"] * dels.get(wi, 0))
        if wi in opens:
            parts.append(f"<{opens[wi].tag}>")
        parts.append(word)
        if wi in closes:
            parts.append(f"</{closes[wi].tag}>")
    parts.extend(["<del/>"] * dels.get(len(words), 0))
    return " ".join(parts)


def run_session(
    decode: DecodeResult,
    detectors,
    manager,
    user,
    *,
    mode: str = "text_bypass",
    k: int = 3,
    reference: list[str] | None = None,
    seed: int = 0,
    reply_channel=None,
) -> ClarifySession:
    """Drive one utterance through up to K clarification rounds."""
    if k < 1:
        raise ValidationError("need k >= 1")
    if mode not in ("text_bypass", "acoustic"):
        raise ValidationError(f"unknown mode: {mode}")
    channel = reply_channel if mode == "acoustic" else TextBypassChannel()
    if channel is None:
        raise ValidationError("acoustic mode needs a reply channel")

    session = ClarifySession(
        utterance_id=decode.utterance_id,
        k=k,
        mode=mode,
        initial_hypothesis=decode.hypothesis_text,
    )
    if reference is not None:
        session.initial_wer = wer(reference, decode.hypothesis_text.split())

    profile = fuse(decode, detectors.detect(decode))
    spans = working_spans_from_profile(decode, profile)
    words = decode.hypothesis_text.split()
    history: list[dict] = []

    def round_wer(ws: list[str]) -> float | None:
        return wer(reference, ws) if reference is not None else None

    for round_index in range(1, k + 1):
        if not spans:
            session.rounds.append(
                RoundLog(
                    round_index=round_index,
                    tagged_transcript=" ".join(words),
                    spans=[],
                    query="",
                    reply="",
                    merged_hypothesis=" ".join(words),
                    wer=round_wer(words),
                    resolved=[],
                    rejected=[],
                )
            )
            session.termination = "clean_detected"
            break

        spans = renumber_spans(spans)
        tagged_text = render_tagged(words, spans)
        excerpts = {
            s.span_id: (" ".join(words[s.start : s.end]) if s.kind == "words" else "")
            for s in spans
        }
        payload, violations = enforce_quarantine(
            {
                "tagged_transcript": tagged_text,
                "strategies": [(s.span_id, s.strategy, excerpts[s.span_id]) for s in spans],
                "history": list(history),
            }
        )
        session.quarantine_violations.extend(violations)
        try:
            query = manager.query(payload)
            reply = user.reply(query, reference or [], decode.utterance_id, round_index)
        except ChatTransportError as exc:
            session.termination = "user_abort"
            session.rounds.append(
                RoundLog(
                    round_index=round_index,
                    tagged_transcript=tagged_text,
                    spans=[asdict(s) for s in spans],
                    query="",
                    reply=f"<aborted: {exc}>",
                    merged_hypothesis=" ".join(words),
                    wer=round_wer(words),
                    resolved=[],
                    rejected=[],
                )
            )
            break

        edits = parse_reply(reply)
        transmitted: dict[str, list[str] | None] = {}
        garbled: set[str] = set()
        for span_id, replacement in edits.items():
            if replacement:
                sent, corrupted = channel.transmit(
                    replacement, seed, f"{decode.utterance_id}:r{round_index}:{span_id}"
                )
                transmitted[span_id] = sent
                if any(corrupted):
                    garbled.add(span_id)  # merged, but stays flagged for re-analysis
            else:
                transmitted[span_id] = replacement

        words, spans, resolved, rejected, applied_pos = merge_corrections(words, spans, transmitted)
        for span_id in sorted(garbled & applied_pos.keys(), key=_span_sort_key):
            start, end = applied_pos[span_id]
            if end > start:
                spans.append(WorkingSpan("", "words", start, end, "unknown", "Repeat"))
        history.append({"query": query, "reply": reply})
        session.rounds.append(
            RoundLog(
                round_index=round_index,
                tagged_transcript=tagged_text,
                spans=[asdict(s) for s in spans],
                query=query,
                reply=reply,
                merged_hypothesis=" ".join(words),
                wer=round_wer(words),
                resolved=resolved,
                rejected=rejected,
            )
        )
    else:
        session.termination = "max_rounds"

    session.final_hypothesis = " ".join(words)
    return session


def save_sessions(sessions: list[ClarifySession], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sessions:
            f.write(s.to_json_lines())
            f.write("\n")


def reference_leak_ngrams(
    manager_texts: list[str], reference: list[str], revealed_before: list[str], n: int = 3
) -> list[tuple[str, ...]]:
    """Reference n-grams appearing in manager-bound text although absent
    from everything legitimately known (initial hypothesis, prior replies)."""

    def ngrams(tokens: list[str]) -> set[tuple[str, ...]]:
        return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}

    ref_grams = ngrams([w.lower() for w in reference])
    known = ngrams([w.lower() for w in revealed_before])
    leaks = []
    for text in manager_texts:
        toks = [w.lower() for w in strip_tags(text).split()]
        for gram in ngrams(toks) & ref_grams:
            if gram not in known:
                leaks.append(gram)
    return leaks
