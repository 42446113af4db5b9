"""
Stage graph behind the CLI: synth -> decode -> label -> train ->
calibrate -> detect -> fuse -> clarify -> eval -> report.

Every stage persists its artifacts under the run directory and drops a
marker keyed by the config hash, so a completed stage is skipped on
resume and deleting a late artifact (say, reports/) re-emits it without
retraining. All stages are deterministic for a fixed config.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import bundleio
from .aligner import label_comprehension, label_perception_deletion, word_frame_span
from .chat import ChatClient, ChatConfig
from .clarify import (
    LlmManager,
    ScriptedUser,
    TemplatedManager,
    ToyReplyChannel,
    run_session,
    save_sessions,
)
from .cnn import CnnConfig, DetectorModel, TrainConfig, train
from .corpus import CorpusItem, CorpusParams, build_corpus, synthesize_waveform
from .detectors import (
    TrainedDetectorBank,
    token_event_labels,
    token_joint_matrix,
    token_pooled_frames,
)
from .distort import AssetBank, DistortionSpec, apply_spec, spec_event_track
from .fuse import fuse
from .metrics import (
    DetectionReport,
    confusion_matrix,
    detection_report,
    macro_f1,
    maj_score,
    round_stats,
)
from .oracle import OracleConfig, ToyTransducer, build_world, synthesize_timeline
from .runcfg import config_hash, write_config
from .tsallis import calibrate_threshold, decode_word_confidences
from .types import (
    CorpusManifest,
    FrameEventTrack,
    LABEL_COMP,
    LABEL_PERC,
    ManifestRecord,
)

STAGES = (
    "synth",
    "decode",
    "label",
    "train",
    "calibrate",
    "detect",
    "fuse",
    "clarify",
    "eval",
    "report",
)

DETECTOR_NAMES = ("comprehension", "perception", "deletion", "events")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


def make_world(cfg: dict):
    ocfg = OracleConfig(**cfg.get("oracle", {}))
    corpus_cfg = cfg.get("corpus", {})
    codebook, lexicon = build_world(
        ocfg,
        n_words=corpus_cfg.get("lexicon_words", 160),
        hard_fraction=corpus_cfg.get("hard_fraction", 0.25),
        lexicon_seed=cfg["seed"] + 11,
    )
    return ocfg, codebook, lexicon, ToyTransducer(ocfg, codebook, lexicon)


def corpus_params(cfg: dict) -> CorpusParams:
    c = cfg.get("corpus", {})
    return CorpusParams(
        n_utterances=c.get("n_utterances", 96),
        words_min=c.get("words_min", 6),
        words_max=c.get("words_max", 10),
        hard_word_rate=c.get("hard_word_rate", 0.2),
        sample_rate=c.get("sample_rate", 16000),
    )


def _marker(run_dir: Path, stage: str) -> Path:
    return run_dir / f".done_{stage}"


def _stage_complete(run_dir: Path, stage: str, cfg: dict) -> bool:
    marker = _marker(run_dir, stage)
    if not marker.exists():
        return False
    try:
        return json.loads(marker.read_text())["config_hash"] == config_hash(cfg)
    except (json.JSONDecodeError, KeyError):
        return False


def _mark_done(run_dir: Path, stage: str, cfg: dict) -> None:
    _marker(run_dir, stage).write_text(
        json.dumps({"config_hash": config_hash(cfg), "stage": stage}) + "\n"
    )


def load_items(run_dir: Path) -> list[CorpusItem]:
    from .types import UtteranceRef

    items = []
    for line in (run_dir / "items.jsonl").read_text().splitlines():
        obj = json.loads(line)
        items.append(
            CorpusItem(
                utterance=UtteranceRef(
                    id=obj["utterance_id"], words=obj["words"], hard_flags=obj["hard_flags"]
                ),
                condition=obj["condition"],
                split=obj["split"],
                spec=DistortionSpec.from_json(obj["spec"]) if obj.get("spec") else None,
            )
        )
    return items


def stage_synth(cfg: dict, run_dir: Path) -> None:
    """Corpus, carrier audio, distorted audio; items.jsonl inventory."""
    ocfg, codebook, lexicon, transducer = make_world(cfg)
    params = corpus_params(cfg)
    bank = AssetBank(seed=cfg["seed"] + 3)
    seed = cfg["seed"]

    items = build_corpus(
        lexicon,
        params,
        cfg.get("conditions", []),
        seed,
        bank,
        timeline_of=lambda utt: synthesize_timeline(utt, lexicon, seed),
    )
    audio_dir = run_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    packet_mode = "external" if cfg.get("external_codec") else "proxy"

    with open(run_dir / "items.jsonl", "w", encoding="utf-8") as f:
        for item in items:
            timeline = synthesize_timeline(item.utterance, lexicon, seed)
            clip = synthesize_waveform(timeline, seed, params.sample_rate)
            if item.spec is not None:
                clip, _track = apply_spec(clip, item.spec, bank, packet_mode=packet_mode)
            wav_path = audio_dir / f"{item.instance_id}.wav"
            wavfile.write(wav_path, clip.sample_rate, clip.samples)
            f.write(
                json.dumps(
                    {
                        "utterance_id": item.utterance.id,
                        "words": item.utterance.words,
                        "hard_flags": item.utterance.hard_flags,
                        "condition": item.condition,
                        "split": item.split,
                        "spec": item.spec.to_json() if item.spec else None,
                        "audio_path": f"audio/{wav_path.name}",
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def item_track(item: CorpusItem, lexicon, seed: int) -> FrameEventTrack:
    timeline = synthesize_timeline(item.utterance, lexicon, seed)
    if item.spec is None:
        return FrameEventTrack.all_clean(timeline.n_frames)
    return spec_event_track(item.spec, timeline.n_frames, timeline.n_frames * 0.080)


# per-process cache for parallel decoding: rebuilding the world per task
# would dominate the work
_WORKER_WORLD: dict = {}


def _decode_one(args):
    cfg, item_json, seed = args
    key = config_hash(cfg)
    if _WORKER_WORLD.get("key") != key:
        _WORKER_WORLD["key"] = key
        _WORKER_WORLD["world"] = make_world(cfg)
    _, _, lexicon, transducer = _WORKER_WORLD["world"]
    from .types import UtteranceRef

    utt = UtteranceRef(
        id=item_json["utterance_id"], words=item_json["words"], hard_flags=item_json["hard_flags"]
    )
    item = CorpusItem(
        utterance=utt,
        condition=item_json["condition"],
        split=item_json["split"],
        spec=DistortionSpec.from_json(item_json["spec"]) if item_json.get("spec") else None,
    )
    track = item_track(item, lexicon, seed)
    result, labels = transducer.decode(item.utterance, track, seed)
    return item.instance_id, result, track, labels


def stage_decode(cfg: dict, run_dir: Path) -> None:
    """Toy decodes with oracle labels, written as bundles plus manifests.

    Decoding parallelizes under the `jobs` bound; bundles and manifests
    are written in item order by the main process, so the artifacts are
    identical for any job count.
    """
    ocfg, codebook, lexicon, transducer = make_world(cfg)
    items = load_items(run_dir)
    seed = cfg["seed"]
    jobs = int(cfg.get("jobs", 1))
    bundles = run_dir / "bundles"
    bundles.mkdir(exist_ok=True)

    decoded = {}
    if jobs > 1:
        item_jsons = [
            {
                "utterance_id": i.utterance.id,
                "words": i.utterance.words,
                "hard_flags": i.utterance.hard_flags,
                "condition": i.condition,
                "split": i.split,
                "spec": i.spec.to_json() if i.spec else None,
            }
            for i in items
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for instance_id, result, track, labels in pool.map(
                _decode_one, [(cfg, ij, seed) for ij in item_jsons], chunksize=8
            ):
                decoded[instance_id] = (result, track, labels)

    by_split: dict[str, list[ManifestRecord]] = {}
    for item in items:
        if item.instance_id in decoded:
            result, track, labels = decoded[item.instance_id]
        else:
            track = item_track(item, lexicon, seed)
            result, labels = transducer.decode(item.utterance, track, seed)
        result = _rename(result, item.instance_id)
        bundleio.write_bundle(result, track, labels, bundles / item.instance_id)
        by_split.setdefault(item.split, []).append(
            ManifestRecord(
                utterance_id=item.instance_id,
                audio_path=f"../audio/{item.instance_id}.wav",
                distortion_spec=item.spec.to_json() if item.spec else None,
                decode_path=f"../bundles/{item.instance_id}.json",
                label_path=f"../bundles/{item.instance_id}.json",
            )
        )

    manifest_dir = run_dir / "manifests"
    manifest_dir.mkdir(exist_ok=True)
    for split, records in sorted(by_split.items()):
        manifest = CorpusManifest(
            records=records,
            split=split,
            seed=seed,
            vocab_size=ocfg.vocab_size,
            d_model=ocfg.d_model,
        )
        bundleio.write_manifest(manifest, manifest_dir / f"{split}.jsonl")
    with open(manifest_dir / "refs.jsonl", "w", encoding="utf-8") as f:
        seen = set()
        for item in items:
            if item.utterance.id in seen:
                continue
            seen.add(item.utterance.id)
            f.write(
                json.dumps(
                    {
                        "utterance_id": item.utterance.id,
                        "words": item.utterance.words,
                        "hard_flags": item.utterance.hard_flags,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def _rename(result, new_id):
    result.utterance_id = new_id
    return result


def load_bundles(run_dir: Path, items: list[CorpusItem]):
    out = {}
    for item in items:
        out[item.instance_id] = bundleio.read_bundle(run_dir / "bundles" / item.instance_id)
    return out


def stage_label(cfg: dict, run_dir: Path) -> None:
    """Re-derive labels by alignment and cross-check the oracle labels.

    Comprehension labels come from reference-vs-clean alignment; the
    perception/deletion labels from clean-vs-distorted differential
    labeling. Any disagreement with the stored labels is a hard error.
    """
    items = load_items(run_dir)
    bundles = load_bundles(run_dir, items)
    clean_by_utt = {
        item.utterance.id: bundles[item.instance_id][0]
        for item in items
        if item.condition == "Clean"
    }
    checked = {"comprehension": 0, "differential": 0}
    for item in items:
        result, track, labels = bundles[item.instance_id]
        if item.condition == "Clean":
            recon = label_comprehension(item.utterance, result)
            if recon.token_labels != labels.token_labels:
                raise StageError("label", f"comprehension mismatch on {item.instance_id}")
            checked["comprehension"] += 1
        else:
            clean = clean_by_utt[item.utterance.id]
            recon = label_perception_deletion(clean, result)
            oracle_perc = [l == LABEL_PERC for l in labels.token_labels]
            recon_perc = [l == LABEL_PERC for l in recon.token_labels]
            if oracle_perc != recon_perc or not np.array_equal(
                recon.deletion_frame_flags, labels.deletion_frame_flags
            ):
                raise StageError("label", f"differential mismatch on {item.instance_id}")
            checked["differential"] += 1
    (run_dir / "labels_report.json").write_text(json.dumps(checked, sort_keys=True) + "\n")


def detector_datasets(items, bundles, clean_by_utt, splits=("train", "valid")):
    """Per-detector (sequences, labels) keyed by split."""
    data = {name: {s: ([], []) for s in splits} for name in DETECTOR_NAMES}
    for item in items:
        if item.split not in splits:
            continue
        result, track, labels = bundles[item.instance_id]
        token_labels = np.asarray(labels.token_labels)
        if item.condition == "Clean" and len(result.tokens):
            seqs, labs = data["comprehension"][item.split]
            seqs.append(token_joint_matrix(result))
            labs.append((token_labels == LABEL_COMP).astype(np.int64))
        if item.condition != "Clean":
            if len(result.tokens):
                seqs, labs = data["perception"][item.split]
                seqs.append(token_joint_matrix(result))
                labs.append((token_labels == LABEL_PERC).astype(np.int64))
            seqs, labs = data["deletion"][item.split]
            seqs.append(result.frame_embeddings.astype(np.float64))
            labs.append(labels.deletion_frame_flags.astype(np.int64))
        if len(result.tokens):
            seqs, labs = data["events"][item.split]
            seqs.append(token_pooled_frames(result))
            labs.append(token_event_labels(result, track))
    return data


def stage_train(cfg: dict, run_dir: Path) -> None:
    items = load_items(run_dir)
    bundles = load_bundles(run_dir, items)
    clean_by_utt = {
        i.utterance.id: bundles[i.instance_id][0] for i in items if i.condition == "Clean"
    }
    data = detector_datasets(items, bundles, clean_by_utt)
    det = cfg.get("detector", {})
    tr = cfg.get("train", {})
    d_model = cfg.get("oracle", {}).get("d_model", 48)
    models_dir = run_dir / "models"
    models_dir.mkdir(exist_ok=True)

    for name in DETECTOR_NAMES:
        classes = 6 if name == "events" else 2
        weighting = "sqrt_inverse" if name == "deletion" else "inverse"
        ccfg = CnnConfig(
            layers=det.get("layers", 5),
            kernel=det.get("kernel", 5),
            hidden=det.get("hidden", 48),
            dropout=det.get("dropout", 0.2),
            classes=classes,
            in_dim=d_model,
            class_weighting=weighting,
        )
        tcfg = TrainConfig(
            lr=tr.get("lr", 2e-4),
            weight_decay=tr.get("weight_decay", 0.01),
            epochs=tr.get("epochs", 10),
            batch_size=tr.get("batch_size", 32),
            checkpoint_interval=tr.get("checkpoint_interval", 20),
            seed=cfg["seed"] + hash_tag(name),
        )
        (tr_seqs, tr_labs) = data[name]["train"]
        (va_seqs, va_labs) = data[name]["valid"]
        if not tr_seqs or not va_seqs:
            raise StageError("train", f"no data for detector {name}")
        model = train(tr_seqs, tr_labs, va_seqs, va_labs, ccfg, tcfg)
        model.save(models_dir / name)


def hash_tag(name: str) -> int:
    return sum(ord(c) for c in name)


def load_detector_bank(run_dir: Path) -> TrainedDetectorBank:
    models = {name: DetectorModel.load(run_dir / "models" / name) for name in DETECTOR_NAMES}
    return TrainedDetectorBank(
        models["comprehension"], models["perception"], models["deletion"], models["events"]
    )


def stage_calibrate(cfg: dict, run_dir: Path) -> None:
    """FPR-capped confidence threshold on the validation split."""
    items = load_items(run_dir)
    bundles = load_bundles(run_dir, items)
    confs, gold = [], []
    for item in items:
        if item.split != "valid":
            continue
        result, track, labels = bundles[item.instance_id]
        if not result.tokens:
            continue
        confs.extend(decode_word_confidences(result, alpha=0.33))
        gold.extend(bool(w) for w in labels.word_labels)
    threshold = calibrate_threshold(
        np.asarray(confs), np.asarray(gold), beta=cfg.get("beta", 0.05), calibration_set_id="valid"
    )
    (run_dir / "models" / "threshold.json").write_text(
        json.dumps(
            {
                "tau": threshold.tau,
                "achieved_fpr": threshold.achieved_fpr,
                "achieved_recall": threshold.achieved_recall,
                "beta": cfg.get("beta", 0.05),
                "alpha": 0.33,
                "calibration_set_id": threshold.calibration_set_id,
            },
            sort_keys=True,
        )
        + "\n"
    )


def word_gold_flags(result, labels, which: int) -> np.ndarray:
    token_labels = np.asarray(labels.token_labels)
    return np.asarray(
        [
            bool((token_labels[s.token_start : s.token_end] == which).any())
            for s in result.hypothesis_words
        ],
        dtype=bool,
    )


def word_pred_flags(result, token_flags: np.ndarray) -> np.ndarray:
    return np.asarray(
        [bool(token_flags[s.token_start : s.token_end].any()) for s in result.hypothesis_words],
        dtype=bool,
    )


def deletion_word_eval(clean_result, labels, events) -> tuple[np.ndarray, np.ndarray]:
    """Gold/pred deleted-word flags on the clean decode's word grid."""
    gold, pred = [], []
    flags = labels.deletion_frame_flags
    for wi in range(len(clean_result.hypothesis_words)):
        start, end = word_frame_span(clean_result, wi)
        gold.append(bool(flags[start:end].any()))
        pred.append(any(s < end and e > start for s, e in events.spans))
    return np.asarray(gold, dtype=bool), np.asarray(pred, dtype=bool)


def matched_fpr_threshold(confidences: np.ndarray, gold_error: np.ndarray, target_fpr: float):
    """Baseline cutoff tuned so its FPR matches the detector's."""
    return calibrate_threshold(confidences, gold_error, beta=target_fpr, calibration_set_id="matched")


def stage_detect(cfg: dict, run_dir: Path) -> None:
    """Detector and baseline evaluation on the test split, per condition."""
    items = load_items(run_dir)
    bundles = load_bundles(run_dir, items)
    bank = load_detector_bank(run_dir)
    clean_by_utt = {
        i.utterance.id: bundles[i.instance_id] for i in items if i.condition == "Clean"
    }

    by_condition: dict[str, dict] = {}
    event_pred_all, event_gold_all = [], []
    for item in items:
        if item.split != "test":
            continue
        result, track, labels = bundles[item.instance_id]
        if not result.tokens:
            continue
        det = bank.detect(result)
        bucket = by_condition.setdefault(
            item.condition,
            {
                "word_gold": [],
                "word_pred": [],
                "token_gold": [],
                "token_pred": [],
                "confidences": [],
                "del_gold": [],
                "del_pred": [],
            },
        )
        which = LABEL_COMP if item.condition == "Clean" else LABEL_PERC
        token_flags = det.comp_flags if item.condition == "Clean" else det.perc_flags
        token_gold = np.asarray(labels.token_labels) == which
        bucket["token_gold"].extend(token_gold)
        bucket["token_pred"].extend(token_flags)
        bucket["word_gold"].extend(word_gold_flags(result, labels, which))
        bucket["word_pred"].extend(word_pred_flags(result, token_flags))
        bucket["confidences"].extend(decode_word_confidences(result, alpha=0.33))
        if item.condition != "Clean":
            clean_result, _, _ = clean_by_utt[item.utterance.id]
            dg, dp = deletion_word_eval(clean_result, labels, det.deletion_events)
            bucket["del_gold"].extend(dg)
            bucket["del_pred"].extend(dp)
        event_gold_all.extend(token_event_labels(result, track))
        event_pred_all.extend(det.event_classes)

    tables = {}
    for condition, b in sorted(by_condition.items()):
        word_gold = np.asarray(b["word_gold"], dtype=bool)
        word_pred = np.asarray(b["word_pred"], dtype=bool)
        token_rep = detection_report(
            np.asarray(b["token_pred"], dtype=bool), np.asarray(b["token_gold"], dtype=bool), "token"
        )
        word_rep = detection_report(word_pred, word_gold, "word")
        entry = {
            "token": _report_dict(token_rep),
            "word": _report_dict(word_rep),
        }
        if word_gold.any() and (~word_gold).any():
            conf = np.asarray(b["confidences"])
            matched = matched_fpr_threshold(conf, word_gold, word_rep.fpr)
            base_rep = detection_report(conf < matched.tau, word_gold, "word")
            entry["baseline_matched"] = _report_dict(base_rep)
        if b["del_gold"]:
            del_rep = detection_report(
                np.asarray(b["del_pred"], dtype=bool), np.asarray(b["del_gold"], dtype=bool), "word"
            )
            entry["deletion"] = _report_dict(del_rep)
        tables[condition] = entry

    event_mat = confusion_matrix(
        np.asarray(event_pred_all), np.asarray(event_gold_all), n_classes=6
    )
    tables["_events"] = {
        "confusion": event_mat.tolist(),
        "macro_f1": macro_f1(event_mat),
        "accuracy": float(np.trace(event_mat) / max(event_mat.sum(), 1)),
    }
    (run_dir / "detections.json").write_text(json.dumps(tables, sort_keys=True, indent=1) + "\n")


def _report_dict(rep: DetectionReport) -> dict:
    return {
        "tp": rep.tp,
        "fp": rep.fp,
        "fn": rep.fn,
        "tn": rep.tn,
        "recall": rep.recall,
        "fpr": rep.fpr,
        "f1": rep.f1,
    }


def stage_fuse(cfg: dict, run_dir: Path) -> None:
    """Cause-tagged transcripts of the test split, for inspection and reuse."""
    items = load_items(run_dir)
    bundles = load_bundles(run_dir, items)
    bank = load_detector_bank(run_dir)
    from .fuse import tag_transcript

    with open(run_dir / "tagged.jsonl", "w", encoding="utf-8") as f:
        for item in items:
            if item.split != "test":
                continue
            result, track, labels = bundles[item.instance_id]
            if not result.tokens:
                continue
            profile = fuse(result, bank.detect(result))
            tagged = tag_transcript(result, profile)
            f.write(
                json.dumps(
                    {
                        "utterance_id": item.instance_id,
                        "condition": item.condition,
                        "tagged": tagged.text,
                        "hypothesis": result.hypothesis_text,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def stage_clarify(cfg: dict, run_dir: Path) -> None:
    """Clarification sessions over the test split with trained detectors."""
    ocfg, codebook, lexicon, transducer = make_world(cfg)
    items = load_items(run_dir)
    bundles = load_bundles(run_dir, items)
    bank = load_detector_bank(run_dir)
    mode = "text_bypass" if cfg.get("text_bypass", True) else "acoustic"
    channel = None
    if mode == "acoustic":
        reply_cfg = OracleConfig(**{**cfg.get("oracle", {})})
        reply_cfg.p_comp_hard = 0.0
        reply_cfg.p_perc = {k: 0.0 for k in reply_cfg.p_perc}
        reply_cfg.p_del = {k: 0.0 for k in reply_cfg.p_del}
        channel = ToyReplyChannel(ToyTransducer(reply_cfg, codebook, lexicon))
    manager = TemplatedManager()
    if cfg.get("llm", {}).get("endpoint"):  # networked manager is strictly opt-in
        llm = cfg["llm"]
        manager = LlmManager(
            ChatClient(
                ChatConfig(
                    endpoint=llm["endpoint"],
                    model=llm.get("model", ""),
                    temperature=llm.get("temperature", 0.0),
                    timeout_s=llm.get("timeout_s", 30.0),
                )
            )
        )
    user = ScriptedUser(fidelity=cfg.get("fidelity", 1.0), seed=cfg["seed"] + 17)

    sessions_dir = run_dir / "sessions"
    sessions_dir.mkdir(exist_ok=True)
    by_condition: dict[str, list] = {}
    for item in items:
        if item.split != "test":
            continue
        result, track, labels = bundles[item.instance_id]
        if not result.tokens:
            continue
        session = run_session(
            result,
            bank,
            manager,
            user,
            mode=mode,
            k=cfg.get("k_rounds", 3),
            reference=item.utterance.words,
            seed=cfg["seed"],
            reply_channel=channel,
        )
        by_condition.setdefault(item.condition, []).append(session)
    for condition, sessions in sorted(by_condition.items()):
        save_sessions(sessions, sessions_dir / f"{condition}.jsonl")


def stage_eval(cfg: dict, run_dir: Path) -> None:
    """Round statistics per condition plus the judge-scored dialogue table."""
    items = load_items(run_dir)
    bundles = load_bundles(run_dir, items)
    sessions_dir = run_dir / "sessions"
    k = cfg.get("k_rounds", 3)

    stats = {}
    for path in sorted(sessions_dir.glob("*.jsonl")):
        condition = path.stem
        trajs, cleans = [], []
        for block in path.read_text().split("\n\n"):
            lines = [l for l in block.splitlines() if l.strip()]
            if not lines:
                continue
            header = json.loads(lines[0])
            rounds = [json.loads(l) for l in lines[1:]]
            traj = [header["initial_wer"]] + [
                r["wer"] for r in rounds if r["wer"] is not None and r["query"]
            ]
            trajs.append(traj)
            clean_round = next(
                (r["round_index"] for r in rounds if not r["spans"] and not r["query"]), None
            )
            cleans.append(clean_round if header["termination"] == "clean_detected" else None)
        if trajs:
            rs = round_stats(trajs, cleans, k)
            stats[condition] = {
                "wer_per_round": rs.wer_per_round,
                "werr_per_round": rs.werr_per_round,
                "improved_rate": rs.improved_rate,
                "final_rate": rs.final_rate,
                "degradation_fpr": rs.degradation_fpr,
                "n_sessions": rs.n_sessions,
            }

    # downstream dialogue quality; the hermetic mock judge unless a chat
    # endpoint is configured
    judge = None
    if cfg.get("llm", {}).get("endpoint"):
        llm = cfg["llm"]
        client = ChatClient(
            ChatConfig(
                endpoint=llm["endpoint"],
                model=llm.get("model", ""),
                temperature=llm.get("temperature", 0.0),
                timeout_s=llm.get("timeout_s", 30.0),
            )
        )
        judge = lambda prompt: client.complete([{"role": "user", "content": prompt}])
    maj = {}
    refs = {i.utterance.id: " ".join(i.utterance.words) for i in items}
    instruction = "Repeat the sentence exactly."
    for source in ("ground_truth", "clean_asr", "distorted_asr", "clarified"):
        scores = []
        for item in items:
            if item.split != "test" or item.condition == "Clean":
                continue
            ref = refs[item.utterance.id]
            if source == "ground_truth":
                predicted = ref
            elif source == "clean_asr":
                clean_result, _, _ = bundles[f"{item.utterance.id}__Clean"]
                predicted = clean_result.hypothesis_text
            elif source == "distorted_asr":
                predicted = bundles[item.instance_id][0].hypothesis_text
            else:
                predicted = _final_hypothesis(sessions_dir, item) or ""
            scores.append(maj_score(instruction, ref, predicted, judge=judge))
        if scores:
            maj[source] = float(np.mean(scores))
    (run_dir / "eval.json").write_text(
        json.dumps({"rounds": stats, "maj": maj}, sort_keys=True, indent=1) + "\n"
    )


def _final_hypothesis(sessions_dir: Path, item) -> str | None:
    path = sessions_dir / f"{item.condition}.jsonl"
    if not path.exists():
        return None
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("utterance_id") == item.instance_id:
            return obj.get("final_hypothesis")
    return None


def stage_report(cfg: dict, run_dir: Path) -> None:
    from .report import emit_report

    emit_report(run_dir)


STAGE_FUNCS = {
    "synth": stage_synth,
    "decode": stage_decode,
    "label": stage_label,
    "train": stage_train,
    "calibrate": stage_calibrate,
    "detect": stage_detect,
    "fuse": stage_fuse,
    "clarify": stage_clarify,
    "eval": stage_eval,
    "report": stage_report,
}


def run_stage(stage: str, cfg: dict, run_dir: Path, force: bool = False) -> bool:
    """Run one stage unless its marker is fresh; returns True if it ran."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if not force and _stage_complete(run_dir, stage, cfg):
        return False
    try:
        STAGE_FUNCS[stage](cfg, run_dir)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc
    _mark_done(run_dir, stage, cfg)
    return True


def run_pipeline(cfg: dict, run_dir: Path, force: bool = False) -> list[str]:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(cfg, run_dir / "config.json")
    ran = []
    for stage in STAGES:
        if run_stage(stage, cfg, run_dir, force=force):
            ran.append(stage)
    return ran


def validate_run_dir(run_dir: Path) -> list[str]:
    """Dangling-reference check over a completed run directory."""
    run_dir = Path(run_dir)
    violations = []
    manifest_dir = run_dir / "manifests"
    if not manifest_dir.exists():
        return [f"missing manifests directory in {run_dir}"]
    for manifest_path in sorted(manifest_dir.glob("*.jsonl")):
        if manifest_path.name == "refs.jsonl":
            continue
        violations.extend(
            f"{manifest_path.name}: {v}" for v in bundleio.validate_manifest_file(manifest_path)
        )
    for required in ("config.json", "items.jsonl"):
        if not (run_dir / required).exists():
            violations.append(f"missing {required}")
    return violations
