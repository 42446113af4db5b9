"""
Waveform distortion synthesis and the matching per-frame event tracks.

Nine conditions are supported: full-clip noise, partial noise, room
reverberation, competing-speaker interference, low-bitrate packet loss,
zero-masked segments, reverb+noise, and two multi-distortion composites
(with and without reverb). Composites apply components in the fixed
order reverb -> additive -> packet loss -> masking; the event track marks
each 80 ms frame with the most severe active class under the precedence
Missing > PacketLoss > Interference > Noise > RIR > Clean.

All operations are deterministic functions of (inputs, seed).
"""

from __future__ import annotations

import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .rng import seeded_rng as _rng
from .types import AudioClip, EVENT_INDEX, FRAME_SECONDS, FrameEventTrack, ValidationError

DISTORTION_KINDS = (
    "Noise",
    "NoisePartial",
    "RIR",
    "Interference",
    "PacketLoss",
    "Missing",
    "RIRNoise",
    "MultiNoRIR",
    "MultiRIR",
)

NOISE_SNR_RANGE = (-5.0, 20.0)
INTERFERENCE_SNR_RANGE = (5.0, 20.0)
OPUS_BITRATES = (1, 2, 4, 8)
PARTIAL_SEGMENT_FRACTION = (0.20, 0.60)  # sub-segment length relative to clip duration

# Proxy packet-loss calibration: per-20ms-frame drop probability and
# amplitude quantization levels, both monotone in bitrate.
PACKET_DROP_PROB = {1: 0.50, 2: 0.35, 4: 0.20, 8: 0.10}
PACKET_QUANT_LEVELS = {1: 16, 2: 32, 4: 64, 8: 128}
PACKET_FRAME_SECONDS = 0.020

# Most severe first; used to resolve overlapping distortions on one frame.
SEVERITY_ORDER = ("Missing", "PacketLoss", "Interference", "Noise", "RIR")


class DistortionError(ValueError):
    pass


@dataclass
class DistortionSpec:
    """A condition name plus fully resolved parameters.

    params keys by kind:
      Noise:        snr_db, noise_id
      NoisePartial: snr_db, noise_id, segment [start_s, end_s]
      RIR:          rir_id
      Interference: snr_db, interferer_id, segment
      PacketLoss:   bitrate_kbps, segment
      Missing:      segment
      RIRNoise:     rir_id, snr_db, noise_id
      MultiNoRIR:   noise {snr_db, noise_id}, interference {...}, packet_loss {...}, missing {segment}
      MultiRIR:     MultiNoRIR params plus rir_id
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def validate(self, duration_s: float | None = None) -> None:
        if self.kind not in DISTORTION_KINDS:
            raise ValidationError(f"unknown distortion kind: {self.kind}")
        for key, snr in self._snr_entries():
            lo, hi = NOISE_SNR_RANGE if key == "noise" else INTERFERENCE_SNR_RANGE
            if not (lo <= snr <= hi):
                raise ValidationError(f"{key} snr_db {snr} outside [{lo}, {hi}]")
        for sub in self._component_params():
            if "bitrate_kbps" in sub and sub["bitrate_kbps"] not in OPUS_BITRATES:
                raise ValidationError(f"bitrate {sub['bitrate_kbps']} not in {OPUS_BITRATES}")
            seg = sub.get("segment")
            if seg is not None:
                s0, s1 = seg
                if s0 < -1e-9 or s1 < s0 or (duration_s is not None and s1 > duration_s + 1e-9):
                    raise ValidationError(f"segment {seg} outside clip bounds")

    def _component_params(self) -> list[dict]:
        if self.kind in ("MultiNoRIR", "MultiRIR"):
            out = [self.params.get(k, {}) for k in ("noise", "interference", "packet_loss", "missing")]
            return [p for p in out if p]
        return [self.params]

    def _snr_entries(self) -> list[tuple[str, float]]:
        entries = []
        if self.kind in ("Noise", "NoisePartial", "RIRNoise"):
            entries.append(("noise", self.params["snr_db"]))
        elif self.kind == "Interference":
            entries.append(("interference", self.params["snr_db"]))
        elif self.kind in ("MultiNoRIR", "MultiRIR"):
            if "noise" in self.params:
                entries.append(("noise", self.params["noise"]["snr_db"]))
            if "interference" in self.params:
                entries.append(("interference", self.params["interference"]["snr_db"]))
        return entries

    def active_components(self) -> list[tuple[str, tuple[float, float] | None]]:
        """(event class, segment or None for full clip) per applied distortion."""
        p = self.params
        if self.kind == "Noise":
            return [("Noise", None)]
        if self.kind == "NoisePartial":
            return [("Noise", tuple(p["segment"]))]
        if self.kind == "RIR":
            return [("RIR", None)]
        if self.kind == "Interference":
            return [("Interference", tuple(p["segment"]))]
        if self.kind == "PacketLoss":
            return [("PacketLoss", tuple(p["segment"]))]
        if self.kind == "Missing":
            return [("Missing", tuple(p["segment"]))]
        if self.kind == "RIRNoise":
            return [("RIR", None), ("Noise", None)]
        comps: list[tuple[str, tuple[float, float] | None]] = []
        if self.kind == "MultiRIR":
            comps.append(("RIR", None))
        if "noise" in p:
            comps.append(("Noise", None))
        if "interference" in p:
            comps.append(("Interference", tuple(p["interference"]["segment"])))
        if "packet_loss" in p:
            comps.append(("PacketLoss", tuple(p["packet_loss"]["segment"])))
        if "missing" in p:
            comps.append(("Missing", tuple(p["missing"]["segment"])))
        return comps

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self.params, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "DistortionSpec":
        return cls(kind=obj["kind"], params=obj.get("params", {}), seed=obj.get("seed", 0))


@dataclass
class AssetBank:
    """Named noise/RIR/interferer sources.

    In synthetic mode every asset is a pure function of (seed, name,
    length): pink noise, exponentially decaying white RIRs with a 0.3 s
    tail, and amplitude-modulated tone mixtures standing in for a
    competing speaker.
    """

    mode: str = "synthetic_seeded"
    seed: int = 0
    noises: dict = field(default_factory=dict)
    rirs: dict = field(default_factory=dict)
    interferers: dict = field(default_factory=dict)
    noise_names: tuple = ("noise0", "noise1", "noise2", "noise3")
    rir_names: tuple = ("rir0", "rir1", "rir2")
    interferer_names: tuple = ("talker0", "talker1", "talker2")

    def noise(self, name: str, n_samples: int, sample_rate: int) -> AudioClip:
        if self.mode == "user_supplied":
            return self._stored(self.noises, name)
        rng = _rng(self.seed, "noise", name, n_samples)
        spectrum = np.fft.rfft(rng.standard_normal(n_samples))
        freqs = np.arange(spectrum.size, dtype=np.float64)
        freqs[0] = 1.0
        pink = np.fft.irfft(spectrum / np.sqrt(freqs), n=n_samples)
        pink = pink / (np.max(np.abs(pink)) + 1e-12) * 0.5
        return AudioClip(pink.astype(np.float32), sample_rate)

    def rir(self, name: str, sample_rate: int) -> AudioClip:
        if self.mode == "user_supplied":
            return self._stored(self.rirs, name)
        rng = _rng(self.seed, "rir", name)
        t60 = 0.3
        n = int(t60 * sample_rate)
        decay = np.power(10.0, -3.0 * np.arange(n) / (t60 * sample_rate))
        h = decay * rng.standard_normal(n) * 0.3
        h[0] = 1.0  # direct path
        return AudioClip(h.astype(np.float32), sample_rate)

    def interferer(self, name: str, n_samples: int, sample_rate: int) -> AudioClip:
        if self.mode == "user_supplied":
            return self._stored(self.interferers, name)
        rng = _rng(self.seed, "interferer", name, n_samples)
        t = np.arange(n_samples) / sample_rate
        sig = np.zeros(n_samples)
        for _ in range(3):
            f0 = rng.uniform(120.0, 400.0)
            sig += np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
        am = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
        sig = sig * am
        sig = sig / (np.max(np.abs(sig)) + 1e-12) * 0.5
        return AudioClip(sig.astype(np.float32), sample_rate)

    @staticmethod
    def _stored(table: dict, name: str) -> AudioClip:
        if name not in table:
            raise DistortionError(f"missing asset id: {name}")
        return table[name]


def _fit_length(other: AudioClip, n_samples: int) -> np.ndarray:
    """Loop or truncate a companion signal to the target length."""
    x = other.samples
    if x.size >= n_samples:
        return x[:n_samples].astype(np.float64)
    reps = int(np.ceil(n_samples / x.size))
    return np.tile(x, reps)[:n_samples].astype(np.float64)


def mix_at_snr(clip: AudioClip, other: AudioClip, snr_db: float) -> AudioClip:
    """Add `other` to `clip` scaled so the clip-to-other power ratio hits snr_db."""
    if clip.sample_rate != other.sample_rate:
        raise DistortionError("sample-rate mismatch between clip and companion signal")
    x = clip.samples.astype(np.float64)
    n = _fit_length(other, x.size)
    p_clip = float(np.mean(x**2))
    p_other = float(np.mean(n**2))
    if p_other <= 0:
        raise DistortionError("companion signal has zero power; gain undefined")
    if p_clip <= 0:
        raise DistortionError("clip has zero power")
    gain = np.sqrt(p_clip / (p_other * 10.0 ** (snr_db / 10.0)))
    return AudioClip((x + gain * n).astype(np.float32), clip.sample_rate)


def apply_rir(clip: AudioClip, rir: AudioClip) -> AudioClip:
    """Full convolution truncated to the clip length.

    The output is rescaled to the input's peak only when it would clip.
    """
    if rir.samples.size < 1:
        raise DistortionError("empty rir")
    x = clip.samples.astype(np.float64)
    h = rir.samples.astype(np.float64)
    if h.size == 1:
        y = x * h[0]
    else:
        y = signal.fftconvolve(x, h)[: x.size]
    peak = float(np.max(np.abs(y)))
    if peak > 1.0:
        in_peak = float(np.max(np.abs(x)))
        y = y * (in_peak / peak)
    return AudioClip(y.astype(np.float32), clip.sample_rate)


def _segment_indices(clip: AudioClip, start_s: float, end_s: float) -> tuple[int, int]:
    i0 = int(round(start_s * clip.sample_rate))
    i1 = int(round(end_s * clip.sample_rate))
    if i0 < 0 or i1 > clip.samples.size or i1 < i0:
        raise DistortionError(f"segment [{start_s}, {end_s}] out of clip bounds")
    return i0, i1


def mask_missing(clip: AudioClip, start_s: float, dur_s: float) -> AudioClip:
    """Zero out [start_s, start_s + dur_s); everything else is bit-identical."""
    i0, i1 = _segment_indices(clip, start_s, start_s + dur_s)
    out = clip.samples.copy()
    out[i0:i1] = 0.0
    return AudioClip(out, clip.sample_rate)


def _quantize(x: np.ndarray, levels: int) -> np.ndarray:
    step = 2.0 / levels
    return np.clip(np.round(x / step) * step, -1.0, 1.0)


def proxy_packet_loss(clip: AudioClip, bitrate_kbps: int, seed: int) -> AudioClip:
    """Hermetic codec stand-in: drop 20 ms frames at a bitrate-dependent
    probability (zero fill) and amplitude-quantize the survivors."""
    if bitrate_kbps not in OPUS_BITRATES:
        raise ValidationError(f"bitrate {bitrate_kbps} not in {OPUS_BITRATES}")
    rng = _rng(seed, "packet_loss", bitrate_kbps)
    p_drop = PACKET_DROP_PROB[bitrate_kbps]
    levels = PACKET_QUANT_LEVELS[bitrate_kbps]
    frame = int(round(PACKET_FRAME_SECONDS * clip.sample_rate))
    out = clip.samples.astype(np.float64).copy()
    for start in range(0, out.size, frame):
        block = slice(start, min(start + frame, out.size))
        if rng.uniform() < p_drop:
            out[block] = 0.0
        else:
            out[block] = _quantize(out[block], levels)
    return AudioClip(out.astype(np.float32), clip.sample_rate)


def external_packet_loss(clip: AudioClip, bitrate_kbps: int) -> AudioClip:
    """Round-trip through the opus codec at the target bitrate via ffmpeg."""
    if bitrate_kbps not in OPUS_BITRATES:
        raise ValidationError(f"bitrate {bitrate_kbps} not in {OPUS_BITRATES}")
    if shutil.which("ffmpeg") is None:
        raise DistortionError(
            "ffmpeg binary not found; external codec mode unavailable. "
            "Use mode='proxy' for the hermetic packet-loss simulation."
        )
    from scipy.io import wavfile

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        src, enc, dst = tmp / "in.wav", tmp / "out.opus", tmp / "roundtrip.wav"
        wavfile.write(src, clip.sample_rate, clip.samples)
        subprocess.run(
            ["ffmpeg", "-i", str(src), "-c:a", "libopus", "-b:a", f"{bitrate_kbps}k", str(enc)],
            check=True,
            capture_output=True,
        )
        subprocess.run(
            ["ffmpeg", "-i", str(enc), "-ar", str(clip.sample_rate), "-ac", "1", str(dst)],
            check=True,
            capture_output=True,
        )
        rate, data = wavfile.read(dst)
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    data = np.asarray(data, dtype=np.float32).reshape(-1)
    return AudioClip(data, rate)


def simulate_packet_loss(clip: AudioClip, bitrate_kbps: int, mode: str = "proxy", seed: int = 0) -> AudioClip:
    if mode == "external":
        return external_packet_loss(clip, bitrate_kbps)
    if mode == "proxy":
        return proxy_packet_loss(clip, bitrate_kbps, seed)
    raise ValidationError(f"unknown packet-loss mode: {mode}")


def frames_touching(start_s: float, end_s: float, n_frames: int) -> tuple[int, int]:
    """Half-open frame range overlapping [start_s, end_s)."""
    f0 = max(0, int(np.floor(start_s / FRAME_SECONDS + 1e-9)))
    f1 = min(n_frames, int(np.ceil(end_s / FRAME_SECONDS - 1e-9)))
    return f0, max(f0, f1)


def spec_event_track(spec: DistortionSpec, n_frames: int, duration_s: float) -> FrameEventTrack:
    """Per-frame class labels for a resolved spec, least severe painted first."""
    classes = np.zeros(n_frames, dtype=np.int64)  # Clean
    comps = spec.active_components()
    for name in reversed(SEVERITY_ORDER):
        for comp_name, segment in comps:
            if comp_name != name:
                continue
            if segment is None:
                classes[:] = EVENT_INDEX[name]
            else:
                f0, f1 = frames_touching(segment[0], segment[1], n_frames)
                classes[f0:f1] = EVENT_INDEX[name]
    return FrameEventTrack(classes)


def _mix_segment(clip: AudioClip, other: AudioClip, snr_db: float, segment) -> AudioClip:
    if segment is None:
        return mix_at_snr(clip, other, snr_db)
    i0, i1 = _segment_indices(clip, segment[0], segment[1])
    if i1 <= i0:
        return clip
    piece = AudioClip(clip.samples[i0:i1], clip.sample_rate)
    mixed = mix_at_snr(piece, other, snr_db)
    out = clip.samples.copy()
    out[i0:i1] = mixed.samples
    return AudioClip(out, clip.sample_rate)


def apply_spec(
    clip: AudioClip,
    spec: DistortionSpec,
    bank: AssetBank,
    packet_mode: str = "proxy",
) -> tuple[AudioClip, FrameEventTrack]:
    """Apply a resolved distortion spec and return the distorted clip with
    its ground-truth event track."""
    spec.validate(clip.duration_s)
    p = spec.params
    out = clip
    n = clip.samples.size

    def noise_clip(noise_id, length):
        return bank.noise(noise_id, length, clip.sample_rate)

    def seg_len(segment):
        i0, i1 = _segment_indices(clip, segment[0], segment[1])
        return i1 - i0

    # 1. reverberation
    if spec.kind in ("RIR", "RIRNoise", "MultiRIR"):
        out = apply_rir(out, bank.rir(p["rir_id"], clip.sample_rate))

    # 2. additive noise / interference
    additive = False
    if spec.kind in ("Noise", "RIRNoise"):
        out = _mix_segment(out, noise_clip(p["noise_id"], n), p["snr_db"], None)
        additive = True
    elif spec.kind == "NoisePartial":
        seg = p["segment"]
        out = _mix_segment(out, noise_clip(p["noise_id"], seg_len(seg)), p["snr_db"], seg)
        additive = True
    elif spec.kind == "Interference":
        seg = p["segment"]
        talker = bank.interferer(p["interferer_id"], seg_len(seg), clip.sample_rate)
        out = _mix_segment(out, talker, p["snr_db"], seg)
        additive = True
    elif spec.kind in ("MultiNoRIR", "MultiRIR"):
        if "noise" in p:
            out = _mix_segment(out, noise_clip(p["noise"]["noise_id"], n), p["noise"]["snr_db"], None)
            additive = True
        if "interference" in p:
            seg = p["interference"]["segment"]
            talker = bank.interferer(p["interference"]["interferer_id"], seg_len(seg), clip.sample_rate)
            out = _mix_segment(out, talker, p["interference"]["snr_db"], seg)
            additive = True
    if additive:
        peak = float(np.max(np.abs(out.samples)))
        if peak > 1.0:
            out = AudioClip((out.samples * (0.99 / peak)).astype(np.float32), out.sample_rate)

    # 3. packet loss over its segment
    pl = p if spec.kind == "PacketLoss" else p.get("packet_loss")
    if spec.kind == "PacketLoss" or (spec.kind in ("MultiNoRIR", "MultiRIR") and pl):
        i0, i1 = _segment_indices(clip, pl["segment"][0], pl["segment"][1])
        if i1 > i0:
            piece = AudioClip(out.samples[i0:i1], out.sample_rate)
            lost = simulate_packet_loss(piece, pl["bitrate_kbps"], mode=packet_mode, seed=spec.seed)
            samples = out.samples.copy()
            samples[i0:i1] = lost.samples[: i1 - i0]
            out = AudioClip(samples, out.sample_rate)

    # 4. masking
    missing = p if spec.kind == "Missing" else p.get("missing")
    if spec.kind == "Missing" or (spec.kind in ("MultiNoRIR", "MultiRIR") and missing):
        seg = missing["segment"]
        out = mask_missing(out, seg[0], seg[1] - seg[0])

    track = spec_event_track(spec, clip.n_frames, clip.duration_s)
    return out, track


def sample_spec(kind: str, seed: int, duration_s: float, bank: AssetBank) -> DistortionSpec:
    """Draw concrete parameters for a condition name."""
    if kind not in DISTORTION_KINDS:
        raise ValidationError(f"unknown distortion kind: {kind}")
    rng = _rng(seed, "spec", kind)

    def segment():
        frac = rng.uniform(*PARTIAL_SEGMENT_FRACTION)
        length = frac * duration_s
        start = rng.uniform(0.0, duration_s - length)
        return [round(float(start), 6), round(float(start + length), 6)]

    def noise_params():
        return {
            "snr_db": round(float(rng.uniform(*NOISE_SNR_RANGE)), 3),
            "noise_id": str(rng.choice(bank.noise_names)),
        }

    def interference_params():
        return {
            "snr_db": round(float(rng.uniform(*INTERFERENCE_SNR_RANGE)), 3),
            "interferer_id": str(rng.choice(bank.interferer_names)),
            "segment": segment(),
        }

    def packet_params():
        return {"bitrate_kbps": int(rng.choice(OPUS_BITRATES)), "segment": segment()}

    rir_id = str(rng.choice(bank.rir_names))
    if kind == "Noise":
        params = noise_params()
    elif kind == "NoisePartial":
        params = {**noise_params(), "segment": segment()}
    elif kind == "RIR":
        params = {"rir_id": rir_id}
    elif kind == "Interference":
        params = interference_params()
    elif kind == "PacketLoss":
        params = packet_params()
    elif kind == "Missing":
        params = {"segment": segment()}
    elif kind == "RIRNoise":
        params = {"rir_id": rir_id, **noise_params()}
    else:
        params = {
            "noise": noise_params(),
            "interference": interference_params(),
            "packet_loss": packet_params(),
            "missing": {"segment": segment()},
        }
        if kind == "MultiRIR":
            params["rir_id"] = rir_id
    return DistortionSpec(kind=kind, params=params, seed=seed)
