"""
Decoder backends.

`load_backend` resolves a model identifier to something with a
`decode(samples, sample_rate) -> DecodedUtterance fields` method and
`vocab_size` / `d_model` attributes.

* `fake:<seed>` — a deterministic synthetic checkpoint for tests and
  offline development: energy-gated token emission on the 80 ms grid
  with duration skips, peaked distributions, and joiner-style joint
  embeddings (an encoder projection plus a decoder-history projection).
* anything else — treated as a NeMo model name or .nemo path; requires
  `nemo_toolkit[asr]` and a downloaded checkpoint.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .bundles import BOUNDARY_MARK, DecodedToken

FRAME_SECONDS = 0.080


class BackendError(RuntimeError):
    pass


@dataclass
class RawDecode:
    tokens: list[DecodedToken]
    probs: np.ndarray
    joints: np.ndarray
    frame_embeddings: np.ndarray


def _rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


class FakeTdtBackend:
    """Deterministic stand-in checkpoint.

    Tokens are emitted when a frame window carries energy, advancing by
    the predicted duration like a greedy token-and-duration decoder;
    silence produces no emissions.
    """

    def __init__(self, seed: int = 0, vocab_size: int = 64, d_model: int = 32):
        self.seed = seed
        self.vocab_size = vocab_size
        self.d_model = d_model
        rng = _rng(seed, "fake-backend", vocab_size, d_model)
        letters = "abcdefghijklmnopqrstuvwxyz"
        pieces = []
        seen = set()
        while len(pieces) < vocab_size:
            core = "".join(rng.choice(list(letters), size=2))
            if core in seen:
                continue
            seen.add(core)
            pieces.append((BOUNDARY_MARK + core) if len(pieces) % 2 == 0 else core)
        self.pieces = pieces
        self.enc_proj = rng.standard_normal((d_model, d_model)) / np.sqrt(d_model)
        self.dec_states = rng.standard_normal((vocab_size + 1, d_model)) / np.sqrt(d_model)
        self.carrier = rng.standard_normal((vocab_size, d_model)) / np.sqrt(d_model)

    def decode(self, samples: np.ndarray, sample_rate: int) -> RawDecode:
        samples = np.asarray(samples, dtype=np.float64)
        frame_len = max(1, int(round(FRAME_SECONDS * sample_rate)))
        n_frames = max(1, int(np.ceil(samples.size / frame_len)))
        energies = np.zeros(n_frames)
        for f in range(n_frames):
            chunk = samples[f * frame_len : (f + 1) * frame_len]
            energies[f] = np.sqrt(np.mean(chunk**2)) if chunk.size else 0.0

        rng = _rng(self.seed, "decode", samples.tobytes())
        frame_emb = np.zeros((n_frames, self.d_model))
        for f in range(n_frames):
            content_id = int(
                _rng(self.seed, "content", round(float(energies[f]), 6)).integers(self.vocab_size)
            )
            frame_emb[f] = self.carrier[content_id] * (0.2 + energies[f])
        frame_emb += rng.standard_normal(frame_emb.shape) * 0.01

        gate = 0.01
        tokens: list[DecodedToken] = []
        probs_rows, joint_rows = [], []
        prev = self.vocab_size  # start-of-sequence decoder state
        t = 0
        while t < n_frames:
            if energies[t] <= gate:
                t += 1
                continue
            duration = int(rng.integers(1, 5))
            token_id = int(rng.integers(self.vocab_size))
            row = np.full(self.vocab_size, 1e-6)
            row[token_id] = 1.0
            row /= row.sum()
            # simulate mild numeric slack like a real softmax export
            row = row * (1.0 + 5e-5)
            joint = self.enc_proj @ frame_emb[t] + self.dec_states[prev]
            tokens.append(
                DecodedToken(
                    token_id=token_id,
                    piece=self.pieces[token_id],
                    emit_frame=t,
                    duration=min(duration, 4),
                )
            )
            probs_rows.append(row)
            joint_rows.append(joint)
            prev = token_id
            t += max(1, duration)

        probs = np.asarray(probs_rows) if probs_rows else np.zeros((0, self.vocab_size))
        joints = np.asarray(joint_rows) if joint_rows else np.zeros((0, self.d_model))
        return RawDecode(
            tokens=tokens,
            probs=probs,
            joints=joints,
            frame_embeddings=frame_emb.astype(np.float32),
        )


class NemoTdtBackend:
    """Pretrained token-and-duration transducer via nemo_toolkit.

    Captures per-frame encoder states, the greedy (token, duration)
    choices, the post-softmax distribution over real tokens per emission,
    and the joiner-input embedding reconstructed as
    enc_projection(h_enc) + pred_projection(h_dec), which equals the
    joint network's additive input.
    """

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            import nemo.collections.asr as nemo_asr
        except ImportError as exc:
            raise BackendError(
                "nemo_toolkit[asr] is required for real checkpoints; install it "
                "or use a fake:<seed> model id"
            ) from exc
        self._torch = torch
        loader = (
            nemo_asr.models.ASRModel.restore_from
            if model_id.endswith(".nemo")
            else nemo_asr.models.ASRModel.from_pretrained
        )
        self.model = loader(model_id).to(device).eval()
        joint = getattr(self.model, "joint", None)
        decoding = getattr(self.model, "decoding", None)
        durations = getattr(getattr(decoding, "decoding", None), "durations", None)
        if joint is None or not durations:
            raise BackendError(f"checkpoint {model_id!r} has no duration head; not a TDT model")
        self.durations = [int(d) for d in durations]
        self.vocab_size = int(self.model.tokenizer.vocab_size)
        self.d_model = int(joint.enc(self._dummy_enc()).shape[-1]) if callable(getattr(joint, "enc", None)) else 640
        self.device = device

    def _dummy_enc(self):
        torch = self._torch
        width = self.model.joint.enc.in_features
        return torch.zeros(1, width)

    def decode(self, samples: np.ndarray, sample_rate: int) -> RawDecode:
        torch = self._torch
        model = self.model
        with torch.no_grad():
            audio = torch.tensor(samples, dtype=torch.float32, device=self.device)[None, :]
            length = torch.tensor([audio.shape[1]], device=self.device)
            processed, processed_len = model.preprocessor(input_signal=audio, length=length)
            encoded, encoded_len = model.encoder(audio_signal=processed, length=processed_len)
            enc = encoded.transpose(1, 2)[0, : int(encoded_len[0])]  # (T, enc_dim)
            n_frames = enc.shape[0]

            blank_id = self.vocab_size
            tokens: list[DecodedToken] = []
            probs_rows, joint_rows = [], []
            hidden = None
            last_token = None
            frame_states = model.joint.enc(enc)  # (T, d_model)
            t = 0
            while t < n_frames:
                label = torch.tensor([[last_token if last_token is not None else blank_id]], device=self.device)
                dec_out, hidden_next = model.decoder.predict(label, hidden, add_sos=False)
                pred_state = model.joint.pred(dec_out[:, 0])  # (1, d_model)
                joint_in = frame_states[t : t + 1] + pred_state
                logits = model.joint.joint_net(joint_in[None])[0, 0]
                token_logits = logits[: blank_id + 1]
                duration_logits = logits[blank_id + 1 :]
                token = int(torch.argmax(token_logits))
                duration = self.durations[int(torch.argmax(duration_logits))]
                if token != blank_id:
                    dist = torch.softmax(token_logits[: self.vocab_size], dim=-1)
                    piece = model.tokenizer.ids_to_tokens([token])[0]
                    tokens.append(
                        DecodedToken(
                            token_id=token,
                            piece=piece,
                            emit_frame=t,
                            duration=min(max(duration, 0), 4),
                        )
                    )
                    probs_rows.append(dist.cpu().numpy())
                    joint_rows.append(joint_in[0].cpu().numpy())
                    last_token = token
                    hidden = hidden_next
                t += max(duration, 1) if token == blank_id else max(duration, 0) or 1

            probs = np.asarray(probs_rows) if probs_rows else np.zeros((0, self.vocab_size))
            joints = np.asarray(joint_rows) if joint_rows else np.zeros((0, frame_states.shape[-1]))
            return RawDecode(
                tokens=tokens,
                probs=probs,
                joints=joints,
                frame_embeddings=frame_states.cpu().numpy().astype(np.float32),
            )


def load_backend(model_id: str, device: str = "cpu"):
    if model_id.startswith("fake:"):
        seed = int(model_id.split(":", 1)[1] or 0)
        return FakeTdtBackend(seed=seed)
    return NemoTdtBackend(model_id, device=device)
