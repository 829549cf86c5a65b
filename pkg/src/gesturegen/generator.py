"""Multimodal chunked pose synthesis.

Per-frame text/audio/speaker/conditioning features plus an encoded seed window
drive a GRU + self-attention core whose window latents are decoded by the
frozen motion codec. Chunks are stitched with a deterministic overlap blend
against a constant-velocity extrapolation of the previous tail.
"""

from __future__ import annotations

import hashlib
import json
import wave as wave_module
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .apn import ApnModel, SeedFeatures, infer_seed_features
from .codec import MotionCodec, pad_window
from .conditioning import CondConfig, ConditioningModel
from .features import FeatureTimeline, WordToken, frame_range
from .motion import ChunkPlan, GenerationConfig, PoseSequence, chunk_plan

_WAV_TOLERANCE_S = 1.0 / 15.0 + 1e-6


@dataclass(frozen=True)
class Utterance:
    """Timed words plus optional waveform, labels and speaker identity."""

    duration_s: float
    words: tuple[WordToken, ...] = ()
    speaker_id: int = 0
    waveform: np.ndarray | None = None
    sample_rate: int | None = None
    timeline: FeatureTimeline | None = None

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        object.__setattr__(self, "words", tuple(self.words))
        for w in self.words:
            if not (0.0 <= w.start_s < w.end_s <= self.duration_s + 1e-6):
                raise ValueError(f"word {w.word!r} timing outside [0, {self.duration_s}]")
        if self.waveform is not None:
            if not self.sample_rate or self.sample_rate <= 0:
                raise ValueError("waveform requires a positive sample_rate")
            wav = np.asarray(self.waveform, dtype=np.float32).reshape(-1)
            object.__setattr__(self, "waveform", wav)
            wav_dur = wav.shape[0] / self.sample_rate
            if abs(wav_dur - self.duration_s) > _WAV_TOLERANCE_S:
                raise ValueError(
                    f"waveform duration {wav_dur:.3f}s deviates from {self.duration_s:.3f}s "
                    f"by more than one frame"
                )


def utterance_from_sample(sample, with_labels: bool = True) -> Utterance:
    """Corpus sample -> utterance (duck-typed: needs pose/timeline/words/speaker_id)."""
    return Utterance(
        duration_s=sample.pose.duration_s,
        words=sample.words,
        speaker_id=sample.speaker_id,
        timeline=sample.timeline if with_labels else None,
    )


def load_utterance(path) -> Utterance:
    from .features import load_timeline

    path = Path(path)
    d = json.loads(path.read_text())
    words = tuple(
        WordToken(w["w"], w.get("pos", ""), float(w["start"]), float(w["end"]))
        for w in d.get("words", ())
    )
    timeline = None
    if d.get("timeline_path"):
        timeline = load_timeline(path.parent / d["timeline_path"])
    waveform, sample_rate = None, None
    if d.get("wav_path"):
        waveform, sample_rate = read_wav(path.parent / d["wav_path"])
    return Utterance(
        duration_s=float(d["duration_s"]),
        words=words,
        speaker_id=int(d.get("speaker_id", 0)),
        waveform=waveform,
        sample_rate=sample_rate,
        timeline=timeline,
    )


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono 16-bit PCM WAV -> (float32 samples in [-1, 1], sample_rate)."""
    with wave_module.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        sr = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return samples, sr


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.asarray(samples, dtype=np.float32), -1.0, 1.0)
    with wave_module.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes((pcm * 32767.0).astype("<i2").tobytes())


def _word_vector(word: str, dim: int) -> np.ndarray:
    digest = b""
    seedb = word.lower().encode("utf-8")
    while len(digest) < dim:
        seedb = hashlib.sha256(seedb).digest()
        digest += seedb
    return (np.frombuffer(digest[:dim], dtype=np.uint8).astype(np.float32) / 127.5) - 1.0


def stub_text_encoder(words, frame_count: int, fps: float, dim: int = 16) -> np.ndarray:
    """Deterministic hash vectors spread over each word's frames; silence is zero."""
    out = np.zeros((frame_count, dim), dtype=np.float32)
    for w in words:
        i0, i1 = frame_range(w.start_s, w.end_s, fps, frame_count)
        if i1 > i0:
            out[i0:i1] += _word_vector(w.word, dim)
    return out


def stub_audio_encoder(
    waveform, sample_rate, frame_count: int, fps: float, bands: int = 4
) -> np.ndarray:
    """Per-frame log band energies plus a relative-rise onset flag; silence is zero."""
    out = np.zeros((frame_count, bands + 1), dtype=np.float32)
    if waveform is None:
        return out
    wav = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if wav.size == 0:
        return out
    if not sample_rate or sample_rate <= 0:
        raise ValueError("sample_rate must be > 0")
    totals = np.zeros(frame_count, dtype=np.float64)
    for i in range(frame_count):
        a = int(np.floor(i * sample_rate / fps))
        b = int(np.floor((i + 1) * sample_rate / fps))
        seg = wav[a : min(b, wav.size)]
        if seg.size == 0:
            continue
        spec = np.abs(np.fft.rfft(seg)) ** 2
        for k, band in enumerate(np.array_split(spec, bands)):
            out[i, k] = np.log1p(band.sum())
        totals[i] = float(np.mean(seg**2))
    peak = totals.max()
    if peak > 0:
        floor = 1e-4 * peak
        prev = np.concatenate([[0.0], totals[:-1]])
        # threshold on the relative rise, so rescaling the waveform keeps the flags
        out[:, bands] = ((totals > 1.5 * prev) & (totals > floor)).astype(np.float32)
    return out


class ModalityEncoder:
    """Interface: per-frame feature matrix for one input modality."""

    name: str = ""
    deterministic: bool = True

    def __init__(self, dim: int):
        self.dim = dim

    def encode(self, utterance: Utterance, frame_count: int, fps: float) -> np.ndarray:
        raise NotImplementedError


ENCODER_REGISTRY: dict[str, type] = {}


def register_encoder(name: str):
    def wrap(cls):
        cls.name = name
        ENCODER_REGISTRY[name] = cls
        return cls

    return wrap


@register_encoder("text-hash")
class TextHashEncoder(ModalityEncoder):
    def encode(self, utterance, frame_count, fps):
        return stub_text_encoder(utterance.words, frame_count, fps, self.dim)


@register_encoder("audio-energy")
class AudioEnergyEncoder(ModalityEncoder):
    def encode(self, utterance, frame_count, fps):
        return stub_audio_encoder(
            utterance.waveform, utterance.sample_rate, frame_count, fps, self.dim - 1
        )


@dataclass(frozen=True)
class GeneratorConfig:
    width: int = 96
    attn_layers: int = 2
    attn_heads: int = 4
    ffn: int = 128
    speaker_dim: int = 8
    n_speakers: int = 8
    text_dim: int = 16
    audio_bands: int = 4
    dropout: float = 0.05
    blend_frames: int = 4
    cond: CondConfig = field(default_factory=CondConfig)
    text_encoder: str = "text-hash"
    audio_encoder: str = "audio-energy"

    @property
    def audio_dim(self) -> int:
        return self.audio_bands + 1


class SelfAttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        if width % heads:
            raise ValueError("width must be divisible by heads")
        self.heads = heads
        self.ln1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.ln2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(
            nn.Linear(width, ffn), nn.GELU(), nn.Linear(ffn, width), nn.Dropout(dropout)
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        hd = c // self.heads
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        q = q.reshape(b, t, self.heads, hd).transpose(1, 2)
        k = k.reshape(b, t, self.heads, hd).transpose(1, 2)
        v = v.reshape(b, t, self.heads, hd).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / hd**0.5, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, c)
        x = x + self.drop(self.proj(y))
        return x + self.ff(self.ln2(x))


class GeneratorModel(nn.Module):
    """Fusion -> GRU -> self-attention -> per-window codec latents."""

    def __init__(self, cfg: GeneratorConfig, vocab_sizes, codec_dim: int, window_length: int):
        super().__init__()
        self.cfg = cfg
        self.codec_dim = codec_dim
        self.window_length = window_length
        self.conditioning = ConditioningModel(vocab_sizes, cfg.cond)
        self.speaker_table = nn.Embedding(cfg.n_speakers, cfg.speaker_dim)
        in_dim = codec_dim + cfg.text_dim + cfg.audio_dim + cfg.speaker_dim + cfg.cond.latent_dim + 1
        self.fusion = nn.Linear(in_dim, cfg.width)
        self.in_drop = nn.Dropout(cfg.dropout)
        self.gru = nn.GRU(cfg.width, cfg.width, batch_first=True)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(cfg.width, cfg.attn_heads, cfg.ffn, cfg.dropout)
            for _ in range(cfg.attn_layers)
        )
        self.out_head = nn.Linear(cfg.width, codec_dim)

    def set_dropout(self, p: float) -> None:
        for m in self.modules():
            if isinstance(m, nn.Dropout):
                m.p = p

    def forward(
        self,
        seed_latent: torch.Tensor,  # (B, D)
        text: torch.Tensor,  # (B, M+N, text_dim)
        audio: torch.Tensor,  # (B, M+N, audio_dim)
        speaker: torch.Tensor,  # (B,) long
        cond: torch.Tensor,  # (B, M+N, Z)
        seed_count: int,
        codec: MotionCodec,
    ) -> torch.Tensor:
        b, total, _ = text.shape
        n_emit = total - seed_count
        pose_feat = seed_latent.new_zeros(b, total, self.codec_dim)
        pose_feat[:, :seed_count] = seed_latent.unsqueeze(1)
        flag = text.new_zeros(b, total, 1)
        flag[:, :seed_count] = 1.0
        spk = self.speaker_table(speaker).unsqueeze(1).expand(b, total, -1)
        x = torch.cat([pose_feat, text, audio, spk, cond, flag], dim=-1)
        x = self.in_drop(self.fusion(x))
        x, _ = self.gru(x)
        for block in self.blocks:
            x = block(x)
        h = x[:, seed_count:]
        w = self.window_length
        n_win = (n_emit + w - 1) // w
        if n_win * w > n_emit:
            pad = h[:, -1:].expand(b, n_win * w - n_emit, -1)
            h = torch.cat([h, pad], dim=1)
        pooled = h.reshape(b, n_win, w, -1).mean(dim=2)
        latents = self.out_head(pooled)
        frames = codec.decode_latent(latents.reshape(b * n_win, -1))
        frames = frames.reshape(b, n_win * w, codec.skeleton.joint_count, 3)
        return frames[:, :n_emit]


@dataclass
class ChunkInputs:
    """Per-frame inputs over the seed + emit steps of one chunk (numpy)."""

    labels_cat: np.ndarray  # (M+N, 16) int
    labels_occ: np.ndarray  # (M+N,) float
    text: np.ndarray  # (M+N, text_dim)
    audio: np.ndarray  # (M+N, audio_dim)
    speaker_id: int = 0
    seed_features: SeedFeatures | None = None
    cond_mode: str = "deterministic"
    cond_noise: np.ndarray | None = None
    cond_override: np.ndarray | None = None


def build_cond_embedded(
    cond_model: ConditioningModel,
    labels_cat: torch.Tensor,
    labels_occ: torch.Tensor,
    seed_features,
    seed_count: int,
) -> torch.Tensor:
    """Embed hard labels; where aPN seed features exist, the first seed_count steps
    use probability-weighted expected embeddings instead."""
    embedded = cond_model.bank(labels_cat, labels_occ)
    if seed_features is None:
        return embedded
    feats = seed_features if isinstance(seed_features, (list, tuple)) else [seed_features]
    for i, sf in enumerate(feats):
        if sf is None:
            continue
        m = min(seed_count, sf.frame_count)
        probs = [torch.from_numpy(p[:m]) for p in sf.slot_probs]
        occ = torch.from_numpy(sf.occurrence[:m])
        embedded[i, :m] = cond_model.bank.expected(probs, occ)
    return embedded


def generate_chunk(
    seed_frames: np.ndarray,
    inputs: ChunkInputs,
    model: GeneratorModel,
    codec: MotionCodec,
    capture: dict | None = None,
) -> np.ndarray:
    """Seed window + per-frame inputs -> the chunk's new frames (deterministic given inputs)."""
    seed_frames = np.asarray(seed_frames, dtype=np.float32)
    if not np.isfinite(seed_frames).all():
        raise ValueError("seed frames contain non-finite values")
    for name in ("text", "audio", "labels_occ"):
        if not np.isfinite(getattr(inputs, name)).all():
            raise ValueError(f"chunk input {name!r} contains non-finite values")
    seed_count = seed_frames.shape[0]
    total = inputs.text.shape[0]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            window = seed_frames[-codec.window_length :]
            z = codec.encode_latent(torch.from_numpy(pad_window(window, codec.window_length)).unsqueeze(0))
            _, q, _ = codec.vq(z)
            labels = torch.from_numpy(np.asarray(inputs.labels_cat, dtype=np.int64)).unsqueeze(0)
            occ = torch.from_numpy(np.asarray(inputs.labels_occ, dtype=np.float32)).unsqueeze(0)
            embedded = build_cond_embedded(
                model.conditioning, labels, occ, [inputs.seed_features], seed_count
            )
            if capture is not None:
                capture["cond_input"] = embedded[0].numpy().copy()
            if inputs.cond_override is not None:
                cond = torch.from_numpy(np.asarray(inputs.cond_override, dtype=np.float32)).unsqueeze(0)
            else:
                noise = None
                if inputs.cond_noise is not None:
                    noise = torch.from_numpy(np.asarray(inputs.cond_noise, dtype=np.float32)).unsqueeze(0)
                latent = model.conditioning.from_embedded(embedded, inputs.cond_mode, noise)
                cond = latent.sample
            if capture is not None:
                capture["cond"] = cond[0].numpy().copy()
            text = torch.from_numpy(np.asarray(inputs.text, dtype=np.float32)).unsqueeze(0)
            audio = torch.from_numpy(np.asarray(inputs.audio, dtype=np.float32)).unsqueeze(0)
            speaker = torch.as_tensor([inputs.speaker_id], dtype=torch.long)
            frames = model(q, text, audio, speaker, cond, seed_count, codec)
        return frames[0].numpy().astype(np.float32)
    finally:
        if was_training:
            model.train()


def temporal_align(prev_tail: np.ndarray, new_chunk: np.ndarray, blend_frames: int = 4) -> np.ndarray:
    """Cross-fade the first blend_frames of new_chunk against a constant-velocity
    extrapolation of prev_tail, weights (A-i)/(A+1); later frames pass through."""
    new_chunk = np.asarray(new_chunk, dtype=np.float32).copy()
    if blend_frames <= 0 or len(prev_tail) == 0:
        return new_chunk
    tail = np.asarray(prev_tail, dtype=np.float32)
    last = tail[-1]
    velocity = tail[-1] - tail[-2] if tail.shape[0] >= 2 else np.zeros_like(last)
    a = min(blend_frames, new_chunk.shape[0])
    for i in range(a):
        w = (blend_frames - i) / (blend_frames + 1)
        extrapolated = last + (i + 1) * velocity
        new_chunk[i] = w * extrapolated + (1.0 - w) * new_chunk[i]
    return new_chunk


def _pad_slice(arr: np.ndarray, start: int, end: int) -> np.ndarray:
    """arr[start:end] with zero rows for indices outside [0, len(arr))."""
    out = np.zeros((end - start,) + arr.shape[1:], dtype=arr.dtype)
    lo, hi = max(start, 0), min(end, arr.shape[0])
    if hi > lo:
        out[lo - start : hi - start] = arr[lo:hi]
    return out


def generate(
    utterance: Utterance,
    cfg: GenerationConfig,
    model: GeneratorModel,
    codec: MotionCodec,
    apn: ApnModel | None = None,
    mode: str = "deterministic",
    seed: int = 0,
    align: bool = True,
    capture: dict | None = None,
) -> PoseSequence:
    """Chunked synthesis over the whole utterance; a pure function of
    (utterance, cfg, parameters, seed)."""
    if mode not in ("deterministic", "sample"):
        raise ValueError(f"mode must be 'deterministic' or 'sample', got {mode!r}")
    fps = cfg.fps
    total_frames = int(round(utterance.duration_s * fps))
    if total_frames < 1:
        raise ValueError("utterance shorter than one frame")
    if not 0 <= utterance.speaker_id < model.cfg.n_speakers:
        raise ValueError(
            f"speaker_id {utterance.speaker_id} outside [0, {model.cfg.n_speakers})"
        )
    skeleton = codec.skeleton
    plan = chunk_plan(total_frames, cfg)
    gcfg = model.cfg
    text_enc = ENCODER_REGISTRY[gcfg.text_encoder](gcfg.text_dim)
    audio_enc = ENCODER_REGISTRY[gcfg.audio_encoder](gcfg.audio_dim)
    text_full = text_enc.encode(utterance, total_frames, fps)
    audio_full = audio_enc.encode(utterance, total_frames, fps)
    timeline = utterance.timeline
    if timeline is not None and abs(timeline.fps - fps) > 1e-6:
        raise ValueError(f"timeline fps {timeline.fps} does not match generation fps {fps}")
    rng = torch.Generator().manual_seed(seed)
    zdim = model.cfg.cond.latent_dim
    rest = skeleton.rest_pose
    out = np.zeros((total_frames, skeleton.joint_count, 3), dtype=np.float32)
    for win in plan:
        m = win.seed_count
        n = cfg.chunk_frames
        if win.seed_start < 0:
            pad = np.tile(rest[None], (-win.seed_start, 1, 1))
            seed_frames = np.concatenate([pad, out[0 : win.seed_end]], axis=0)
        else:
            seed_frames = out[win.seed_start : win.seed_end]
        g0, g1 = win.seed_start, win.emit_start + n
        if timeline is not None:
            cat = np.full((g1 - g0, 16), -1, dtype=np.int64)
            occ = np.zeros(g1 - g0, dtype=np.float32)
            lo, hi = max(g0, 0), min(g1, timeline.frame_count)
            if hi > lo:
                cat[lo - g0 : hi - g0] = timeline.categorical[lo:hi]
                occ[lo - g0 : hi - g0] = timeline.occurrence[lo:hi]
            seed_features = None
        else:
            cat = np.full((g1 - g0, 16), -1, dtype=np.int64)
            occ = np.zeros(g1 - g0, dtype=np.float32)
            seed_features = None
            if apn is not None:
                seed_window = pad_window(
                    seed_frames[-codec.window_length :], codec.window_length
                )
                seed_features = infer_seed_features(seed_window, codec, apn)
        noise = None
        if mode == "sample":
            noise = torch.randn((g1 - g0, zdim), generator=rng).numpy()
        inputs = ChunkInputs(
            labels_cat=cat,
            labels_occ=occ,
            text=_pad_slice(text_full, g0, g1),
            audio=_pad_slice(audio_full, g0, g1),
            speaker_id=utterance.speaker_id,
            seed_features=seed_features,
            cond_mode=mode,
            cond_noise=noise,
        )
        chunk_out = generate_chunk(seed_frames, inputs, model, codec, capture=capture)
        if align:
            chunk_out = temporal_align(seed_frames, chunk_out, model.cfg.blend_frames)
        out[win.emit_start : win.emit_end] = chunk_out[: win.emit_count]
    return PoseSequence(skeleton=skeleton, fps=fps, frames=out)
