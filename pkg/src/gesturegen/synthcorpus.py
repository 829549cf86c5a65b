"""Procedural labeled gesture corpus with causal label -> motion mappings.

Each sequence picks an active hand; that hand's slot columns carry labels and
its arm oscillates, gated by the per-frame "Gesture Phase" envelope, scaled by
the "Movement Extent" factor, and lifted by the occurrence signal. The inactive
hand's slots are all -1 and its arm stays at rest pose plus small noise, so
label columns are causal for the motion by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import (
    ENTITY_GROUPS,
    FeatureSchema,
    FeatureTimeline,
    GESTURE_RELATIVE_POSITION,
    MOVEMENT_EXTENT_VOCAB,
    OCCURRENCE_SLOT,
    PHASE_VOCAB,
    POSITION_GROUPS,
    SPOKEN_ENTITY,
    SPOKEN_RELATIVE_POSITION,
    WordToken,
    _ENTITY_SYNONYMS,
    _POSITION_SYNONYMS,
    default_schema,
    frame_range,
    load_schema,
    load_timeline,
    occurrence_timeline,
    save_schema,
    save_timeline,
)
from .motion import (
    PoseSequence,
    Skeleton,
    default_skeleton,
    read_pose_sequence,
    write_pose_sequence,
)

_FILLER_WORDS = (
    ("the", "DET"), ("a", "DET"), ("we", "PRON"), ("you", "PRON"),
    ("go", "VERB"), ("walk", "VERB"), ("turn", "VERB"), ("see", "VERB"),
    ("and", "CCONJ"), ("then", "SCONJ"), ("it", "PRON"), ("there", "PRON"),
)

_STYLE_SLOT_NAMES = ("Gesture Phrase", "Hand Shape", "Wrist Position", "Gesture Practice")

_ARM_JOINTS = ("elbow", "wrist", "hand_base", "hand_mid", "hand_tip")


@dataclass(frozen=True)
class CorpusSpec:
    """Sizing and shaping knobs for the synthetic corpus."""

    skeleton: Skeleton = field(default_factory=default_skeleton)
    schema: FeatureSchema = field(default_factory=default_schema)
    n_sequences: int = 64
    fps: float = 15.0
    duration_range_s: tuple[float, float] = (4.0, 8.0)
    extent_factors: dict = field(
        default_factory=lambda: {"small": 0.5, "medium": 1.0, "large": 1.8}
    )
    base_amplitude_m: float = 0.14
    occurrence_lift_m: float = 0.08
    rest_noise_std_m: float = 0.0005
    n_speakers: int = 8
    style_slot_p: float = 0.5

    def __post_init__(self):
        if self.n_sequences < 1:
            raise ValueError("n_sequences must be >= 1 (empty corpus spec)")
        lo, hi = self.duration_range_s
        if not (0 < lo <= hi):
            raise ValueError("duration_range_s must satisfy 0 < min <= max")
        if not self.fps > 0:
            raise ValueError("fps must be > 0")
        if set(self.extent_factors) != set(MOVEMENT_EXTENT_VOCAB):
            raise ValueError(f"extent_factors keys must be {MOVEMENT_EXTENT_VOCAB}")
        if any(v <= 0 for v in self.extent_factors.values()):
            raise ValueError("extent factors must be positive")


@dataclass(frozen=True)
class CorpusSample:
    pose: PoseSequence
    timeline: FeatureTimeline
    words: tuple[WordToken, ...]
    speaker_id: int


def strip_labels(sample: CorpusSample) -> CorpusSample:
    """Unannotated twin of a sample (motion kept, timeline fully missing)."""
    return replace(sample, timeline=sample.timeline.strip())


def _phase_segments(duration_s: float, rng: np.random.Generator) -> list[tuple[str, float, float]]:
    """Alternating rest/stroke spans covering [0, duration); starts with rest."""
    segments = []
    t = 0.0
    kind = "rest"
    while t < duration_s:
        length = rng.uniform(0.6, 1.5) if kind == "rest" else rng.uniform(1.0, 2.2)
        end = min(t + length, duration_s)
        segments.append((kind, t, end))
        t = end
        kind = "stroke" if kind == "rest" else "rest"
    return segments


def _stroke_envelope(segments, n_frames: int, fps: float) -> np.ndarray:
    """0 during rest; ramps to 1 inside stroke spans (3-frame edges, never 0 inside)."""
    env = np.zeros(n_frames, dtype=np.float64)
    for kind, s, e in segments:
        if kind != "stroke":
            continue
        a, b = frame_range(s, e, fps, n_frames)
        length = b - a
        if length <= 0:
            continue
        ramp = min(3, (length + 1) // 2)
        k = np.arange(length, dtype=np.float64)
        env[a:b] = np.minimum(np.minimum((k + 1) / ramp, (length - k) / ramp), 1.0)
    return env


def synth_sequence(
    spec: CorpusSpec,
    rng: np.random.Generator,
    handedness: str | None = None,
    extent: str | None = None,
) -> CorpusSample:
    """One labeled sequence. All random draws happen in a fixed order before the
    handedness/extent overrides are applied, so overriding keeps every other
    drawn quantity identical for a given rng state."""
    schema = spec.schema
    skeleton = spec.skeleton
    fps = spec.fps

    duration_s = rng.uniform(*spec.duration_range_s)
    n_frames = max(1, int(round(duration_s * fps)))
    hand_draw = ("left", "right")[int(rng.integers(2))]
    extent_draw = MOVEMENT_EXTENT_VOCAB[int(rng.integers(len(MOVEMENT_EXTENT_VOCAB)))]
    osc_freq = rng.uniform(0.8, 1.6)
    osc_phase = rng.uniform(0.0, 2.0 * np.pi)
    segments = _phase_segments(duration_s, rng)
    style_on = rng.random(len(_STYLE_SLOT_NAMES)) < spec.style_slot_p
    style_values = {
        name: int(rng.integers(len(schema.slot_by_key(f"{name}/right").vocabulary)))
        for name in _STYLE_SLOT_NAMES
    }
    n_entity = int(rng.integers(1, 3))
    n_relpos = int(rng.integers(0, 2))
    entity_events = []
    for _ in range(n_entity):
        start = rng.uniform(0.2, max(0.21, duration_s - 1.2))
        length = rng.uniform(0.4, 0.9)
        group = int(rng.integers(len(ENTITY_GROUPS)))
        word_pick = int(rng.integers(2))
        entity_events.append((start, min(start + length, duration_s - 1e-3), group, word_pick))
    relpos_events = []
    for _ in range(n_relpos):
        start = rng.uniform(0.2, max(0.21, duration_s - 1.2))
        length = rng.uniform(0.4, 0.9)
        group = int(rng.integers(len(POSITION_GROUPS)))
        word_pick = int(rng.integers(2))
        pos_tag = ("ADJ", "ADV")[int(rng.integers(2))]
        relpos_events.append((start, min(start + length, duration_s - 1e-3), group, word_pick, pos_tag))
    n_fillers = int(duration_s / 0.7)
    filler_picks = rng.integers(len(_FILLER_WORDS), size=n_fillers)
    speaker_id = int(rng.integers(spec.n_speakers))
    noise = rng.normal(0.0, 1.0, size=(n_frames, len(_ARM_JOINTS), 3))

    if handedness is not None:
        if handedness not in ("left", "right"):
            raise ValueError(f"handedness must be 'left' or 'right', got {handedness!r}")
        hand_draw = handedness
    if extent is not None:
        if extent not in MOVEMENT_EXTENT_VOCAB:
            raise ValueError(f"extent must be one of {MOVEMENT_EXTENT_VOCAB}, got {extent!r}")
        extent_draw = extent

    active, inactive = hand_draw, ("left" if hand_draw == "right" else "right")
    prefix = {"left": "l_", "right": "r_"}

    t = np.arange(n_frames, dtype=np.float64) / fps
    env = _stroke_envelope(segments, n_frames, fps)
    all_events = [(s, e) for s, e, *_ in entity_events] + [(s, e) for s, e, *_ in relpos_events]
    occ = occurrence_timeline(all_events, duration_s, fps).astype(np.float64)

    theta = 2.0 * np.pi * osc_freq * t + osc_phase
    amp = spec.base_amplitude_m * spec.extent_factors[extent_draw]
    x_sign = 1.0 if active == "right" else -1.0
    offset = np.stack(
        [
            x_sign * amp * env * np.sin(theta),
            0.3 * amp * env * np.cos(theta),
            amp * env * (0.7 + 0.3 * np.sin(2.0 * theta)) + occ * spec.occurrence_lift_m,
        ],
        axis=1,
    )

    frames = np.tile(skeleton.rest_pose.astype(np.float64)[None, :, :], (n_frames, 1, 1))
    for name in _ARM_JOINTS:
        j = skeleton.joint(prefix[active] + name)
        scale = 0.5 if name == "elbow" else 1.0
        frames[:, j, :] += scale * offset
    for k, name in enumerate(_ARM_JOINTS):
        j = skeleton.joint(prefix[inactive] + name)
        frames[:, j, :] += spec.rest_noise_std_m * noise[:, k, :]
    sway = 0.008 * np.sin(2.0 * np.pi * 0.2 * t)
    for name, scale in (("spine", 0.5), ("neck", 0.8), ("head", 1.0)):
        frames[:, skeleton.joint(name), 0] += scale * sway

    cat = np.full((n_frames, 16), -1, dtype=np.int16)
    phase_col = schema.categorical_index("Gesture Phase", active)
    rest_idx = PHASE_VOCAB.index("rest")
    stroke_idx = PHASE_VOCAB.index("stroke")
    cat[:, phase_col] = rest_idx
    for kind, s, e in segments:
        if kind == "stroke":
            a, b = frame_range(s, e, fps, n_frames)
            cat[a:b, phase_col] = stroke_idx
    cat[:, schema.categorical_index("Movement Extent", active)] = MOVEMENT_EXTENT_VOCAB.index(
        extent_draw
    )
    for on, name in zip(style_on, _STYLE_SLOT_NAMES):
        if on:
            cat[:, schema.categorical_index(name, active)] = style_values[name]
    entity_col = schema.categorical_index(SPOKEN_ENTITY)
    for s, e, group, _ in entity_events:
        a, b = frame_range(s, e, fps, n_frames)
        cat[a:b, entity_col] = group
    relpos_col = schema.categorical_index(SPOKEN_RELATIVE_POSITION)
    grelpos_col = schema.categorical_index(GESTURE_RELATIVE_POSITION, active)
    for s, e, group, _, _ in relpos_events:
        a, b = frame_range(s, e, fps, n_frames)
        cat[a:b, relpos_col] = group
        cat[a:b, grelpos_col] = group

    words: list[WordToken] = []
    for i in range(n_fillers):
        start = 0.1 + 0.7 * i
        if start + 0.3 > duration_s:
            break
        w, pos = _FILLER_WORDS[int(filler_picks[i])]
        words.append(WordToken(w, pos, start, start + 0.3))
    for s, e, group, pick in entity_events:
        name = ENTITY_GROUPS[group]
        surface = name if pick == 0 else _ENTITY_SYNONYMS[name]
        words.append(WordToken(surface, "NOUN", s, min(s + 0.4, e)))
    for s, e, group, pick, pos_tag in relpos_events:
        name = POSITION_GROUPS[group]
        surface = name if pick == 0 else _POSITION_SYNONYMS[name]
        words.append(WordToken(surface, pos_tag, s, min(s + 0.4, e)))
    words.sort(key=lambda w: (w.start_s, w.word))

    pose = PoseSequence(skeleton=skeleton, fps=fps, frames=frames.astype(np.float32))
    timeline = FeatureTimeline(fps=fps, categorical=cat, occurrence=occ.astype(np.float32))
    timeline.validate_against(schema)
    return CorpusSample(pose=pose, timeline=timeline, words=tuple(words), speaker_id=speaker_id)


def synth_corpus(spec: CorpusSpec, seed: int) -> tuple[CorpusSample, ...]:
    """Deterministic labeled dataset: identical (spec, seed) give bit-identical output."""
    children = np.random.SeedSequence(seed).spawn(spec.n_sequences)
    return tuple(
        synth_sequence(spec, np.random.Generator(np.random.PCG64(child))) for child in children
    )


def save_corpus(samples, out_dir, schema: FeatureSchema) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_schema(schema, out / "schema.json")
    ids = []
    for i, sample in enumerate(samples):
        sid = f"{i:04d}"
        ids.append(sid)
        write_pose_sequence(sample.pose, out / f"{sid}.gpsq")
        save_timeline(sample.timeline, out / f"{sid}.timeline.json", schema)
        utt = {
            "schema_version": 1,
            "duration_s": sample.pose.duration_s,
            "speaker_id": sample.speaker_id,
            "words": [
                {"w": w.word, "pos": w.pos, "start": w.start_s, "end": w.end_s}
                for w in sample.words
            ],
            "timeline_path": f"{sid}.timeline.json",
            "wav_path": None,
        }
        (out / f"{sid}.utterance.json").write_text(json.dumps(utt, sort_keys=True) + "\n")
    index = {
        "schema_version": 1,
        "count": len(ids),
        "fps": samples[0].pose.fps if ids else None,
        "samples": ids,
    }
    (out / "corpus.json").write_text(json.dumps(index, sort_keys=True, indent=2) + "\n")


def load_corpus(corpus_dir) -> tuple[tuple[CorpusSample, ...], FeatureSchema]:
    root = Path(corpus_dir)
    index = json.loads((root / "corpus.json").read_text())
    schema = load_schema(root / "schema.json")
    samples = []
    for sid in index["samples"]:
        pose = read_pose_sequence(root / f"{sid}.gpsq")
        timeline = load_timeline(root / f"{sid}.timeline.json")
        utt = json.loads((root / f"{sid}.utterance.json").read_text())
        words = tuple(
            WordToken(w["w"], w.get("pos", ""), float(w["start"]), float(w["end"]))
            for w in utt["words"]
        )
        samples.append(
            CorpusSample(
                pose=pose, timeline=timeline, words=words, speaker_id=int(utt["speaker_id"])
            )
        )
    return tuple(samples), schema
