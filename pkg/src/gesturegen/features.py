"""Form/meaning label space and per-frame feature timelines from interval annotations.

The label space has 17 slots: 7 hand-specific groups per hand (14 slots),
two shared word-group slots, and one continuous occurrence slot. Interval
annotation tiers are rasterized to per-frame categorical indices (-1 where
no interval applies) plus the [0, 1] occurrence signal.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

HAND_GROUP_NAMES = (
    "Gesture Phase",
    "Gesture Phrase",
    "Gesture Relative Position",
    "Hand Shape",
    "Wrist Position",
    "Movement Extent",
    "Gesture Practice",
)
SPOKEN_ENTITY = "Spoken Entity"
SPOKEN_RELATIVE_POSITION = "Spoken Relative Position"
GESTURE_RELATIVE_POSITION = "Gesture Relative Position"
OCCURRENCE_SLOT = "Entity Occurrence"
SEMANTIC_SLOT_NAMES = (SPOKEN_ENTITY, SPOKEN_RELATIVE_POSITION, GESTURE_RELATIVE_POSITION)

PHASE_VOCAB = ("rest", "preparation", "stroke", "hold", "retraction")
PHRASE_VOCAB = ("iconic", "deictic", "beat", "discourse")
HAND_SHAPE_VOCAB = ("fist", "flat", "point", "cup", "spread")
WRIST_POSITION_VOCAB = ("center", "up", "down", "inward", "outward")
MOVEMENT_EXTENT_VOCAB = ("small", "medium", "large")
PRACTICE_VOCAB = ("indexing", "shaping", "drawing", "posturing", "counting")

# 18 noun groups and 13 adjective/adverb groups.
ENTITY_GROUPS = (
    "building", "church", "street", "tree", "car", "bridge", "tower", "door",
    "window", "river", "square", "statue", "fountain", "lamp", "sign", "roof",
    "stairs", "park",
)
POSITION_GROUPS = (
    "left", "right", "above", "below", "front", "behind", "beside",
    "between", "inside", "outside", "around", "across", "along",
)

# Two surface words per group; the group name itself is always one of them.
_ENTITY_SYNONYMS = {
    "building": "hall", "church": "chapel", "street": "road", "tree": "oak",
    "car": "vehicle", "bridge": "overpass", "tower": "spire", "door": "gate",
    "window": "pane", "river": "stream", "square": "plaza", "statue": "monument",
    "fountain": "well", "lamp": "lantern", "sign": "signpost", "roof": "rooftop",
    "stairs": "steps", "park": "garden",
}
_POSITION_SYNONYMS = {
    "left": "leftward", "right": "rightward", "above": "overhead", "below": "beneath",
    "front": "ahead", "behind": "rear", "beside": "adjacent", "between": "amid",
    "inside": "within", "outside": "outward", "around": "encircling",
    "across": "crosswise", "along": "lengthwise",
}

_NOUN_POS_PREFIXES = ("NOUN", "PROPN", "NN")
_POSITION_POS_PREFIXES = ("ADJ", "ADV", "JJ", "RB")


class SchemaError(ValueError):
    """An annotation value or schema file violates the feature schema."""


@dataclass(frozen=True)
class SlotSpec:
    name: str
    kind: str  # "categorical" | "continuous"
    hand: str  # "left" | "right" | "none"
    vocabulary: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous"):
            raise SchemaError(f"slot {self.name!r}: unknown kind {self.kind!r}")
        if self.hand not in ("left", "right", "none"):
            raise SchemaError(f"slot {self.name!r}: unknown hand {self.hand!r}")
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        if self.kind == "categorical":
            if not self.vocabulary:
                raise SchemaError(f"slot {self.name!r}: empty vocabulary")
            if len(set(self.vocabulary)) != len(self.vocabulary):
                raise SchemaError(f"slot {self.name!r}: duplicate vocabulary entries")

    @property
    def key(self) -> str:
        """Unique tier/timeline key, e.g. 'Gesture Phase/right' or 'Spoken Entity'."""
        return self.name if self.hand == "none" else f"{self.name}/{self.hand}"

    @property
    def is_semantic(self) -> bool:
        return self.name in SEMANTIC_SLOT_NAMES


@dataclass(frozen=True)
class FeatureSchema:
    """The 17-slot label space: 16 categorical slots plus one continuous slot."""

    slots: tuple[SlotSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if len(self.slots) != 17:
            raise SchemaError(f"schema must have 17 slots, got {len(self.slots)}")
        continuous = [s for s in self.slots if s.kind == "continuous"]
        if len(continuous) != 1 or continuous[0].name != OCCURRENCE_SLOT:
            raise SchemaError(f"schema needs exactly one continuous slot named {OCCURRENCE_SLOT!r}")
        cats = self.categorical_slots
        if len(cats) != 16:
            raise SchemaError("schema must have 16 categorical slots")
        keys = [s.key for s in self.slots]
        if len(set(keys)) != len(keys):
            raise SchemaError("duplicate slot keys")
        for name in HAND_GROUP_NAMES:
            hands = sorted(s.hand for s in cats if s.name == name)
            if hands != ["left", "right"]:
                raise SchemaError(f"group {name!r} must appear once per hand")
        for name in (SPOKEN_ENTITY, SPOKEN_RELATIVE_POSITION):
            found = [s for s in cats if s.name == name]
            if len(found) != 1 or found[0].hand != "none":
                raise SchemaError(f"{name!r} must appear once without hand")
        if len(self.slot_by_key(SPOKEN_ENTITY).vocabulary) != 18:
            raise SchemaError(f"{SPOKEN_ENTITY!r} vocabulary must have 18 entries")
        if len(self.slot_by_key(SPOKEN_RELATIVE_POSITION).vocabulary) != 13:
            raise SchemaError(f"{SPOKEN_RELATIVE_POSITION!r} vocabulary must have 13 entries")

    @property
    def categorical_slots(self) -> tuple[SlotSpec, ...]:
        return tuple(s for s in self.slots if s.kind == "categorical")

    @property
    def categorical_keys(self) -> tuple[str, ...]:
        return tuple(s.key for s in self.categorical_slots)

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return tuple(len(s.vocabulary) for s in self.categorical_slots)

    def slot_by_key(self, key: str) -> SlotSpec:
        for s in self.slots:
            if s.key == key:
                return s
        raise KeyError(key)

    def categorical_index(self, name: str, hand: str = "none") -> int:
        """Column of a categorical slot in FeatureTimeline.categorical."""
        for i, s in enumerate(self.categorical_slots):
            if s.name == name and s.hand == hand:
                return i
        raise KeyError((name, hand))

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "slots": [
                {"name": s.name, "kind": s.kind, "hand": s.hand, "vocabulary": list(s.vocabulary)}
                for s in self.slots
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            slots=tuple(
                SlotSpec(s["name"], s["kind"], s["hand"], tuple(s.get("vocabulary", ())))
                for s in d["slots"]
            )
        )


def default_schema() -> FeatureSchema:
    """Right-hand slots first, then left, then shared slots, occurrence last."""
    group_vocab = {
        "Gesture Phase": PHASE_VOCAB,
        "Gesture Phrase": PHRASE_VOCAB,
        "Gesture Relative Position": POSITION_GROUPS,
        "Hand Shape": HAND_SHAPE_VOCAB,
        "Wrist Position": WRIST_POSITION_VOCAB,
        "Movement Extent": MOVEMENT_EXTENT_VOCAB,
        "Gesture Practice": PRACTICE_VOCAB,
    }
    slots = []
    for hand in ("right", "left"):
        for name in HAND_GROUP_NAMES:
            slots.append(SlotSpec(name, "categorical", hand, group_vocab[name]))
    slots.append(SlotSpec(SPOKEN_ENTITY, "categorical", "none", ENTITY_GROUPS))
    slots.append(SlotSpec(SPOKEN_RELATIVE_POSITION, "categorical", "none", POSITION_GROUPS))
    slots.append(SlotSpec(OCCURRENCE_SLOT, "continuous", "none"))
    return FeatureSchema(slots=tuple(slots))


def load_schema(path) -> FeatureSchema:
    return FeatureSchema.from_json_dict(json.loads(Path(path).read_text()))


def save_schema(schema: FeatureSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_json_dict(), sort_keys=True, indent=2) + "\n")


@dataclass(frozen=True)
class WordToken:
    word: str
    pos: str
    start_s: float
    end_s: float


@dataclass(frozen=True)
class Interval:
    start_s: float
    end_s: float
    value: str


@dataclass(frozen=True)
class AnnotationDoc:
    """Interval tiers plus timed word tokens for one utterance."""

    duration_s: float
    tiers: Mapping[str, tuple[Interval, ...]]
    words: tuple[WordToken, ...] = ()

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        tiers = {name: tuple(sorted(ivs, key=lambda iv: iv.start_s)) for name, ivs in self.tiers.items()}
        for name, ivs in tiers.items():
            prev_end = 0.0
            for iv in ivs:
                if not (0.0 <= iv.start_s < iv.end_s <= self.duration_s + 1e-9):
                    raise ValueError(
                        f"tier {name!r}: interval [{iv.start_s}, {iv.end_s}] outside "
                        f"[0, {self.duration_s}] or empty"
                    )
                if iv.start_s < prev_end - 1e-9:
                    raise ValueError(f"tier {name!r}: overlapping intervals at {iv.start_s}s")
                prev_end = iv.end_s
        object.__setattr__(self, "tiers", tiers)
        object.__setattr__(self, "words", tuple(self.words))
        for w in self.words:
            if not (0.0 <= w.start_s < w.end_s <= self.duration_s + 1e-9):
                raise ValueError(f"word {w.word!r}: timing outside [0, {self.duration_s}]")

    def to_json_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "tiers": {
                name: [{"start": iv.start_s, "end": iv.end_s, "value": iv.value} for iv in ivs]
                for name, ivs in self.tiers.items()
            },
            "words": [
                {"w": w.word, "pos": w.pos, "start": w.start_s, "end": w.end_s}
                for w in self.words
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AnnotationDoc":
        return cls(
            duration_s=float(d["duration_s"]),
            tiers={
                name: tuple(Interval(float(iv["start"]), float(iv["end"]), str(iv["value"])) for iv in ivs)
                for name, ivs in d.get("tiers", {}).items()
            },
            words=tuple(
                WordToken(str(w["w"]), str(w.get("pos", "")), float(w["start"]), float(w["end"]))
                for w in d.get("words", ())
            ),
        )


def load_annotation_doc(path) -> AnnotationDoc:
    return AnnotationDoc.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GroupLexicon:
    """word -> group maps; nouns feed entity slots, adjectives/adverbs feed position slots."""

    nouns: Mapping[str, str]
    positions: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "nouns", dict(self.nouns))
        object.__setattr__(self, "positions", dict(self.positions))

    def validate_against(self, schema: FeatureSchema) -> None:
        entity_vocab = set(schema.slot_by_key(SPOKEN_ENTITY).vocabulary)
        position_vocab = set(schema.slot_by_key(SPOKEN_RELATIVE_POSITION).vocabulary)
        for word, group in self.nouns.items():
            if group not in entity_vocab:
                raise SchemaError(f"lexicon noun {word!r} maps to unknown group {group!r}")
        for word, group in self.positions.items():
            if group not in position_vocab:
                raise SchemaError(f"lexicon position word {word!r} maps to unknown group {group!r}")

    def to_json_dict(self) -> dict:
        return {"schema_version": 1, "nouns": dict(self.nouns), "positions": dict(self.positions)}

    @classmethod
    def from_json_dict(cls, d: dict) -> "GroupLexicon":
        return cls(nouns=d.get("nouns", {}), positions=d.get("positions", {}))


def default_lexicon() -> GroupLexicon:
    nouns = {}
    for group in ENTITY_GROUPS:
        nouns[group] = group
        nouns[_ENTITY_SYNONYMS[group]] = group
    positions = {}
    for group in POSITION_GROUPS:
        positions[group] = group
        positions[_POSITION_SYNONYMS[group]] = group
    return GroupLexicon(nouns=nouns, positions=positions)


def load_lexicon(path) -> GroupLexicon:
    return GroupLexicon.from_json_dict(json.loads(Path(path).read_text()))


def save_lexicon(lexicon: GroupLexicon, path) -> None:
    Path(path).write_text(json.dumps(lexicon.to_json_dict(), sort_keys=True, indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class FeatureTimeline:
    """Per-frame label state: 16 categorical indices (-1 missing) + occurrence in [0, 1]."""

    fps: float
    categorical: np.ndarray  # (F, 16) int16
    occurrence: np.ndarray  # (F,) float32

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError("fps must be > 0")
        cat = np.asarray(self.categorical, dtype=np.int16)
        occ = np.asarray(self.occurrence, dtype=np.float32)
        if cat.ndim != 2 or cat.shape[1] != 16:
            raise ValueError(f"categorical must have shape (F, 16), got {cat.shape}")
        if occ.shape != (cat.shape[0],):
            raise ValueError("occurrence length must match categorical frame count")
        if (cat < -1).any():
            raise ValueError("categorical values must be >= -1")
        if occ.size and (occ.min() < -1e-6 or occ.max() > 1 + 1e-6):
            raise ValueError("occurrence values must lie in [0, 1]")
        cat = np.ascontiguousarray(cat)
        occ = np.clip(occ, 0.0, 1.0)
        cat.flags.writeable = False
        occ.flags.writeable = False
        object.__setattr__(self, "categorical", cat)
        object.__setattr__(self, "occurrence", occ)

    @property
    def frame_count(self) -> int:
        return int(self.categorical.shape[0])

    @classmethod
    def all_missing(cls, n_frames: int, fps: float) -> "FeatureTimeline":
        return cls(
            fps=fps,
            categorical=np.full((n_frames, 16), -1, dtype=np.int16),
            occurrence=np.zeros(n_frames, dtype=np.float32),
        )

    def validate_against(self, schema: FeatureSchema) -> None:
        sizes = np.asarray(schema.vocab_sizes, dtype=np.int16)
        if (self.categorical >= sizes[None, :]).any():
            raise SchemaError("categorical value exceeds schema vocabulary size")

    def slice_frames(self, start: int, end: int) -> "FeatureTimeline":
        return FeatureTimeline(
            fps=self.fps,
            categorical=self.categorical[start:end].copy(),
            occurrence=self.occurrence[start:end].copy(),
        )

    def substitute(self, column: int, value: int, only_labeled: bool = True) -> "FeatureTimeline":
        """Replace one categorical column with `value` (on labeled frames by default)."""
        cat = self.categorical.copy()
        if only_labeled:
            mask = cat[:, column] >= 0
        else:
            mask = np.ones(cat.shape[0], dtype=bool)
        cat[mask, column] = value
        return FeatureTimeline(fps=self.fps, categorical=cat, occurrence=self.occurrence.copy())

    def strip(self) -> "FeatureTimeline":
        return FeatureTimeline.all_missing(self.frame_count, self.fps)

    def to_json_dict(self, schema: FeatureSchema | None = None) -> dict:
        d = {
            "schema_version": 1,
            "fps": self.fps,
            "categorical": self.categorical.tolist(),
            "occurrence": [float(v) for v in self.occurrence],
        }
        if schema is not None:
            d["slot_keys"] = list(schema.categorical_keys)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "FeatureTimeline":
        return cls(
            fps=float(d["fps"]),
            categorical=np.asarray(d["categorical"], dtype=np.int16),
            occurrence=np.asarray(d["occurrence"], dtype=np.float32),
        )


def load_timeline(path) -> FeatureTimeline:
    return FeatureTimeline.from_json_dict(json.loads(Path(path).read_text()))


def save_timeline(timeline: FeatureTimeline, path, schema: FeatureSchema | None = None) -> None:
    Path(path).write_text(json.dumps(timeline.to_json_dict(schema), sort_keys=True) + "\n")


def frame_count_for(duration_s: float, fps: float) -> int:
    return max(1, int(round(duration_s * fps)))


def frame_range(start_s: float, end_s: float, fps: float, n_frames: int) -> tuple[int, int]:
    """Frames i whose timestamp i/fps lies in [start_s, end_s), clipped to [0, n_frames)."""
    i0 = int(np.ceil(start_s * fps - 1e-6))
    i1 = int(np.ceil(end_s * fps - 1e-6))
    return max(0, i0), min(n_frames, max(i1, 0))


def occurrence_timeline(
    events: Sequence[tuple[float, float]],
    duration_s: float,
    fps: float,
    rise_s: float = 2.0,
    fall_s: float = 2.0,
) -> np.ndarray:
    """[0,1] signal per frame: linear rise over rise_s before each event, hold at 1,
    linear fall over fall_s after; overlapping events combine by per-frame maximum."""
    if not fps > 0:
        raise ValueError("fps must be > 0")
    n = frame_count_for(duration_s, fps)
    t = np.arange(n, dtype=np.float64) / fps
    out = np.zeros(n, dtype=np.float64)
    for start_s, end_s in events:
        if not (0.0 <= start_s < end_s <= duration_s + 1e-9):
            raise ValueError(
                f"event [{start_s}, {end_s}] outside [0, {duration_s}] or empty"
            )
        rise = np.clip((t - (start_s - rise_s)) / rise_s, 0.0, 1.0) if rise_s > 0 else (t >= start_s - 1e-12).astype(np.float64)
        fall = np.clip(1.0 - (t - end_s) / fall_s, 0.0, 1.0) if fall_s > 0 else (t <= end_s + 1e-12).astype(np.float64)
        out = np.maximum(out, np.minimum(rise, fall))
    return out.astype(np.float32)


def window_majority(candidates: Iterable) -> object | None:
    """Strict plurality winner; None on empty input or a tie among top counts."""
    counts = Counter(candidates)
    if not counts:
        return None
    ranked = counts.most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return None
    return ranked[0][0]


def _pos_matches(pos: str, prefixes: tuple[str, ...]) -> bool:
    pos = pos.upper()
    return any(pos.startswith(p) for p in prefixes)


def classify_semantic_label(
    event: tuple[float, float, SlotSpec],
    doc: AnnotationDoc,
    lexicon: GroupLexicon,
) -> str | None:
    """Majority group of lexicon hits among words within 1 s of the event; None = abstain."""
    start_s, end_s, slot = event
    if slot.name == SPOKEN_ENTITY:
        table, prefixes = lexicon.nouns, _NOUN_POS_PREFIXES
    else:
        table, prefixes = lexicon.positions, _POSITION_POS_PREFIXES
    lo, hi = start_s - 1.0, end_s + 1.0
    groups = []
    for w in doc.words:
        if w.end_s <= lo or w.start_s >= hi:
            continue
        if not _pos_matches(w.pos, prefixes):
            continue
        group = table.get(w.word.lower())
        if group is not None:
            groups.append(group)
    return window_majority(groups)


def feature_timeline(
    doc: AnnotationDoc,
    schema: FeatureSchema,
    lexicon: GroupLexicon,
    fps: float,
) -> FeatureTimeline:
    """Rasterize annotation tiers onto frames.

    Semantic slots ("Spoken Entity", "Spoken Relative Position", "Gesture
    Relative Position") classify each event through the lexicon and drop it on
    abstention; all their raw events feed the occurrence ramp. Other tiers must
    use values from the slot vocabulary.
    """
    n = frame_count_for(doc.duration_s, fps)
    cat = np.full((n, 16), -1, dtype=np.int16)
    known_keys = set(schema.categorical_keys) | {OCCURRENCE_SLOT}
    for name in doc.tiers:
        if name not in known_keys:
            warnings.warn(f"ignoring tier {name!r}: no matching schema slot")
    semantic_events: list[tuple[float, float]] = []
    for col, slot in enumerate(schema.categorical_slots):
        intervals = doc.tiers.get(slot.key, ())
        for iv in intervals:
            if slot.is_semantic:
                semantic_events.append((iv.start_s, iv.end_s))
                group = classify_semantic_label((iv.start_s, iv.end_s, slot), doc, lexicon)
                if group is None:
                    continue  # unclassifiable event dropped from the labels
                value = slot.vocabulary.index(group)
            else:
                if iv.value not in slot.vocabulary:
                    raise SchemaError(
                        f"tier {slot.key!r} at {iv.start_s}s: value {iv.value!r} "
                        f"not in vocabulary {slot.vocabulary}"
                    )
                value = slot.vocabulary.index(iv.value)
            i0, i1 = frame_range(iv.start_s, iv.end_s, fps, n)
            cat[i0:i1, col] = value
    occ = occurrence_timeline(semantic_events, doc.duration_s, fps)
    if occ.shape[0] != n:
        occ = np.resize(occ, n)
    return FeatureTimeline(fps=fps, categorical=cat, occurrence=occ)
