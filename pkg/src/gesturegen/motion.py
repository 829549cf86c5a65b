"""Skeleton and pose-sequence data model: chunk arithmetic, resampling, binary IO.

Coordinates are root-relative meters. Axis convention: x lateral (subject's
right is +x), y depth (forward is +y), z up.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GPSQ_MAGIC = b"GPSQ1"
GPSQ_VERSION = 1
_GPSQ_HEADER = struct.Struct("<5sBIIf")  # magic, version, joint_count, frame_count, fps

HANDEDNESS_TAGS = ("left", "right", "center")


class FormatError(ValueError):
    """A .gpsq file or its sidecar violates the expected binary layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint tree with per-joint handedness tags and a rest pose.

    parent_index uses -1 for the single root; handedness is one of
    "left" / "right" / "center" per joint.
    """

    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]
    handedness: tuple[str, ...]
    rest_pose: np.ndarray  # (J, 3) float32

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parent_index", tuple(int(p) for p in self.parent_index))
        object.__setattr__(self, "handedness", tuple(self.handedness))
        n = len(self.joint_names)
        if n < 1:
            raise ValueError("skeleton needs at least one joint")
        if len(self.parent_index) != n or len(self.handedness) != n:
            raise ValueError("joint_names, parent_index and handedness must have equal length")
        roots = [i for i, p in enumerate(self.parent_index) if p == -1]
        if len(roots) != 1:
            raise ValueError(f"skeleton must have exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parent_index):
            if p != -1 and not (0 <= p < n):
                raise ValueError(f"joint {i}: parent index {p} out of range")
            if p == i:
                raise ValueError(f"joint {i} is its own parent")
        for i in range(n):
            j, hops = i, 0
            while self.parent_index[j] != -1:
                j = self.parent_index[j]
                hops += 1
                if hops > n:
                    raise ValueError("parent_index contains a cycle")
        for i, h in enumerate(self.handedness):
            if h not in HANDEDNESS_TAGS:
                raise ValueError(f"joint {i}: handedness {h!r} not in {HANDEDNESS_TAGS}")
        rest = np.asarray(self.rest_pose, dtype=np.float32)
        if rest.shape != (n, 3):
            raise ValueError(f"rest_pose must have shape ({n}, 3), got {rest.shape}")
        if not np.isfinite(rest).all():
            raise ValueError("rest_pose contains non-finite values")
        object.__setattr__(self, "rest_pose", _freeze(rest))

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def root_index(self) -> int:
        return self.parent_index.index(-1)

    def joint(self, name: str) -> int:
        return self.joint_names.index(name)

    def joints_for_hand(self, hand: str) -> tuple[int, ...]:
        return tuple(i for i, h in enumerate(self.handedness) if h == hand)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Skeleton):
            return NotImplemented
        return (
            self.joint_names == other.joint_names
            and self.parent_index == other.parent_index
            and self.handedness == other.handedness
            and np.array_equal(self.rest_pose, other.rest_pose)
        )

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "joint_names": list(self.joint_names),
            "parent_index": list(self.parent_index),
            "handedness_map": list(self.handedness),
            "rest_pose": [[float(v) for v in row] for row in self.rest_pose],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Skeleton":
        return cls(
            joint_names=tuple(d["joint_names"]),
            parent_index=tuple(d["parent_index"]),
            handedness=tuple(d["handedness_map"]),
            rest_pose=np.asarray(d["rest_pose"], dtype=np.float32),
        )


def load_skeleton(path) -> Skeleton:
    return Skeleton.from_json_dict(json.loads(Path(path).read_text()))


def save_skeleton(skeleton: Skeleton, path) -> None:
    Path(path).write_text(json.dumps(skeleton.to_json_dict(), sort_keys=True, indent=2) + "\n")


def default_skeleton() -> Skeleton:
    """16-joint upper-body skeleton: torso/head chain plus two arms with 3 hand points."""
    spec = [
        # name, parent, hand, rest position (x right, y forward, z up)
        ("root", -1, "center", (0.0, 0.0, 0.0)),
        ("spine", 0, "center", (0.0, 0.0, 0.25)),
        ("neck", 1, "center", (0.0, 0.0, 0.50)),
        ("head", 2, "center", (0.0, 0.0, 0.65)),
        ("r_shoulder", 2, "right", (0.18, 0.0, 0.45)),
        ("r_elbow", 4, "right", (0.22, 0.0, 0.22)),
        ("r_wrist", 5, "right", (0.24, 0.02, 0.02)),
        ("r_hand_base", 6, "right", (0.24, 0.03, -0.03)),
        ("r_hand_mid", 7, "right", (0.24, 0.04, -0.06)),
        ("r_hand_tip", 8, "right", (0.24, 0.05, -0.09)),
        ("l_shoulder", 2, "left", (-0.18, 0.0, 0.45)),
        ("l_elbow", 10, "left", (-0.22, 0.0, 0.22)),
        ("l_wrist", 11, "left", (-0.24, 0.02, 0.02)),
        ("l_hand_base", 12, "left", (-0.24, 0.03, -0.03)),
        ("l_hand_mid", 13, "left", (-0.24, 0.04, -0.06)),
        ("l_hand_tip", 14, "left", (-0.24, 0.05, -0.09)),
    ]
    return Skeleton(
        joint_names=tuple(s[0] for s in spec),
        parent_index=tuple(s[1] for s in spec),
        handedness=tuple(s[2] for s in spec),
        rest_pose=np.array([s[3] for s in spec], dtype=np.float32),
    )


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Frames x joints x 3 root-relative coordinates at a fixed sampling rate."""

    skeleton: Skeleton
    fps: float
    frames: np.ndarray  # (F, J, 3) float32

    def __post_init__(self):
        fps = float(self.fps)
        if not (fps > 0) or not np.isfinite(fps):
            raise ValueError(f"fps must be positive and finite, got {fps}")
        object.__setattr__(self, "fps", fps)
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 3 or frames.shape[1] != self.skeleton.joint_count or frames.shape[2] != 3:
            raise ValueError(
                f"frames must have shape (F, {self.skeleton.joint_count}, 3), got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise ValueError("pose sequence needs at least one frame")
        if not np.isfinite(frames).all():
            bad = np.argwhere(~np.isfinite(frames))[0]
            raise ValueError(
                f"non-finite coordinate at frame {bad[0]}, joint {bad[1]}, axis {bad[2]}"
            )
        object.__setattr__(self, "frames", _freeze(frames))

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps


def rest_sequence(skeleton: Skeleton, n_frames: int, fps: float) -> PoseSequence:
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    frames = np.tile(skeleton.rest_pose[None, :, :], (n_frames, 1, 1))
    return PoseSequence(skeleton=skeleton, fps=fps, frames=frames)


@dataclass(frozen=True)
class GenerationConfig:
    """Chunked-synthesis sizing: seed frame count, new frames per chunk, sampling rate."""

    seed_frames: int = 4
    chunk_frames: int = 30
    fps: float = 15.0

    def __post_init__(self):
        if self.seed_frames < 1:
            raise ValueError("seed_frames must be >= 1")
        if self.chunk_frames < 1:
            raise ValueError("chunk_frames must be >= 1")
        if not self.fps > 0:
            raise ValueError("fps must be > 0")


@dataclass(frozen=True)
class ChunkWindow:
    """Seed window and emitted window of one chunk, in absolute frame indices.

    Negative seed indices denote rest-pose padding before the first frame
    (chunk 0 is seeded by rest pose).
    """

    seed_start: int
    seed_end: int
    emit_start: int
    emit_end: int

    @property
    def emit_count(self) -> int:
        return self.emit_end - self.emit_start

    @property
    def seed_count(self) -> int:
        return self.seed_end - self.seed_start


@dataclass(frozen=True)
class ChunkPlan:
    windows: tuple[ChunkWindow, ...]
    total_frames: int
    seed_frames: int

    def __iter__(self):
        return iter(self.windows)

    def __len__(self):
        return len(self.windows)


def chunk_plan(total_frames: int, cfg: GenerationConfig) -> ChunkPlan:
    """Tile [0, total_frames) into chunks of cfg.chunk_frames emitted frames.

    Chunk k emits [k*N, min((k+1)*N, total)); each chunk's seed window is the
    M frames immediately before its emit window (rest pose where indices are
    negative). The final chunk is truncated, never padded.
    """
    if total_frames < 1:
        raise ValueError(f"total_frames must be >= 1, got {total_frames}")
    windows = []
    for start in range(0, total_frames, cfg.chunk_frames):
        end = min(start + cfg.chunk_frames, total_frames)
        windows.append(ChunkWindow(start - cfg.seed_frames, start, start, end))
    return ChunkPlan(tuple(windows), total_frames, cfg.seed_frames)


def resample(seq: PoseSequence, target_fps: float) -> PoseSequence:
    """Linear per-coordinate resampling; preserves duration within one output frame.

    A single-frame input (or sampling beyond the last source frame) repeats
    the boundary frame rather than erroring.
    """
    target_fps = float(target_fps)
    if not target_fps > 0:
        raise ValueError("target_fps must be > 0")
    src = seq.frames
    n_out = max(1, int(round(seq.frame_count * target_fps / seq.fps)))
    step = seq.fps / target_fps
    pos = np.arange(n_out) * step
    pos = np.clip(pos, 0.0, seq.frame_count - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, seq.frame_count - 1)
    w = (pos - lo).astype(np.float32)[:, None, None]
    frames = (1.0 - w) * src[lo] + w * src[hi]
    return PoseSequence(skeleton=seq.skeleton, fps=target_fps, frames=frames)


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_pose_sequence(seq: PoseSequence, path) -> None:
    """Write the GPSQ binary plus a skeleton sidecar JSON at <path>.json."""
    path = Path(path)
    header = _GPSQ_HEADER.pack(
        GPSQ_MAGIC, GPSQ_VERSION, seq.skeleton.joint_count, seq.frame_count, seq.fps
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
    save_skeleton(seq.skeleton, _sidecar_path(path))


def _chain_skeleton(joint_count: int) -> Skeleton:
    return Skeleton(
        joint_names=tuple(f"joint{i}" for i in range(joint_count)),
        parent_index=tuple([-1] + list(range(joint_count - 1))),
        handedness=("center",) * joint_count,
        rest_pose=np.zeros((joint_count, 3), dtype=np.float32),
    )


def read_pose_sequence(path) -> PoseSequence:
    """Read a GPSQ file; the sidecar JSON supplies the skeleton when present."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _GPSQ_HEADER.size:
        raise FormatError(
            f"truncated header: {len(data)} bytes, need {_GPSQ_HEADER.size}", offset=len(data)
        )
    magic, version, joint_count, frame_count, fps = _GPSQ_HEADER.unpack_from(data, 0)
    if magic != GPSQ_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GPSQ_MAGIC!r}", offset=0)
    if version != GPSQ_VERSION:
        raise FormatError(f"unsupported version {version}", offset=5)
    if joint_count < 1:
        raise FormatError("joint_count must be >= 1", offset=6)
    if frame_count < 1:
        raise FormatError("frame_count must be >= 1", offset=10)
    if not (fps > 0) or not np.isfinite(fps):
        raise FormatError(f"invalid fps {fps}", offset=14)
    expected = _GPSQ_HEADER.size + frame_count * joint_count * 3 * 4
    if len(data) < expected:
        raise FormatError(
            f"truncated payload: {len(data)} bytes, expected {expected}", offset=len(data)
        )
    if len(data) > expected:
        raise FormatError(f"trailing bytes after payload of {expected} bytes", offset=expected)
    flat = np.frombuffer(data, dtype="<f4", offset=_GPSQ_HEADER.size)
    frames = flat.reshape(frame_count, joint_count, 3)
    bad = np.argwhere(~np.isfinite(frames))
    if bad.size:
        f, j, a = (int(v) for v in bad[0])
        offset = _GPSQ_HEADER.size + ((f * joint_count + j) * 3 + a) * 4
        raise FormatError(
            f"non-finite value at frame {f}, joint {j}, axis {a}", offset=offset
        )
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        skeleton = load_skeleton(sidecar)
        if skeleton.joint_count != joint_count:
            raise FormatError(
                f"sidecar skeleton has {skeleton.joint_count} joints, file has {joint_count}",
                offset=6,
            )
    else:
        warnings.warn(f"no skeleton sidecar at {sidecar}; using a generic chain skeleton")
        skeleton = _chain_skeleton(joint_count)
    return PoseSequence(skeleton=skeleton, fps=float(fps), frames=frames.copy())
