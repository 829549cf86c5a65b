"""Seed-label prediction: codec ID of the seed window -> per-frame slot distributions.

Used at chunk onsets to fill in conditioning labels when no timeline is
available, so gestures keep their character across chunk boundaries instead of
collapsing back to rest pose.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import MotionCodec, pad_window
from .tensorio import config_hash, json_canonical, load_state_dict_from, save_module


@dataclass(frozen=True)
class SeedFeatures:
    """Per-frame slot distributions for the seed window plus its occurrence values."""

    slot_probs: tuple[np.ndarray, ...]  # one (M, |vocab_j|) array per categorical slot
    occurrence: np.ndarray  # (M,)

    @property
    def frame_count(self) -> int:
        return int(self.occurrence.shape[0])


class ApnModel(nn.Module):
    def __init__(self, num_codes: int, vocab_sizes, embed_dim: int = 32,
                 hidden: int = 64, window_length: int = 4):
        super().__init__()
        self.num_codes = num_codes
        self.vocab_sizes = tuple(int(v) for v in vocab_sizes)
        self.window_length = window_length
        self.id_embedding = nn.Embedding(num_codes, embed_dim)
        self.gru = nn.GRU(embed_dim, hidden, batch_first=True)
        self.heads = nn.ModuleList(nn.Linear(hidden, v) for v in self.vocab_sizes)

    def forward(self, ids: torch.Tensor):
        """(B,) code ids -> list per slot of (B, window, |vocab|) logits."""
        emb = self.id_embedding(ids)
        steps = emb.unsqueeze(1).expand(-1, self.window_length, -1)
        h, _ = self.gru(steps)
        return [head(h) for head in self.heads]


def apn_forward(seed_frames: np.ndarray, codec: MotionCodec, model: ApnModel):
    """Seed window -> per-slot (M, |vocab|) probability arrays (each row sums to 1)."""
    seed_frames = np.asarray(seed_frames, dtype=np.float32)
    if seed_frames.ndim != 3 or seed_frames.shape[0] != model.window_length:
        raise ValueError(
            f"seed_frames must be ({model.window_length}, J, 3), got {seed_frames.shape}"
        )
    if seed_frames.shape[1] != codec.skeleton.joint_count:
        raise ValueError(
            f"seed frames have {seed_frames.shape[1]} joints, codec expects "
            f"{codec.skeleton.joint_count}"
        )
    code = codec.encode(seed_frames)
    with torch.no_grad():
        logits = model(torch.as_tensor(code.ids, dtype=torch.long)[:1])
        probs = [F.softmax(l[0], dim=-1).numpy() for l in logits]
    return probs


@dataclass(frozen=True)
class ApnTrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 64
    embed_dim: int = 32
    hidden: int = 64
    seed: int = 0


def _window_examples(samples, codec: MotionCodec):
    """(codes, labels) over non-overlapping seed windows of every sample."""
    w = codec.window_length
    ids, labels = [], []
    with torch.no_grad():
        for sample in samples:
            frames = sample.pose.frames
            cat = sample.timeline.categorical
            starts = [s for s in range(0, frames.shape[0] - w + 1, w)]
            if not starts:
                continue
            windows = np.stack([frames[s : s + w] for s in starts]).astype(np.float32)
            z = codec.encode_latent(torch.from_numpy(windows))
            wid, _, _ = codec.vq(z)
            ids.extend(int(i) for i in wid)
            labels.extend(cat[s : s + w] for s in starts)
    if not ids:
        raise ValueError("no complete windows in dataset")
    return np.asarray(ids, dtype=np.int64), np.stack(labels).astype(np.int64)


def masked_cross_entropy(logits_per_slot, labels: torch.Tensor) -> torch.Tensor:
    """Sum over slots of the per-slot masked-mean cross-entropy (-1 labels masked out).

    A batch with no labeled frame for any slot contributes exactly zero loss.
    """
    total = logits_per_slot[0].new_zeros(())
    for j, logits in enumerate(logits_per_slot):
        target = labels[..., j].reshape(-1)
        flat = logits.reshape(-1, logits.shape[-1])
        valid = int((target >= 0).sum())
        if valid == 0:
            continue
        total = total + F.cross_entropy(flat, target, ignore_index=-1, reduction="sum") / valid
    return total


def train_apn(samples, codec: MotionCodec, cfg: ApnTrainConfig, vocab_sizes=None):
    """Cross-entropy over per-frame slot labels of codec-quantized windows."""
    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    if vocab_sizes is None:
        vocab_sizes = [16] * samples[0].timeline.categorical.shape[1]
    ids, labels = _window_examples(samples, codec)
    if (labels < 0).all():
        raise ValueError("dataset has zero labeled frames")
    torch.manual_seed(cfg.seed)
    model = ApnModel(
        codec.num_codes,
        vocab_sizes,
        embed_dim=cfg.embed_dim,
        hidden=cfg.hidden,
        window_length=codec.window_length,
    )
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    ids_t = torch.from_numpy(ids)
    labels_t = torch.from_numpy(labels)
    n = ids_t.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n)
        total, batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            logits = model(ids_t[sel])
            loss = masked_cross_entropy(logits, labels_t[sel])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss)
            batches += 1
        history.append({"epoch": epoch, "loss": total / batches})
    model.eval()
    return model, history


def infer_seed_features(seed_frames: np.ndarray, codec: MotionCodec, model: ApnModel) -> SeedFeatures:
    """Predicted distributions for the seed frames, consumed downstream as
    probability-weighted embeddings; occurrence is not predicted and defaults to 0."""
    probs = apn_forward(seed_frames, codec, model)
    m = model.window_length
    return SeedFeatures(
        slot_probs=tuple(p.astype(np.float32) for p in probs),
        occurrence=np.zeros(m, dtype=np.float32),
    )


def slot_accuracy(model: ApnModel, codec: MotionCodec, samples, column: int) -> float:
    """Argmax accuracy for one slot column over labeled frames of held-out windows."""
    ids, labels = _window_examples(samples, codec)
    with torch.no_grad():
        logits = model(torch.from_numpy(ids))
    pred = logits[column].argmax(dim=-1).numpy()
    truth = labels[..., column]
    mask = truth >= 0
    if not mask.any():
        raise ValueError(f"no labeled frames for slot column {column}")
    return float((pred[mask] == truth[mask]).mean())


def save_apn(model: ApnModel, out_dir, train_cfg: ApnTrainConfig | None = None,
             final_loss: float | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_module(out / "params.bin", model)
    manifest = {
        "schema_version": 1,
        "kind": "apn",
        "num_codes": model.num_codes,
        "vocab_sizes": list(model.vocab_sizes),
        "embed_dim": model.id_embedding.embedding_dim,
        "hidden": model.gru.hidden_size,
        "window_length": model.window_length,
        "training_config_hash": config_hash(asdict(train_cfg)) if train_cfg else None,
        "final_loss": final_loss,
    }
    (out / "manifest.json").write_text(json_canonical(manifest))


def load_apn(ckpt_dir) -> ApnModel:
    root = Path(ckpt_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    model = ApnModel(
        manifest["num_codes"],
        manifest["vocab_sizes"],
        embed_dim=manifest["embed_dim"],
        hidden=manifest["hidden"],
        window_length=manifest["window_length"],
    )
    load_state_dict_from(root / "params.bin", model)
    model.eval()
    return model
