"""Vector-quantized motion autoencoder over short pose windows.

Encodes windows of up to `window_length` frames to codebook IDs and
reconstructs them; the IDs double as the lookup tokens for the seed-label
prediction network, and the decoder closes the generation path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .motion import PoseSequence, Skeleton, load_skeleton, save_skeleton
from .tensorio import config_hash, json_canonical, load_state_dict_from, save_module


@dataclass(frozen=True)
class CodeSequence:
    """Codebook IDs, each in [0, num_codes)."""

    ids: tuple[int, ...]
    num_codes: int

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        for i in self.ids:
            if not 0 <= i < self.num_codes:
                raise ValueError(f"code id {i} outside [0, {self.num_codes})")

    def __len__(self):
        return len(self.ids)


def quantize(latent, codebook):
    """Nearest codebook row under Euclidean distance; ties break to the lowest index.

    latent: (D,) or (B, D); codebook: (K, D). Returns (ids, quantized) with
    shapes matching the input batching.
    """
    single = np.ndim(latent) == 1 if not torch.is_tensor(latent) else latent.dim() == 1
    z = latent if torch.is_tensor(latent) else torch.as_tensor(np.asarray(latent), dtype=torch.float32)
    cb = codebook if torch.is_tensor(codebook) else torch.as_tensor(np.asarray(codebook), dtype=torch.float32)
    if z.dim() == 1:
        z = z.unsqueeze(0)
    if not torch.isfinite(z).all():
        raise ValueError("latent contains non-finite values")
    d = ((z.unsqueeze(1) - cb.unsqueeze(0)) ** 2).sum(-1)
    ids = d.argmin(dim=1)  # torch.argmin returns the first (lowest) index on ties
    q = cb[ids]
    if single:
        return int(ids[0]), q[0]
    return ids, q


class VectorQuantizer(nn.Module):
    def __init__(self, num_codes: int, code_dim: int):
        super().__init__()
        if num_codes < 2:
            raise ValueError(f"num_codes must be >= 2, got {num_codes}")
        self.num_codes = num_codes
        self.code_dim = code_dim
        self.codebook = nn.Parameter(torch.empty(num_codes, code_dim))
        nn.init.uniform_(self.codebook, -1.0 / num_codes, 1.0 / num_codes)

    def forward(self, z: torch.Tensor):
        ids, q = quantize(z, self.codebook)
        # straight-through: gradient of the quantization step is identity on z
        q_st = z + (q - z).detach()
        return ids, q, q_st


def pad_window(window: np.ndarray, window_length: int) -> np.ndarray:
    """Front-pad a (T, J, 3) window to window_length by repeating its first frame."""
    t = window.shape[0]
    if t < 1:
        raise ValueError("empty window")
    if t > window_length:
        raise ValueError(f"window has {t} frames, limit is {window_length}")
    if t == window_length:
        return window
    pad = np.repeat(window[:1], window_length - t, axis=0)
    return np.concatenate([pad, window], axis=0)


class MotionCodec(nn.Module):
    """GRU encoder -> single code per window -> GRU decoder."""

    def __init__(
        self,
        skeleton: Skeleton,
        num_codes: int = 64,
        code_dim: int = 32,
        hidden: int = 64,
        window_length: int = 4,
    ):
        super().__init__()
        self.skeleton = skeleton
        self.window_length = window_length
        self.codes_per_window = 1
        self.num_codes = num_codes
        self.code_dim = code_dim
        self.hidden = hidden
        in_dim = skeleton.joint_count * 3
        self.enc_gru = nn.GRU(in_dim, hidden, batch_first=True)
        self.enc_head = nn.Linear(hidden, code_dim)
        self.vq = VectorQuantizer(num_codes, code_dim)
        self.dec_in = nn.Linear(code_dim, hidden)
        self.dec_gru = nn.GRU(code_dim, hidden, batch_first=True)
        self.dec_head = nn.Linear(hidden, in_dim)

    @property
    def codebook(self) -> torch.Tensor:
        return self.vq.codebook

    def encode_latent(self, windows: torch.Tensor) -> torch.Tensor:
        """(B, W, J, 3) -> (B, D) continuous pre-quantization latents."""
        b, w, j, _ = windows.shape
        x = windows.reshape(b, w, j * 3)
        _, h = self.enc_gru(x)
        return self.enc_head(h[-1])

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        """(B, D) -> (B, W, J, 3); accepts continuous or quantized latents."""
        b = z.shape[0]
        h0 = torch.tanh(self.dec_in(z)).unsqueeze(0)
        steps = z.unsqueeze(1).expand(b, self.window_length, self.code_dim)
        out, _ = self.dec_gru(steps, h0.contiguous())
        frames = self.dec_head(out)
        return frames.reshape(b, self.window_length, self.skeleton.joint_count, 3)

    def forward(self, windows: torch.Tensor):
        z = self.encode_latent(windows)
        ids, q, q_st = self.vq(z)
        recon = self.decode_latent(q_st)
        return recon, z, q, ids

    def encode(self, window: np.ndarray) -> CodeSequence:
        """Quantize one window of 1..window_length frames to its code ID."""
        window = np.asarray(window, dtype=np.float32)
        if window.ndim != 3 or window.shape[0] < 1:
            raise ValueError("window must be a non-empty (T, J, 3) array")
        padded = pad_window(window, self.window_length)
        with torch.no_grad():
            z = self.encode_latent(torch.from_numpy(padded).unsqueeze(0))
            ids, _, _ = self.vq(z)
        return CodeSequence(ids=(int(ids[0]),), num_codes=self.num_codes)

    def decode(self, codes: CodeSequence) -> np.ndarray:
        """Code IDs -> (len(codes) * window_length, J, 3) reconstructed frames."""
        if codes.num_codes != self.num_codes:
            raise ValueError("code sequence was produced for a different codebook size")
        idx = torch.as_tensor(codes.ids, dtype=torch.long)
        with torch.no_grad():
            frames = self.decode_latent(self.codebook[idx])
        return frames.reshape(-1, self.skeleton.joint_count, 3).numpy()

    def encode_sequence(self, seq: PoseSequence) -> CodeSequence:
        """Non-overlapping windows; a short final window is front-padded."""
        ids = []
        for start in range(0, seq.frame_count, self.window_length):
            window = seq.frames[start : start + self.window_length]
            ids.extend(self.encode(window).ids)
        return CodeSequence(ids=tuple(ids), num_codes=self.num_codes)


@dataclass(frozen=True)
class CodecTrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 64
    commitment_weight: float = 0.25
    num_codes: int = 64
    code_dim: int = 32
    hidden: int = 64
    window_length: int = 4
    seed: int = 0
    use_adversarial: bool = False
    adversarial_weight: float = 0.1
    wgan_k: float = 2.0
    wgan_p: float = 6.0


def sequence_windows(sequences, window_length: int) -> np.ndarray:
    """Stack non-overlapping (W, J, 3) windows from every sequence."""
    windows = []
    for seq in sequences:
        for start in range(0, seq.frame_count, window_length):
            chunk = seq.frames[start : start + window_length]
            windows.append(pad_window(chunk, window_length))
    if not windows:
        raise ValueError("dataset holds no complete window")
    return np.stack(windows).astype(np.float32)


def train_codec(sequences, cfg: CodecTrainConfig):
    """Minimize reconstruction + codebook + commitment losses; returns (codec, history)."""
    if cfg.num_codes < 2:
        raise ValueError(f"num_codes must be >= 2, got {cfg.num_codes}")
    sequences = list(sequences)
    if not sequences:
        raise ValueError("empty dataset")
    windows = sequence_windows(sequences, cfg.window_length)
    skeleton = sequences[0].skeleton
    torch.manual_seed(cfg.seed)
    codec = MotionCodec(
        skeleton,
        num_codes=cfg.num_codes,
        code_dim=cfg.code_dim,
        hidden=cfg.hidden,
        window_length=cfg.window_length,
    )
    critic = None
    opt_critic = None
    if cfg.use_adversarial:
        from .training import Critic, gradient_penalty, wgan_div_losses

        critic = Critic(skeleton.joint_count, width=cfg.hidden)
        opt_critic = torch.optim.Adam(critic.parameters(), lr=cfg.learning_rate)
    data = torch.from_numpy(windows)
    opt = torch.optim.Adam(codec.parameters(), lr=cfg.learning_rate)
    history = []
    n = data.shape[0]
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n)
        sums = {"recon": 0.0, "codebook": 0.0, "commit": 0.0, "total": 0.0}
        batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = data[perm[start : start + cfg.batch_size]]
            recon, z, q, _ = codec(batch)
            recon_loss = torch.mean((recon - batch) ** 2)
            codebook_loss = torch.mean((q - z.detach()) ** 2)
            commit_loss = torch.mean((z - q.detach()) ** 2)
            loss = recon_loss + codebook_loss + cfg.commitment_weight * commit_loss
            if critic is not None:
                from .training import gradient_penalty, wgan_div_losses

                real_scores = critic(batch.reshape(batch.shape[0], cfg.window_length, -1))
                fake = recon.reshape(batch.shape[0], cfg.window_length, -1)
                fake_scores = critic(fake.detach())
                norms = gradient_penalty(critic, batch.reshape_as(fake), fake.detach())
                d_loss, _ = wgan_div_losses(real_scores, fake_scores, norms, cfg.wgan_k, cfg.wgan_p)
                opt_critic.zero_grad()
                d_loss.backward()
                opt_critic.step()
                loss = loss - cfg.adversarial_weight * critic(fake).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["recon"] += float(recon_loss)
            sums["codebook"] += float(codebook_loss)
            sums["commit"] += float(commit_loss)
            sums["total"] += float(loss)
            batches += 1
        history.append({k: v / batches for k, v in sums.items()} | {"epoch": epoch})
    codec.eval()
    return codec, history


def reconstruction_error(codec: MotionCodec, windows: np.ndarray) -> float:
    """Mean squared error of quantized round trips over (N, W, J, 3) windows."""
    with torch.no_grad():
        x = torch.from_numpy(np.asarray(windows, dtype=np.float32))
        recon, _, _, _ = codec(x)
        return float(torch.mean((recon - x) ** 2))


def codebook_utilization(codec: MotionCodec, windows: np.ndarray) -> float:
    """Fraction of codes hit at least once over the given windows."""
    with torch.no_grad():
        z = codec.encode_latent(torch.from_numpy(np.asarray(windows, dtype=np.float32)))
        ids, _, _ = codec.vq(z)
    return len(set(ids.tolist())) / codec.num_codes


def save_codec(codec: MotionCodec, out_dir, train_cfg: CodecTrainConfig | None = None,
               final_losses: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_module(out / "params.bin", codec)
    save_skeleton(codec.skeleton, out / "skeleton.json")
    manifest = {
        "schema_version": 1,
        "kind": "motion_codec",
        "num_codes": codec.num_codes,
        "code_dim": codec.code_dim,
        "hidden": codec.hidden,
        "window_length": codec.window_length,
        "joint_count": codec.skeleton.joint_count,
        "training_config_hash": config_hash(asdict(train_cfg)) if train_cfg else None,
        "final_losses": final_losses,
    }
    (out / "manifest.json").write_text(json_canonical(manifest))


def load_codec(ckpt_dir) -> MotionCodec:
    root = Path(ckpt_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    skeleton = load_skeleton(root / "skeleton.json")
    codec = MotionCodec(
        skeleton,
        num_codes=manifest["num_codes"],
        code_dim=manifest["code_dim"],
        hidden=manifest["hidden"],
        window_length=manifest["window_length"],
    )
    load_state_dict_from(root / "params.bin", codec)
    codec.eval()
    return codec
