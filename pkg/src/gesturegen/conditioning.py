"""Label conditioning: per-slot embeddings -> MLP -> Gaussian latent via noise reparameterization.

Missing labels (-1) embed to exact zero vectors, so a fully unlabeled frame
contributes an all-zero conditioning input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass(frozen=True)
class CondConfig:
    embed_dim: int = 8
    latent_dim: int = 32
    hidden: int = 128
    kl_weight: float = 0.0  # optional regularizer; the default keeps it out of the loss


@dataclass(frozen=True)
class ConditioningLatent:
    mu: torch.Tensor
    logvar: torch.Tensor
    sample: torch.Tensor


class LabelEmbeddingBank(nn.Module):
    """One embedding table per categorical slot; occurrence appended as a raw scalar."""

    def __init__(self, vocab_sizes, embed_dim: int = 8):
        super().__init__()
        self.vocab_sizes = tuple(int(v) for v in vocab_sizes)
        self.embed_dim = embed_dim
        self.tables = nn.ModuleList(nn.Embedding(v, embed_dim) for v in self.vocab_sizes)

    @property
    def output_dim(self) -> int:
        return len(self.vocab_sizes) * self.embed_dim + 1

    def forward(self, labels: torch.Tensor, occurrence: torch.Tensor) -> torch.Tensor:
        """labels (..., S) with -1 for missing, occurrence (...,) -> (..., S*E + 1)."""
        if labels.shape[-1] != len(self.vocab_sizes):
            raise ValueError(f"expected {len(self.vocab_sizes)} label slots, got {labels.shape[-1]}")
        parts = []
        for j, table in enumerate(self.tables):
            v = labels[..., j]
            if (v < -1).any() or (v >= self.vocab_sizes[j]).any():
                raise ValueError(
                    f"slot {j}: label outside {{-1}} U [0, {self.vocab_sizes[j]})"
                )
            valid = (v >= 0).unsqueeze(-1).to(table.weight.dtype)
            rows = table(v.clamp(min=0)) * valid
            parts.append(rows)
        parts.append(occurrence.unsqueeze(-1).to(parts[0].dtype))
        return torch.cat(parts, dim=-1)

    def expected(self, slot_probs, occurrence: torch.Tensor) -> torch.Tensor:
        """Probability-weighted embedding rows per slot: slot_probs[j] is (..., |vocab_j|)."""
        if len(slot_probs) != len(self.vocab_sizes):
            raise ValueError(f"expected {len(self.vocab_sizes)} distributions")
        parts = []
        for probs, table in zip(slot_probs, self.tables):
            parts.append(probs.to(table.weight.dtype) @ table.weight)
        parts.append(occurrence.unsqueeze(-1).to(parts[0].dtype))
        return torch.cat(parts, dim=-1)


def embed_labels(labels, occurrence, bank: LabelEmbeddingBank) -> torch.Tensor:
    """Functional wrapper accepting numpy or torch inputs."""
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    occ_t = torch.as_tensor(np.asarray(occurrence, dtype=np.float32))
    return bank(labels_t, occ_t)


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """sample = mu + exp(logvar / 2) * noise, with logvar clamped to [-10, 10]."""
    logvar = torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)
    return mu + torch.exp(0.5 * logvar) * noise


def kl_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag exp(logvar)) || N(0, I)); zero iff mu = 0 and logvar = 0."""
    logvar = torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)
    return 0.5 * torch.sum(mu**2 + torch.exp(logvar) - 1.0 - logvar, dim=-1)


class ConditioningModel(nn.Module):
    """Embedding bank plus the MLP producing (mu, logvar)."""

    def __init__(self, vocab_sizes, cfg: CondConfig = CondConfig()):
        super().__init__()
        self.cfg = cfg
        self.bank = LabelEmbeddingBank(vocab_sizes, cfg.embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(self.bank.output_dim, cfg.hidden),
            nn.ReLU(),
            nn.Linear(cfg.hidden, 2 * cfg.latent_dim),
        )

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def project(self, embedded: torch.Tensor):
        out = self.mlp(embedded)
        mu, logvar = out.chunk(2, dim=-1)
        return mu, torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)

    def forward(
        self,
        labels: torch.Tensor,
        occurrence: torch.Tensor,
        mode: str = "sample",
        noise: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> ConditioningLatent:
        embedded = self.bank(labels, occurrence)
        return self.from_embedded(embedded, mode, noise, generator)

    def from_embedded(
        self,
        embedded: torch.Tensor,
        mode: str = "sample",
        noise: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> ConditioningLatent:
        mu, logvar = self.project(embedded)
        if mode == "deterministic":
            return ConditioningLatent(mu=mu, logvar=logvar, sample=mu)
        if mode != "sample":
            raise ValueError(f"mode must be 'sample' or 'deterministic', got {mode!r}")
        if noise is None:
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        return ConditioningLatent(mu=mu, logvar=logvar, sample=reparameterize(mu, logvar, noise))


def condition(
    frame_labels,
    occurrence,
    model: ConditioningModel,
    mode: str = "sample",
    noise=None,
    generator: torch.Generator | None = None,
) -> ConditioningLatent:
    """Labels -> embedding -> MLP -> (mu, logvar) -> sample (or mu in deterministic mode)."""
    labels_t = torch.as_tensor(np.asarray(frame_labels), dtype=torch.long)
    occ_t = torch.as_tensor(np.asarray(occurrence, dtype=np.float32))
    noise_t = None if noise is None else torch.as_tensor(np.asarray(noise, dtype=np.float32))
    return model(labels_t, occ_t, mode=mode, noise=noise_t, generator=generator)
