"""Semantic distillation: pooling heads, teacher interfaces, cosine losses,
and the nearest-prototype zero-shot proxy.

Two pooling heads (one for pre-quantization latents, one for quantized
latents) share no parameters. Teachers are pluggable: a frozen seeded conv
encoder for self-contained runs, or a file-backed embedding store keyed by
sample id. Teacher vectors are L2-normalized at ingestion so stored scales
cannot leak into the cosine objective.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DataError, FormatError, ValidationError
from .rng import seeded_init_

NORM_EPS = 1e-8

STORE_MAGIC = b"UWEB"
STORE_VERSION = 1


def l2_normalize(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return x / (x.norm(dim=dim, keepdim=True) + NORM_EPS)


class AttnPoolHead(nn.Module):
    """Single learned query cross-attending over the h*w latent tokens."""

    def __init__(self, latent_dim: int, teacher_dim: int, width: int = 64, heads: int = 4):
        super().__init__()
        self.query = nn.Parameter(torch.randn(1, 1, width) * 0.02)
        self.key_proj = nn.Linear(latent_dim, width)
        self.value_proj = nn.Linear(latent_dim, width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.out = nn.Linear(width, teacher_dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.dim() == 4:  # (B, h, w, d) -> (B, h*w, d)
            tokens = tokens.reshape(tokens.shape[0], -1, tokens.shape[-1])
        if tokens.shape[1] == 0:
            raise RuntimeError("internal error: cannot pool an empty latent grid")
        q = self.query.expand(tokens.shape[0], -1, -1)
        pooled, _ = self.attn(
            q, self.key_proj(tokens), self.value_proj(tokens), need_weights=False
        )
        return self.out(pooled.squeeze(1))


class LinearPoolHead(nn.Module):
    """Mean pooling plus a projection; the linear-head comparison arm."""

    def __init__(self, latent_dim: int, teacher_dim: int):
        super().__init__()
        self.proj = nn.Linear(latent_dim, teacher_dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.dim() == 4:
            tokens = tokens.reshape(tokens.shape[0], -1, tokens.shape[-1])
        if tokens.shape[1] == 0:
            raise RuntimeError("internal error: cannot pool an empty latent grid")
        return self.proj(tokens.mean(dim=1))


def build_pool_head(kind: str, latent_dim: int, teacher_dim: int) -> nn.Module:
    if kind == "attention":
        return AttnPoolHead(latent_dim, teacher_dim)
    if kind == "linear":
        return LinearPoolHead(latent_dim, teacher_dim)
    raise ValidationError(f"unknown distill head kind {kind!r}")


class SyntheticTeacher(nn.Module):
    """Frozen seeded conv encoder standing in for a pretrained teacher.

    Deterministic for a given seed; resolution agnostic through adaptive
    pooling; outputs are L2-normalized.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.Tanh(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.Tanh(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.Tanh(),
        )
        self.head = nn.Linear(64 * 4, dim)
        seeded_init_(self, seed, std=0.3)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def embed(self, images: torch.Tensor, sample_ids=None) -> torch.Tensor:
        """(B, H, W, 3) images -> (B, dim) unit vectors."""
        x = images.permute(0, 3, 1, 2)
        feats = self.net(x)
        pooled = F.adaptive_avg_pool2d(feats, 2).flatten(1)
        return l2_normalize(self.head(pooled))


class FileTeacher:
    """Embedding store keyed by sample id, loaded fully into memory."""

    def __init__(self, path):
        self.path = str(path)
        self.vectors = read_embedding_store(path)
        first = next(iter(self.vectors.values()), None)
        self.dim = 0 if first is None else first.shape[0]

    def embed(self, images: torch.Tensor, sample_ids=None) -> torch.Tensor:
        if sample_ids is None:
            raise DataError("file-backed teacher requires sample ids")
        rows = []
        for key in sample_ids:
            if key not in self.vectors:
                raise DataError(f"no teacher embedding stored for sample id {key!r}")
            rows.append(self.vectors[key])
        return torch.stack(rows)


def write_embedding_store(path, vectors: dict, dim: int) -> None:
    """Serialize {sample_id: vector}; layout documented in FORMATS.md.

    Header: magic ``UWEB``, version u16, dim u32, count u32 (all little
    endian). Records: key length u16, UTF-8 key bytes, then ``dim`` float32
    values. Vectors are L2-normalized before writing.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<HII", STORE_VERSION, dim, len(vectors)))
        for key, vec in vectors.items():
            vec = torch.as_tensor(vec, dtype=torch.float32)
            if vec.shape != (dim,):
                raise ValidationError(
                    f"embedding for {key!r} has shape {tuple(vec.shape)}, expected ({dim},)"
                )
            norm = float(vec.norm())
            if norm == 0:
                raise ValidationError(f"embedding for {key!r} has zero norm")
            data = (vec / norm).numpy().astype("<f4").tobytes()
            encoded = key.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(data)


def read_embedding_store(path) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != STORE_MAGIC:
        raise FormatError(f"{path}: not an embedding store (bad magic)")
    version, dim, count = struct.unpack_from("<HII", raw, 4)
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    vectors = {}
    offset = 14
    for _ in range(count):
        if offset + 2 > len(raw):
            raise FormatError(f"{path}: truncated record header")
        (key_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        end = offset + key_len + 4 * dim
        if end > len(raw):
            raise FormatError(f"{path}: truncated record payload")
        key = raw[offset : offset + key_len].decode("utf-8")
        offset += key_len
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        vectors[key] = torch.from_numpy(vec)
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return vectors


def cosine_distill_loss(pooled: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - cos(pooled, target) averaged over the batch; range [0, 2]."""
    cos = (l2_normalize(pooled) * l2_normalize(target)).sum(dim=-1)
    return (1 - cos).mean()


def pre_post_distill_loss(
    pre_pooled, post_pooled, target, eta: float = 1.0,
    pre_enabled: bool = True, post_enabled: bool = True,
):
    """Combined alignment loss: pre term + eta * post term.

    Either arm can be disabled; disabled arms contribute exactly zero and
    are reported as zero.
    """
    zero = target.new_zeros(())
    pre = cosine_distill_loss(pre_pooled, target) if pre_enabled else zero
    post = cosine_distill_loss(post_pooled, target) if post_enabled else zero
    return pre + eta * post, pre, post


def class_prototypes(embeddings: torch.Tensor, labels) -> tuple:
    """Mean teacher embedding per class, unit-normalized."""
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValidationError(f"zero-shot proxy needs >= 2 classes, got {len(classes)}")
    protos = []
    for cls in classes:
        idx = [i for i, l in enumerate(labels) if l == cls]
        if not idx:
            raise ValidationError(f"class {cls!r} has no prototype samples")
        protos.append(l2_normalize(embeddings[idx].mean(dim=0), dim=0))
    return torch.stack(protos), classes


def zero_shot_proxy(
    student_embeddings: torch.Tensor,
    labels,
    prototypes: torch.Tensor,
    classes,
    topk=(1, 5),
) -> dict:
    """Nearest-prototype classification of pooled student embeddings."""
    labels = list(labels)
    if student_embeddings.shape[0] != len(labels):
        raise ValidationError("one label per evaluated sample required")
    class_index = {cls: i for i, cls in enumerate(classes)}
    targets = torch.tensor([class_index[l] for l in labels])
    sims = l2_normalize(student_embeddings) @ prototypes.t()
    result = {}
    for k in topk:
        k_eff = min(k, len(classes))
        top = sims.topk(k_eff, dim=-1).indices
        hit = (top == targets.unsqueeze(-1)).any(dim=-1)
        result[f"top{k}"] = hit.float().mean().item()
    return result
