"""Deterministic seeding helpers.

Per-step randomness is derived statelessly from (run seed, step, tag) so a
resumed run draws exactly the same data, noise, and timesteps as an unbroken
one without serializing generator state.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(*parts) -> int:
    digest = hashlib.blake2b(
        "/".join(str(p) for p in parts).encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % (2 ** 63)


def np_generator(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def torch_generator(*parts) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(*parts))
    return gen


def seeded_init_(module: torch.nn.Module, seed: int, std: float = 0.05) -> torch.nn.Module:
    """Re-draw every parameter from a private generator.

    Weights become N(0, std); normalization gains 1 and biases 0. Makes
    frozen reference networks (teachers, feature nets) and probe models
    reproducible without touching the global RNG.
    """
    gen = torch_generator("init", seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias") or param.dim() == 0:
                param.zero_()
            elif param.dim() == 1 and name.endswith("weight"):
                param.fill_(1.0)  # normalization gains
            else:
                param.copy_(torch.randn(param.shape, generator=gen, dtype=param.dtype) * std)
    return module
