"""Group-wise lookup-free sign quantization.

The encoder's flat latent of width g*d' is viewed as g independent groups
of d' channels. Each channel is quantized to its sign, so a group carries
one of 2^d' binary codes and the combined code space has 2^(g*d') entries
without ever being materialized. Entropy terms are computed per group,
where 2^d' is small enough to enumerate exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, ValidationError

LOG_EPS = 1e-8


@dataclass(frozen=True)
class QuantizerConfig:
    g: int
    d_prime: int
    siglu_enabled: bool = True
    entropy_temperature: float = 1.0

    def __post_init__(self):
        if self.g < 1:
            raise ConfigError(f"group count must be >= 1, got {self.g}")
        if self.d_prime < 1:
            raise ConfigError(f"group channel must be >= 1, got {self.d_prime}")
        if self.entropy_temperature <= 0:
            raise ConfigError(
                f"entropy temperature must be positive, got {self.entropy_temperature}"
            )

    @property
    def code_width(self) -> int:
        return self.g * self.d_prime

    @property
    def codes_per_group(self) -> int:
        return 2 ** self.d_prime


@dataclass
class BinaryCode:
    """Sign codes in {-1,+1} plus the equivalent per-group integer ids.

    ids[..., k] = sum_l bit(signs[..., k, l]) * 2**l with bit(s) = (s+1)/2,
    least-significant bit first. The two views are mutually redundant.
    """

    signs: torch.Tensor  # (..., g, d_prime), entries in {-1, +1}
    ids: torch.Tensor    # (..., g), entries in [0, 2**d_prime)


def siglu(x: torch.Tensor) -> torch.Tensor:
    """Elementwise (1 - e^x) / (1 + e^x), computed as -tanh(x/2).

    The two forms are identical and the tanh form cannot overflow. Saturated
    values are clamped one ulp inside +/-1 so the output range stays strictly
    open even where tanh rounds to exactly 1.
    """
    y = -torch.tanh(x / 2)
    eps = torch.finfo(y.dtype).eps
    return y.clamp(min=-1 + eps, max=1 - eps)


def group_reshape(latent: torch.Tensor, config: QuantizerConfig) -> torch.Tensor:
    """View a flat (..., g*d') latent as grouped (..., g, d')."""
    channels = latent.shape[-1]
    if channels != config.code_width:
        raise ConfigError(
            f"latent channel count {channels} does not match "
            f"g*d' = {config.g}*{config.d_prime} = {config.code_width}"
        )
    return latent.reshape(*latent.shape[:-1], config.g, config.d_prime)


def ungroup_reshape(grouped: torch.Tensor) -> torch.Tensor:
    """Inverse of group_reshape: (..., g, d') -> (..., g*d')."""
    return grouped.reshape(*grouped.shape[:-2], grouped.shape[-2] * grouped.shape[-1])


def _signs_of(values: torch.Tensor) -> torch.Tensor:
    # sign(0) = +1 by convention
    return torch.where(values >= 0, 1.0, -1.0).to(values.dtype)


def quantize(grouped: torch.Tensor) -> BinaryCode:
    """Sign-quantize each channel; ties at exactly 0 go to +1."""
    signs = _signs_of(grouped.detach())
    return BinaryCode(signs=signs, ids=codes_to_indices(signs))


def codes_to_indices(signs: torch.Tensor) -> torch.Tensor:
    """Pack (..., g, d') sign codes into (..., g) integer ids, LSB first."""
    d_prime = signs.shape[-1]
    bits = (signs > 0).long()
    weights = torch.pow(2, torch.arange(d_prime, device=signs.device))
    return (bits * weights).sum(dim=-1)


def indices_to_codes(
    ids: torch.Tensor, config: QuantizerConfig, dtype: torch.dtype = torch.float32
) -> BinaryCode:
    """Unpack (..., g) ids back into sign codes; exact inverse of packing."""
    if ids.numel() > 0:
        lo, hi = int(ids.min()), int(ids.max())
        if lo < 0 or hi >= config.codes_per_group:
            raise ValidationError(
                f"token id out of range [0, {config.codes_per_group}): "
                f"found values in [{lo}, {hi}]"
            )
    shifts = torch.arange(config.d_prime, device=ids.device)
    bits = (ids.unsqueeze(-1) >> shifts) & 1
    signs = (bits * 2 - 1).to(dtype)
    return BinaryCode(signs=signs, ids=ids.long())


class _SignPassThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, values, signs):
        return signs

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def straight_through(grouped: torch.Tensor, code: BinaryCode) -> torch.Tensor:
    """Forward the sign codes bit-exactly; backward is identity into grouped."""
    if grouped.shape != code.signs.shape:
        raise RuntimeError(
            f"internal error: grouped shape {tuple(grouped.shape)} does not "
            f"match code shape {tuple(code.signs.shape)}"
        )
    return _SignPassThrough.apply(grouped, code.signs)


def _bit_probabilities(grouped: torch.Tensor, config: QuantizerConfig) -> torch.Tensor:
    """Per-bit probability of the +1 state under the conditional code model."""
    if config.siglu_enabled:
        return (1 + grouped) / 2
    return torch.sigmoid(2 * grouped / config.entropy_temperature)


def token_entropy_loss(grouped: torch.Tensor, config: QuantizerConfig) -> torch.Tensor:
    """Mean per-position, per-group entropy of the conditional code distribution.

    Bits are independent, so the group entropy is the sum of d' Bernoulli
    entropies (in nats). Averaged over positions and groups, the value lies
    in [0, d' * ln 2]; minimizing it sharpens code assignments.
    """
    p = _bit_probabilities(grouped, config)
    h = -(p * torch.log(p.clamp_min(LOG_EPS))
          + (1 - p) * torch.log((1 - p).clamp_min(LOG_EPS)))
    return h.sum(dim=-1).mean()


def codebook_entropy_loss(grouped: torch.Tensor, config: QuantizerConfig) -> torch.Tensor:
    """Negative entropy of the batch-mean per-group code distribution.

    Enumerates all 2^d' codes of each group exactly: the mean distribution
    is aggregated in log space over every position in the batch, then its
    entropy is negated and averaged over groups. Value lies in
    [-d' * ln 2, 0]; minimizing it spreads usage across the codebook.
    """
    p = _bit_probabilities(grouped, config).reshape(-1, config.g, config.d_prime)
    n = p.shape[0]
    log_p = torch.log(p.clamp_min(LOG_EPS))
    log_1mp = torch.log((1 - p).clamp_min(LOG_EPS))
    codes = torch.arange(config.codes_per_group, device=grouped.device)
    shifts = torch.arange(config.d_prime, device=grouped.device)
    bits = ((codes.unsqueeze(-1) >> shifts) & 1).to(grouped.dtype)  # (2^d', d')
    # log q_n(c) for every position n, group k, code c
    log_q = torch.einsum("nkd,cd->nkc", log_p, bits) + torch.einsum(
        "nkd,cd->nkc", log_1mp, 1 - bits
    )
    log_q_mean = torch.logsumexp(log_q, dim=0) - math.log(n)  # (g, 2^d')
    entropy_per_group = -(log_q_mean.exp() * log_q_mean).sum(dim=-1)
    return -entropy_per_group.mean()


def commitment_loss(grouped: torch.Tensor, code: BinaryCode) -> torch.Tensor:
    """Mean squared distance from the latent to its (stop-gradient) code."""
    return ((grouped - code.signs.detach()) ** 2).mean()


@dataclass
class UsageReport:
    per_group: list
    overall: float


def codebook_usage(ids: torch.Tensor, config: QuantizerConfig) -> UsageReport:
    """Fraction of each group's 2^d' codes observed at least once."""
    flat = ids.reshape(-1, ids.shape[-1]) if ids.dim() > 1 else ids.reshape(-1, 1)
    if flat.numel() == 0:
        raise ValidationError("codebook usage requires a nonempty id stream")
    if flat.shape[-1] != config.g:
        raise ConfigError(
            f"id stream has {flat.shape[-1]} groups, config expects {config.g}"
        )
    per_group = [
        torch.unique(flat[:, k]).numel() / config.codes_per_group
        for k in range(config.g)
    ]
    return UsageReport(per_group=per_group, overall=sum(per_group) / config.g)
