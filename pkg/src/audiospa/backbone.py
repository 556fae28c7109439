"""Waveform-to-waveform generator with FiLM-modulated gated dilated residual blocks."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import BinauralClip, MonauralClip
from .errors import ConfigError, DomainError, NumericalError
from .text_conditioning import POOLINGS, FiLMHead, TextEncoder, TokenCompressor, encode_text, pad_tokens


@dataclass
class BackboneConfig:
    residual_channels: int = 64
    num_blocks: int = 30
    dilation_cycle_length: int = 10
    dilated_kernel_size: int = 3
    heads: int = 4
    text_dim: int = 64
    pooling: str = "fmha"

    def __post_init__(self):
        if self.num_blocks < 1 or self.residual_channels < 1:
            raise ConfigError("num_blocks and residual_channels must be >= 1")
        if self.dilated_kernel_size < 1 or self.dilated_kernel_size % 2 == 0:
            raise ConfigError("dilated_kernel_size must be odd for symmetric same-padding")
        if self.dilation_cycle_length < 1:
            raise ConfigError("dilation_cycle_length must be >= 1")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if (2 * self.residual_channels) % self.heads:
            raise ConfigError(f"2D = {2 * self.residual_channels} is not divisible by {self.heads} heads")

    def dilation(self, block: int) -> int:
        return 2 ** (block % self.dilation_cycle_length)

    @property
    def receptive_radius(self) -> int:
        """Samples of context seen on each side of an output sample."""
        half = (self.dilated_kernel_size - 1) // 2
        return sum(self.dilation(b) * half for b in range(self.num_blocks))

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, kernel_size: int = 3):
        super().__init__()
        self.channels = channels
        self.dilation = dilation
        self.dilated = nn.Conv1d(channels, 2 * channels, kernel_size,
                                 padding=dilation * (kernel_size - 1) // 2, dilation=dilation)
        self.mix = nn.Conv1d(channels, 2 * channels, 1)

    def forward(self, x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor
                ) -> tuple[torch.Tensor, torch.Tensor]:
        d = self.channels
        a = self.dilated(x)
        a = gamma[..., None] * a + beta[..., None]
        gated = torch.sigmoid(a[:, :d]) * torch.tanh(a[:, d:])
        c = self.mix(gated)
        return c[:, :d], x + c[:, d:]


class AudioSpa(nn.Module):
    """Monaural waveform + token embeddings -> binaural waveform."""

    def __init__(self, config: BackboneConfig, encoder_key: str = "stub"):
        super().__init__()
        self.config = config
        self.encoder_key = encoder_key
        d = config.residual_channels
        self.input_projection = nn.Conv1d(1, d, 1)
        self.blocks = nn.ModuleList(
            ResidualBlock(d, config.dilation(b), config.dilated_kernel_size) for b in range(config.num_blocks)
        )
        self.compressor = TokenCompressor(config.text_dim, 2 * d)
        self.pool = POOLINGS[config.pooling](2 * d, config.heads)
        self.film_heads = nn.ModuleList(FiLMHead(2 * d, 2 * d) for _ in range(config.num_blocks))
        self.output_projection = nn.Conv1d(d, 2, 1)

    def condition(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Token embeddings ``(B, T, D_t)`` -> condition vectors ``(B, 2D)``."""
        return self.pool(self.compressor(tokens), mask)

    def embed_input(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.input_projection(x))

    def forward(self, x: torch.Tensor, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """``x``: ``(B, N)`` or ``(B, 1, N)``; ``tokens``: ``(B, T, D_t)``. Returns ``(B, 2, N)``."""
        if x.dim() == 2:
            x = x[:, None, :]
        if x.dim() != 3 or x.shape[1] != 1:
            raise DomainError(f"expected mono input of shape (B, 1, N), got {tuple(x.shape)}")
        if tokens.dim() == 2:
            tokens = tokens[None].expand(x.shape[0], -1, -1)
        cond = self.condition(tokens.to(x.dtype), mask)
        h = self.embed_input(x)
        skip_sum = torch.zeros_like(h)
        for block, head in zip(self.blocks, self.film_heads):
            gamma, beta = head(cond)
            skip, h = block(h, gamma, beta)
            skip_sum = skip_sum + skip
        return self.output_projection(F.relu(skip_sum))

    @torch.no_grad()
    def spatialize(self, mono: MonauralClip, prompt: str, encoder: TextEncoder) -> BinauralClip:
        """Inference helper working on clip objects."""
        dtype = next(self.parameters()).dtype
        was_training = self.training
        self.eval()
        try:
            tokens = encode_text(prompt, encoder).to(dtype)
            x = torch.from_numpy(mono.samples).to(dtype)[None]
            y = self(x, tokens)[0].double().numpy()
        finally:
            self.train(was_training)
        if not np.all(np.isfinite(y)):
            raise NumericalError("generator produced non-finite samples")
        return BinauralClip(y, mono.sample_rate_hz)


def encode_batch(prompts: list[str], encoder: TextEncoder, dtype=torch.float32,
                 cache: dict | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    rows = []
    for p in prompts:
        if cache is not None and p in cache:
            rows.append(cache[p])
            continue
        t = encode_text(p, encoder).to(dtype)
        if cache is not None:
            cache[p] = t
        rows.append(t)
    return pad_tokens(rows)


def l1_loss(estimate: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every sample of every channel."""
    if estimate.shape != target.shape:
        raise DomainError(f"shape mismatch: {tuple(estimate.shape)} vs {tuple(target.shape)}")
    return (estimate - target).abs().mean()


def huber_loss(estimate: torch.Tensor, target: torch.Tensor, delta: float = 1e-6) -> torch.Tensor:
    """Smooth surrogate of :func:`l1_loss`, used for finite-difference gradient checks."""
    if estimate.shape != target.shape:
        raise DomainError(f"shape mismatch: {tuple(estimate.shape)} vs {tuple(target.shape)}")
    return F.huber_loss(estimate, target, delta=delta, reduction="mean") / delta
