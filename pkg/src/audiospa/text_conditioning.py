"""Prompt encoding and the text-to-FiLM conditioning path.

prompt -> frozen encoder (N_t x D_t) -> per-token compressor (N_t x 2D)
       -> learned-query attention pooling (2D) -> per-block FiLM heads.
"""
from __future__ import annotations

import hashlib
import math
import re
from typing import Protocol

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DomainError, EncoderUnavailableError

STUB_SEED = 0x5A17
STUB_DIM = 64

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class TextEncoder(Protocol):
    key: str
    dim: int

    def __call__(self, prompt: str) -> np.ndarray: ...


def tokenize(prompt: str) -> list[str]:
    """Lower-cased word and punctuation tokens."""
    return _TOKEN_RE.findall(prompt.lower())


class StubEncoder:
    """Training-free deterministic encoder.

    Every token string maps to a fixed Gaussian row drawn from a Philox
    counter-based generator keyed on ``(seed, sha256(token))``, so the result
    does not depend on process, platform or call order.
    """

    key = "stub"

    def __init__(self, dim: int = STUB_DIM, seed: int = STUB_SEED):
        if dim < 1:
            raise ConfigError("stub encoder dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def embed_token(self, token: str) -> np.ndarray:
        row = self._cache.get(token)
        if row is None:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            key = [int.from_bytes(digest[:8], "little"), int.from_bytes(digest[8:16], "little")]
            bitgen = np.random.Philox(counter=0, key=np.array(key, dtype=np.uint64) ^ np.uint64(self.seed))
            row = np.random.Generator(bitgen).standard_normal(self.dim)
            row.setflags(write=False)
            self._cache[token] = row
        return row

    def __call__(self, prompt: str) -> np.ndarray:
        tokens = tokenize(prompt)
        if not tokens:
            raise DomainError(f"prompt {prompt!r} has no tokens")
        return np.stack([self.embed_token(t) for t in tokens])


class PretrainedT5Encoder:
    """FLAN-T5 encoder accessed through ``transformers``; loaded lazily and frozen."""

    MODELS = {
        "pretrained-base": ("google/flan-t5-base", 768),
        "pretrained-large": ("google/flan-t5-large", 1024),
    }

    def __init__(self, key: str = "pretrained-large"):
        if key not in self.MODELS:
            raise ConfigError(f"unknown pretrained encoder {key!r}")
        self.key = key
        self.model_name, self.dim = self.MODELS[key]
        self._tokenizer = None
        self._model = None

    def _load(self):
        try:
            from transformers import AutoTokenizer, T5EncoderModel

            self._tokenizer = AutoTokenizer.from_pretrained(self.model_name)
            model = T5EncoderModel.from_pretrained(self.model_name)
        except Exception as exc:  # any import/download/parse failure
            raise EncoderUnavailableError(f"cannot load text encoder {self.model_name}: {exc}") from exc
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self._model = model

    def __call__(self, prompt: str) -> np.ndarray:
        if self._model is None:
            self._load()
        batch = self._tokenizer(prompt, return_tensors="pt")
        with torch.no_grad():
            hidden = self._model(**batch).last_hidden_state[0]
        return hidden.double().numpy()


def get_encoder(key: str, dim: int = STUB_DIM) -> TextEncoder:
    if key == "stub":
        return StubEncoder(dim)
    if key in PretrainedT5Encoder.MODELS:
        return PretrainedT5Encoder(key)
    raise ConfigError(f"unknown encoder key {key!r}; expected 'stub', 'pretrained-base' or 'pretrained-large'")


def encode_text(prompt: str, encoder: TextEncoder) -> torch.Tensor:
    """Token embeddings ``(N_t, D_t)`` as a constant float64 tensor (no grad)."""
    if not isinstance(prompt, str) or not prompt.strip():
        raise DomainError("prompt must be a non-empty string")
    emb = np.asarray(encoder(prompt), dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] != encoder.dim:
        raise DomainError(f"encoder returned shape {emb.shape}, expected (N_t, {encoder.dim})")
    if not np.all(np.isfinite(emb)):
        raise DomainError("encoder returned non-finite embeddings")
    return torch.from_numpy(emb.copy())


def pad_tokens(batch: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length token matrices into ``(B, T, D)`` plus a validity mask."""
    longest = max(t.shape[0] for t in batch)
    width = batch[0].shape[1]
    out = batch[0].new_zeros(len(batch), longest, width)
    mask = torch.zeros(len(batch), longest, dtype=torch.bool)
    for i, t in enumerate(batch):
        out[i, : t.shape[0]] = t
        mask[i, : t.shape[0]] = True
    return out, mask


class TokenCompressor(nn.Module):
    """FC -> PReLU -> FC applied to every token row independently."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.act = nn.PReLU()
        self.fc2 = nn.Linear(out_dim, out_dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.in_dim:
            raise DomainError(f"token width {tokens.shape[-1]} != compressor input width {self.in_dim}")
        return self.fc2(self.act(self.fc1(tokens)))


class FMHAPool(nn.Module):
    """Multi-head attention pooling with one learned query per head.

    For head ``h``: ``w = softmax_tokens(q_h . K_h(tok) / sqrt(d_h))``,
    ``O_h = sum_tok w * V_h(tok)``; the heads are concatenated and projected.
    """

    def __init__(self, width: int, heads: int = 4):
        super().__init__()
        if heads < 1 or width % heads:
            raise ConfigError(f"width {width} is not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.query = nn.Parameter(torch.randn(heads, self.head_dim) / math.sqrt(self.head_dim))
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.out = nn.Linear(width, width)

    def attention(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Pooling weights, shape ``(B, H, T)``."""
        b, t, _ = tokens.shape
        k = self.key(tokens).view(b, t, self.heads, self.head_dim)
        logits = torch.einsum("bthd,hd->bht", k, self.query) / math.sqrt(self.head_dim)
        if mask is not None:
            logits = logits.masked_fill(~mask[:, None, :], float("-inf"))
        return torch.softmax(logits, dim=-1)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = tokens.dim() == 2
        if squeeze:
            tokens = tokens[None]
        if tokens.shape[-1] != self.width:
            raise ConfigError(f"token width {tokens.shape[-1]} != pooling width {self.width}")
        b, t, _ = tokens.shape
        weights = self.attention(tokens, mask)
        v = self.value(tokens).view(b, t, self.heads, self.head_dim)
        pooled = torch.einsum("bht,bthd->bhd", weights, v).reshape(b, self.width)
        pooled = self.out(pooled)
        return pooled[0] if squeeze else pooled


class FirstTokenPool(nn.Module):
    """Ablation pooling: keep the first token only."""

    def __init__(self, width: int, heads: int = 4):
        super().__init__()
        self.width = width

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return tokens[..., 0, :]


POOLINGS = {"fmha": FMHAPool, "first": FirstTokenPool}


class FiLMHead(nn.Module):
    """Condition vector -> (gamma, beta), each of width ``channels``."""

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.cond_dim = cond_dim
        self.channels = channels
        self.fc1 = nn.Linear(cond_dim, cond_dim)
        self.act = nn.PReLU()
        self.fc2 = nn.Linear(cond_dim, 2 * channels)
        # start close to the identity modulation
        with torch.no_grad():
            self.fc2.weight.mul_(0.1)
            self.fc2.bias.zero_()
            self.fc2.bias[:channels] = 1.0

    def forward(self, cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if cond.shape[-1] != self.cond_dim:
            raise ConfigError(f"condition width {cond.shape[-1]} != FiLM head input {self.cond_dim}")
        out = self.fc2(self.act(self.fc1(cond)))
        return out[..., : self.channels], out[..., self.channels:]


def film_params(cond: torch.Tensor, head: FiLMHead) -> tuple[torch.Tensor, torch.Tensor]:
    return head(cond)
