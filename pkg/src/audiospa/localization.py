"""Binaural DOA classifier: STFT phase/magnitude features, two-branch CNN, BCE, decoding."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .audio import BinauralClip
from .errors import ConfigError, DomainError

NUM_CLASSES = 36
CLASS_WIDTH_DEG = 10
BCE_EPS = 1e-7


@dataclass
class LocalizerConfig:
    fft_size: int = 512
    hop: int = 256
    window_samples: int = 96000  # 4 s at 24 kHz
    branch_channels: tuple[int, ...] = (16, 32, 64)
    fusion_channels: tuple[int, ...] = (64, 32, 16)
    hidden: tuple[int, ...] = (512, 256)

    def __post_init__(self):
        self.branch_channels = tuple(self.branch_channels)
        self.fusion_channels = tuple(self.fusion_channels)
        self.hidden = tuple(self.hidden)
        if self.window_samples < self.fft_size:
            raise ConfigError("window_samples must be at least fft_size")
        if len(self.branch_channels) != 3 or len(self.fusion_channels) != 3 or len(self.hidden) != 2:
            raise ConfigError("the localizer has 3 branch convs, 3 fusion convs and 3 FC layers")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def num_frames(self) -> int:
        return (self.window_samples - self.fft_size) // self.hop + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def fit_window(samples: np.ndarray, window: int) -> np.ndarray:
    """Center-crop or symmetrically zero-pad ``(..., N)`` to ``window`` samples."""
    n = samples.shape[-1]
    if n == window:
        return samples
    if n > window:
        start = (n - window) // 2
        return samples[..., start:start + window]
    before = (window - n) // 2
    pad = [(0, 0)] * (samples.ndim - 1) + [(before, window - n - before)]
    return np.pad(samples, pad)


def stft_features(audio, fft_size: int = 512, hop: int = 256) -> tuple[torch.Tensor, torch.Tensor]:
    """Phase and log1p-magnitude spectrograms, each ``(..., 2, F, T)``.

    ``audio`` is a :class:`BinauralClip`, or an array/tensor whose last two
    axes are ``(2, N)``.
    """
    if isinstance(audio, BinauralClip):
        audio = audio.samples
    x = torch.as_tensor(audio)
    if x.dim() < 2 or x.shape[-2] != 2:
        raise DomainError(f"expected (..., 2, N) binaural audio, got {tuple(x.shape)}")
    n = x.shape[-1]
    if n < fft_size:
        raise DomainError(f"input of {n} samples is shorter than the FFT size {fft_size}")
    lead = x.shape[:-1]
    window = torch.hann_window(fft_size, dtype=x.dtype)
    stft = torch.stft(x.reshape(-1, n), fft_size, hop_length=hop, window=window,
                      center=False, return_complex=True)
    stft = stft.reshape(*lead, *stft.shape[-2:])
    phase = torch.angle(stft)
    phase = torch.where(phase <= -math.pi, phase + 2 * math.pi, phase)
    magnitude = torch.log1p(stft.abs())
    return phase, magnitude


def _conv_stack(channels: list[int]) -> nn.Sequential:
    layers = []
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        layers += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.PReLU(c_out)]
    return nn.Sequential(*layers)


class LocalizationModel(nn.Module):
    def __init__(self, config: LocalizerConfig | None = None):
        super().__init__()
        self.config = config or LocalizerConfig()
        cfg = self.config
        branch = [2, *cfg.branch_channels]
        self.phase_branch = _conv_stack(branch)
        self.magnitude_branch = _conv_stack(branch)
        self.fusion = _conv_stack([2 * cfg.branch_channels[-1], *cfg.fusion_channels])
        with torch.no_grad():
            probe = torch.zeros(1, 2, cfg.num_bins, cfg.num_frames)
            flat = self._fused(probe, probe).shape[1]
        self.classifier = nn.Sequential(
            nn.Linear(flat, cfg.hidden[0]), nn.PReLU(),
            nn.Linear(cfg.hidden[0], cfg.hidden[1]), nn.PReLU(),
            nn.Linear(cfg.hidden[1], NUM_CLASSES),
        )

    def _fused(self, phase: torch.Tensor, magnitude: torch.Tensor) -> torch.Tensor:
        mixed = torch.cat([self.phase_branch(phase), self.magnitude_branch(magnitude)], dim=1)
        return self.fusion(mixed).flatten(1)

    def logits(self, phase: torch.Tensor, magnitude: torch.Tensor) -> torch.Tensor:
        expected = (2, self.config.num_bins, self.config.num_frames)
        if tuple(phase.shape[1:]) != expected or phase.shape != magnitude.shape:
            raise ConfigError(f"feature shape {tuple(phase.shape[1:])} does not match model input {expected}")
        return self.classifier(self._fused(phase, magnitude))

    def forward(self, phase: torch.Tensor, magnitude: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(phase, magnitude))

    def features(self, audio: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        """``(B, 2, N)`` audio -> window-fitted model features."""
        audio = fit_window(np.asarray(audio), self.config.window_samples)
        dtype = next(self.parameters()).dtype
        return stft_features(torch.from_numpy(np.ascontiguousarray(audio)).to(dtype),
                             self.config.fft_size, self.config.hop)

    @torch.no_grad()
    def posterior(self, audio) -> np.ndarray:
        """Class probabilities for one ``(2, N)`` clip or a ``(B, 2, N)`` batch."""
        if isinstance(audio, BinauralClip):
            audio = audio.samples
        audio = np.asarray(audio)
        single = audio.ndim == 2
        if single:
            audio = audio[None]
        was_training = self.training
        self.eval()
        try:
            p = self(*self.features(audio)).double().numpy()
        finally:
            self.train(was_training)
        return p[0] if single else p


def loc_forward(features: tuple[torch.Tensor, torch.Tensor], model: LocalizationModel) -> torch.Tensor:
    phase, magnitude = features
    if phase.dim() == 3:
        return model(phase[None], magnitude[None])[0]
    return model(phase, magnitude)


def bce_loss(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Summed binary cross-entropy over the 36 classes, averaged over any batch axes."""
    prob = prob.clamp(BCE_EPS, 1.0 - BCE_EPS)
    per_class = target * torch.log(prob) + (1.0 - target) * torch.log1p(-prob)
    return -per_class.sum(dim=-1).mean()


def azimuth_to_class(azimuth_deg: int) -> int:
    if azimuth_deg % CLASS_WIDTH_DEG or not 0 <= azimuth_deg < 360:
        raise DomainError(f"azimuth {azimuth_deg} is not on the 10-degree grid")
    return azimuth_deg // CLASS_WIDTH_DEG


def multi_hot(azimuths) -> np.ndarray:
    target = np.zeros(NUM_CLASSES)
    for az in azimuths:
        target[azimuth_to_class(int(az))] = 1.0
    return target


def decode_doa(prob, num_sources: int = 1) -> list[int]:
    """Azimuths of the ``num_sources`` strongest peaks of a class posterior.

    With several sources, a class only counts if it is a local maximum on the
    circular class axis and it is not adjacent to an already-picked class.
    Ties go to the smaller class index.
    """
    p = np.asarray(prob, dtype=np.float64).reshape(-1)
    if p.shape[0] != NUM_CLASSES:
        raise DomainError(f"posterior must have {NUM_CLASSES} entries, got {p.shape[0]}")
    if not 1 <= num_sources <= NUM_CLASSES:
        raise DomainError(f"num_sources must be in [1, {NUM_CLASSES}]")
    order = sorted(range(NUM_CLASSES), key=lambda i: (-p[i], i))
    if num_sources == 1:
        return [order[0] * CLASS_WIDTH_DEG]
    picked: list[int] = []
    blocked: set[int] = set()
    for i in order:
        if i in blocked:
            continue
        if p[i] < p[(i - 1) % NUM_CLASSES] or p[i] < p[(i + 1) % NUM_CLASSES]:
            continue
        picked.append(i)
        blocked |= {i, (i - 1) % NUM_CLASSES, (i + 1) % NUM_CLASSES}
        if len(picked) == num_sources:
            break
    # fewer local maxima than requested: fill with the best remaining classes
    for i in order:
        if len(picked) == num_sources:
            break
        if i not in picked and i not in blocked:
            picked.append(i)
            blocked |= {i, (i - 1) % NUM_CLASSES, (i + 1) % NUM_CLASSES}
    for i in order:
        if len(picked) == num_sources:
            break
        if i not in picked:
            picked.append(i)
    return [i * CLASS_WIDTH_DEG for i in picked]
