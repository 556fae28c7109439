"""On-the-fly scene synthesis.

Every scene is a pure function of ``(seed, epoch, index)``: the epoch fixes a
shuffled event order, and a per-scene generator draws the segment offset,
azimuth, template, label, noise segment and SNR.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .audio import BinauralClip, MonauralClip, read_mono
from .errors import ConfigError, DomainError, TemplateError
from .signal_model import SPEED_OF_SOUND, HRIRSet, SpatialScene, compute_delay, delay_input

PLACEHOLDERS = ("{azimuth}", "{event}")
MIN_EVENT_S = 0.5
MAX_EVENT_S = 30.0


# -- templates ---------------------------------------------------------------

def check_template(template: str) -> str:
    for ph in PLACEHOLDERS:
        count = template.count(ph)
        if count != 1:
            raise TemplateError(f"template {template!r} must contain {ph} exactly once (found {count})")
    return template


def fill_template(template: str, azimuth_deg: int, label: str) -> str:
    values = {"{azimuth}": str(int(azimuth_deg)), "{event}": label}
    return re.sub(r"\{azimuth\}|\{event\}", lambda m: values[m.group(0)], template)


@dataclass(frozen=True)
class TemplateSet:
    templates: tuple[str, ...]

    def __post_init__(self):
        if not self.templates:
            raise TemplateError("template set is empty")
        object.__setattr__(self, "templates", tuple(check_template(t) for t in self.templates))

    def __len__(self) -> int:
        return len(self.templates)

    def __getitem__(self, i: int) -> str:
        return self.templates[i]

    @classmethod
    def parse(cls, text: str) -> "TemplateSet":
        lines = [ln.strip() for ln in text.splitlines()]
        return cls(tuple(ln for ln in lines if ln and not ln.startswith("#")))

    @classmethod
    def load(cls, path=None) -> "TemplateSet":
        """Read a template file; the bundled set when ``path`` is None."""
        if path is None:
            text = resources.files("audiospa").joinpath("data/templates.txt").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.parse(text)


# -- synthetic events ------------------------------------------------------------

def _envelope(rng: np.random.Generator, n: int, sample_rate_hz: int) -> np.ndarray:
    """One to three bursts with 5 ms raised-cosine edges, covering most of the clip."""
    env = np.zeros(n)
    bursts = int(rng.integers(1, 4))
    bounds = [0, *np.sort(rng.uniform(0, n, size=bursts - 1)).astype(int), n]
    ramp = max(1, int(0.005 * sample_rate_hz))
    for k in range(bursts):
        start, stop = bounds[k], bounds[k + 1]
        if k > 0:
            # short gap between bursts
            start = min(stop, start + int(rng.integers(0, max(1, n // 20))))
        length = stop - start
        if length <= 0:
            continue
        seg = np.ones(length)
        r = min(ramp, length // 2)
        if r > 0:
            fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            seg[:r] *= fade
            seg[length - r:] *= fade[::-1]
        env[start:stop] = seg
    return env


def noise_burst(rng: np.random.Generator, n: int, sample_rate_hz: int = 24000) -> np.ndarray:
    """Spectrally tilted Gaussian noise gated into bursts."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
    tilt_db_per_octave = rng.uniform(-6.0, 3.0)
    octaves = np.log2(np.maximum(freqs, 50.0) / 1000.0)
    spectrum *= 10.0 ** (tilt_db_per_octave * octaves / 20.0)
    sig = np.fft.irfft(spectrum, n)
    sig *= _envelope(rng, n, sample_rate_hz)
    return sig / (np.max(np.abs(sig)) + 1e-12) * rng.uniform(0.3, 0.9)


def harmonic_tone(rng: np.random.Generator, n: int, sample_rate_hz: int = 24000) -> np.ndarray:
    """Harmonic complex with 1/k partials up to 8 kHz and random phases."""
    f0 = rng.uniform(100.0, 800.0)
    t = np.arange(n) / sample_rate_hz
    sig = np.zeros(n)
    k = 1
    while k * f0 < min(8000.0, 0.45 * sample_rate_hz):
        sig += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
        k += 1
    sig *= _envelope(rng, n, sample_rate_hz)
    return sig / (np.max(np.abs(sig)) + 1e-12) * rng.uniform(0.3, 0.9)


SYNTH_KINDS = {
    "noise_burst": (noise_burst, ["noise burst", "noise"]),
    "tone": (harmonic_tone, ["tone", "music"]),
}


# -- catalog and noise pool ------------------------------------------------------

@dataclass(frozen=True)
class CatalogEntry:
    labels: tuple[str, ...]
    path: str | None = None
    synth: tuple | None = None  # (kind, seed, num_samples, sample_rate_hz)

    def __post_init__(self):
        if not self.labels or not all(isinstance(lb, str) and lb for lb in self.labels):
            raise DomainError("catalog entries need at least one non-empty label")
        if (self.path is None) == (self.synth is None):
            raise DomainError("catalog entry needs exactly one of path / synth")

    def load(self) -> MonauralClip:
        if self.path is not None:
            return read_mono(self.path)
        kind, seed, n, rate = self.synth
        return MonauralClip(SYNTH_KINDS[kind][0](np.random.default_rng(seed), n, rate), rate)


@dataclass
class EventCatalog:
    entries: list[CatalogEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> CatalogEntry:
        return self.entries[i]

    @classmethod
    def load(cls, manifest_path) -> "EventCatalog":
        manifest_path = Path(manifest_path)
        try:
            items = json.loads(manifest_path.read_text())
        except (OSError, ValueError) as exc:
            raise DomainError(f"cannot read catalog {manifest_path}: {exc}") from exc
        entries = []
        for item in items:
            path = Path(item["file"])
            if not path.is_absolute():
                path = manifest_path.parent / path
            entries.append(CatalogEntry(tuple(item["labels"]), path=str(path)))
        return cls(entries)

    @classmethod
    def synthetic(cls, count: int, seed: int = 0, num_samples: int = 36000,
                  sample_rate_hz: int = 24000, kinds=("noise_burst", "tone")) -> "EventCatalog":
        """Alternating synthetic events, each reproducible from its own seed."""
        entries = []
        for i in range(count):
            kind = kinds[i % len(kinds)]
            entries.append(CatalogEntry(tuple(SYNTH_KINDS[kind][1]),
                                        synth=(kind, (seed, i), num_samples, sample_rate_hz)))
        return cls(entries)


@dataclass
class NoisePool:
    clips: list[MonauralClip] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.clips)

    @classmethod
    def from_dir(cls, directory) -> "NoisePool":
        files = sorted(Path(directory).glob("*.wav"))
        return cls([read_mono(f) for f in files])

    @classmethod
    def synthetic(cls, count: int = 8, seconds: float = 10.0, sample_rate_hz: int = 24000,
                  seed: int = 0) -> "NoisePool":
        """Stationary coloured noise standing in for ambient recordings."""
        clips = []
        n = int(round(seconds * sample_rate_hz))
        for i in range(count):
            rng = np.random.default_rng((seed, 1_000_003, i))
            spectrum = np.fft.rfft(rng.standard_normal(n))
            freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
            spectrum /= np.maximum(freqs, 20.0) ** rng.uniform(0.0, 1.0)
            sig = np.fft.irfft(spectrum, n)
            clips.append(MonauralClip(sig / np.std(sig) * 0.1, sample_rate_hz))
        return cls(clips)

    def segment(self, rng: np.random.Generator, n: int) -> MonauralClip:
        clip = self.clips[int(rng.integers(len(self.clips)))]
        data = clip.samples
        if len(data) < n:
            data = np.tile(data, int(math.ceil(n / len(data))))
        offset = int(rng.integers(0, len(data) - n + 1))
        return MonauralClip(data[offset:offset + n], clip.sample_rate_hz)


# -- scene sampling ----------------------------------------------------------------

@dataclass
class SamplerConfig:
    snr_range_db: tuple[float, float] = (0.0, 15.0)
    segment_seconds: float = 4.0
    seed: int = 0
    noise_enabled: bool = False
    speed_of_sound_mps: float = SPEED_OF_SOUND
    normalize: bool = True

    def __post_init__(self):
        self.snr_range_db = tuple(float(v) for v in self.snr_range_db)
        low, high = self.snr_range_db
        if not low <= high:
            raise ConfigError(f"snr range {self.snr_range_db} has low > high")
        if not self.segment_seconds > 0:
            raise ConfigError("segment_seconds must be positive")

    def segment_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.segment_seconds * sample_rate_hz))


@lru_cache(maxsize=8)
def epoch_order(seed: int, epoch: int, size: int) -> tuple[int, ...]:
    """Seeded shuffle of the catalog used for one epoch."""
    rng = np.random.default_rng((seed, epoch, 0x0E70C))
    return tuple(int(i) for i in rng.permutation(size))


def take_segment(clip: MonauralClip, n: int, rng: np.random.Generator) -> MonauralClip:
    """A random ``n``-sample window of ``clip``; zero-padded at the end if it is shorter."""
    data = clip.samples
    if len(data) <= n:
        return MonauralClip(np.pad(data, (0, n - len(data))), clip.sample_rate_hz)
    offset = int(rng.integers(0, len(data) - n + 1))
    return MonauralClip(data[offset:offset + n], clip.sample_rate_hz)


def sample_scene(epoch: int, index: int, catalog: EventCatalog, hrirs: HRIRSet,
                 templates: TemplateSet, noise_pool: NoisePool | None, cfg: SamplerConfig) -> SpatialScene:
    if len(catalog) == 0:
        raise ConfigError("event catalog is empty")
    if not 0 <= index < len(catalog):
        raise DomainError(f"index {index} outside epoch of {len(catalog)} events")
    if cfg.noise_enabled and not noise_pool:
        raise ConfigError("noise is enabled but the noise pool is empty")
    entry = catalog[epoch_order(cfg.seed, epoch, len(catalog))[index]]
    rng = np.random.default_rng((cfg.seed, epoch, index))
    event = entry.load()
    if event.sample_rate_hz != hrirs.sample_rate_hz:
        raise DomainError(f"event rate {event.sample_rate_hz} != HRIR rate {hrirs.sample_rate_hz}")
    segment = take_segment(event, cfg.segment_samples(event.sample_rate_hz), rng)
    azimuth = int(hrirs.azimuths[int(rng.integers(len(hrirs)))])
    template = templates[int(rng.integers(len(templates)))]
    label = entry.labels[int(rng.integers(len(entry.labels)))]
    noise = snr = None
    if cfg.noise_enabled:
        noise = noise_pool.segment(rng, len(segment))
        snr = float(rng.uniform(*cfg.snr_range_db))
    scale = 1.0
    if cfg.normalize:
        tau = compute_delay(hrirs.distance_m, cfg.speed_of_sound_mps, segment.sample_rate_hz)
        std = float(np.std(delay_input(segment, tau).samples))
        if std > 0:
            scale = 1.0 / std
    return SpatialScene(segment, label, azimuth, fill_template(template, azimuth, label),
                        noise, snr, scale, seed=cfg.seed)


def epoch_scenes(epoch: int, catalog: EventCatalog, hrirs: HRIRSet, templates: TemplateSet,
                 noise_pool: NoisePool | None, cfg: SamplerConfig):
    for index in range(len(catalog)):
        yield sample_scene(epoch, index, catalog, hrirs, templates, noise_pool, cfg)


# -- per-clip processing ---------------------------------------------------------

def normalize_pair(mono: MonauralClip, binaural: BinauralClip) -> tuple[MonauralClip, BinauralClip, float]:
    """Scale both clips by ``1 / std(mono)`` so the mono clip has unit variance."""
    std = float(np.std(mono.samples))
    if std == 0.0:
        raise DomainError("mono clip has zero variance")
    scale = 1.0 / std
    return (MonauralClip(mono.samples * scale, mono.sample_rate_hz),
            BinauralClip(binaural.samples * scale, binaural.sample_rate_hz), scale)


def trim_silence(clip: MonauralClip, threshold_db: float = -40.0, frame_ms: float = 20.0) -> MonauralClip:
    """Drop leading and trailing frames more than ``-threshold_db`` below the loudest frame."""
    x = clip.samples
    frame = max(1, int(round(frame_ms * 1e-3 * clip.sample_rate_hz)))
    n_frames = int(math.ceil(len(x) / frame))
    padded = np.pad(x, (0, n_frames * frame - len(x)))
    rms = np.sqrt(np.mean(padded.reshape(n_frames, frame) ** 2, axis=1))
    peak = rms.max()
    if peak == 0.0:
        raise DomainError("clip is entirely silent; nothing left after trimming")
    if threshold_db == -math.inf:
        return clip
    active = np.flatnonzero(rms >= peak * 10.0 ** (threshold_db / 20.0))
    start = active[0] * frame
    stop = min(len(x), (active[-1] + 1) * frame)
    return MonauralClip(x[start:stop], clip.sample_rate_hz)


def ingest_clip(clip: MonauralClip, threshold_db: float = -40.0) -> MonauralClip | None:
    """Trim silence; ``None`` if the result falls outside [0.5 s, 30 s]."""
    try:
        trimmed = trim_silence(clip, threshold_db)
    except DomainError:
        return None
    if not MIN_EVENT_S <= trimmed.duration_s <= MAX_EVENT_S:
        return None
    return trimmed
