"""Ground-truth binaural targets, delayed monaural inputs and noise mixing.

A training pair is built from a raw event ``x_raw`` and an HRIR pair ``r``:

* target ``y``: ``x_raw * r`` truncated to the event length,
* input ``x``:  ``x_raw`` shifted right by the source-to-head propagation
  delay ``round(d / c * fs)`` samples,

with an optional noise track added identically to the input and to both
ears of the target.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .audio import BinauralClip, MonauralClip, atomic_write_bytes, read_wav, write_wav
from .errors import DomainError

SPEED_OF_SOUND = 343.0
DEFAULT_DISTANCE_M = 1.47
DEFAULT_HEAD_RADIUS_M = 0.0875
NUM_AZIMUTHS = 36


@dataclass
class HRIRSet:
    """Azimuth-indexed HRIR pairs; each entry is a ``(2, Nr)`` array."""

    entries: dict[int, np.ndarray]
    distance_m: float = DEFAULT_DISTANCE_M
    sample_rate_hz: int = 24000
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise DomainError("HRIR set is empty")
        lengths = set()
        clean = {}
        for az, pair in self.entries.items():
            az = int(az)
            if az % 10 or not 0 <= az < 360:
                raise DomainError(f"azimuth {az} is not a multiple of 10 in [0, 350]")
            if az in clean:
                raise DomainError(f"duplicate azimuth {az}")
            pair = np.asarray(pair, dtype=np.float64)
            if pair.ndim != 2 or pair.shape[0] != 2:
                raise DomainError(f"HRIR for azimuth {az} must have shape (2, Nr), got {pair.shape}")
            lengths.add(pair.shape[1])
            clean[az] = pair
        if len(lengths) != 1:
            raise DomainError(f"HRIRs have inconsistent lengths {sorted(lengths)}")
        if not self.distance_m > 0:
            raise DomainError("distance_m must be positive")
        self.entries = dict(sorted(clean.items()))

    def __getitem__(self, azimuth_deg: int) -> np.ndarray:
        try:
            return self.entries[int(azimuth_deg)]
        except KeyError:
            raise DomainError(f"azimuth {azimuth_deg} not in HRIR set {self.azimuths}") from None

    def __contains__(self, azimuth_deg) -> bool:
        return int(azimuth_deg) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def azimuths(self) -> list[int]:
        return list(self.entries)

    @property
    def length(self) -> int:
        return next(iter(self.entries.values())).shape[1]

    @property
    def is_full(self) -> bool:
        return len(self.entries) == NUM_AZIMUTHS

    @classmethod
    def load(cls, manifest_path) -> "HRIRSet":
        """Load from a JSON manifest listing one stereo WAV per azimuth."""
        manifest_path = Path(manifest_path)
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, ValueError) as exc:
            raise DomainError(f"cannot read HRIR manifest {manifest_path}: {exc}") from exc
        rate = int(manifest["sample_rate_hz"])
        entries = {}
        for item in manifest["entries"]:
            data, file_rate = read_wav(manifest_path.parent / item["file"])
            if file_rate != rate:
                raise DomainError(f"{item['file']}: rate {file_rate} != manifest rate {rate}")
            if data.shape[0] != 2:
                raise DomainError(f"{item['file']}: HRIR files must be stereo")
            entries[int(item["azimuth_deg"])] = data
        return cls(entries, float(manifest["distance_m"]), rate, manifest.get("meta", {}))

    def save(self, out_dir) -> Path:
        """Write one float32 stereo WAV per azimuth plus ``manifest.json``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        items = []
        for az, pair in self.entries.items():
            name = f"hrir_az{az:03d}.wav"
            write_wav(out_dir / name, BinauralClip(pair, self.sample_rate_hz))
            items.append({"azimuth_deg": az, "file": name})
        manifest = {
            "sample_rate_hz": self.sample_rate_hz,
            "distance_m": self.distance_m,
            "entries": items,
        }
        if self.meta:
            manifest["meta"] = self.meta
        path = out_dir / "manifest.json"
        atomic_write_bytes(path, (json.dumps(manifest, indent=2) + "\n").encode())
        return path


def compute_delay(distance_m: float, speed_of_sound_mps: float = SPEED_OF_SOUND,
                  sample_rate_hz: int = 24000) -> int:
    """Propagation delay in whole samples, ``d / c * fs`` rounded half away from zero.

    Evaluated in exact rational arithmetic on the given floats so that ties
    are decided correctly.
    """
    for name, value in (("distance_m", distance_m), ("speed_of_sound_mps", speed_of_sound_mps),
                        ("sample_rate_hz", sample_rate_hz)):
        if not (math.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be positive and finite, got {value!r}")
    exact = Fraction(distance_m) / Fraction(speed_of_sound_mps) * Fraction(sample_rate_hz)
    return int(math.floor(exact + Fraction(1, 2)))


def delay_input(raw: MonauralClip, tau: int) -> MonauralClip:
    n = len(raw)
    if tau < 0 or tau > n:
        raise DomainError(f"delay {tau} outside [0, {n}]")
    out = np.zeros(n)
    out[tau:] = raw.samples[: n - tau]
    return MonauralClip(out, raw.sample_rate_hz)


def render_binaural(raw: MonauralClip, hrir: np.ndarray, hrir_rate_hz: int | None = None) -> BinauralClip:
    """Convolve ``raw`` with a ``(2, Nr)`` HRIR pair, keeping the first N samples."""
    if hrir_rate_hz is not None and hrir_rate_hz != raw.sample_rate_hz:
        raise DomainError(f"sample-rate mismatch: audio {raw.sample_rate_hz} Hz, HRIR {hrir_rate_hz} Hz")
    hrir = np.asarray(hrir, dtype=np.float64)
    if hrir.ndim != 2 or hrir.shape[0] != 2:
        raise DomainError(f"HRIR pair must have shape (2, Nr), got {hrir.shape}")
    n = len(raw)
    full = fftconvolve(raw.samples[None, :], hrir, axes=1)
    return BinauralClip(full[:, :n], raw.sample_rate_hz)


def mean_binaural_energy(binaural: BinauralClip) -> float:
    return float(np.sum(binaural.samples ** 2) / 2.0)


def noise_gain(binaural: BinauralClip, noise: MonauralClip, snr_db: float) -> float:
    """Scalar g with 10 log10(mean ear energy / ||g * noise||^2) == snr_db."""
    signal_energy = mean_binaural_energy(binaural)
    noise_energy = float(np.sum(noise.samples ** 2))
    if signal_energy <= 0.0:
        raise DomainError("binaural signal is silent; SNR is undefined")
    if noise_energy <= 0.0:
        raise DomainError("noise is silent; SNR is undefined")
    return math.sqrt(signal_energy / (noise_energy * 10.0 ** (snr_db / 10.0)))


def mix_noise(mono: MonauralClip, binaural: BinauralClip, noise: MonauralClip | None,
              snr_db: float | None) -> tuple[MonauralClip, BinauralClip]:
    """Add the same scaled noise track to the mono clip and to both ears."""
    if noise is None or snr_db is None or snr_db == math.inf:
        return mono, binaural
    if not math.isfinite(snr_db):
        raise DomainError(f"snr_db must be finite, got {snr_db}")
    n = len(mono)
    if len(binaural) != n or len(noise) != n:
        raise DomainError(f"length mismatch: mono {n}, binaural {len(binaural)}, noise {len(noise)}")
    if not (mono.sample_rate_hz == binaural.sample_rate_hz == noise.sample_rate_hz):
        raise DomainError("sample-rate mismatch between mono, binaural and noise")
    scaled = noise_gain(binaural, noise, snr_db) * noise.samples
    return (MonauralClip(mono.samples + scaled, mono.sample_rate_hz),
            BinauralClip(binaural.samples + scaled[None, :], binaural.sample_rate_hz))


@dataclass(frozen=True)
class SpatialScene:
    event: MonauralClip
    event_label: str
    azimuth_deg: int
    prompt: str
    noise: MonauralClip | None = None
    snr_db: float | None = None
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.azimuth_deg % 10 or not 0 <= self.azimuth_deg < 360:
            raise DomainError(f"azimuth {self.azimuth_deg} is not one of 0, 10, ..., 350")
        if self.noise is not None and (self.snr_db is None or not math.isfinite(self.snr_db)):
            raise DomainError("a noisy scene needs a finite snr_db")


def make_pair(scene: SpatialScene, hrirs: HRIRSet, speed_of_sound_mps: float = SPEED_OF_SOUND
              ) -> tuple[MonauralClip, BinauralClip, str]:
    """Build ``(input, target, prompt)`` for one scene.

    ``scene.scale`` multiplies the clean pair; noise is mixed in afterwards so
    that ``scene.snr_db`` is the final SNR.
    """
    hrir = hrirs[scene.azimuth_deg]
    event = scene.event
    target = render_binaural(event, hrir, hrirs.sample_rate_hz)
    tau = compute_delay(hrirs.distance_m, speed_of_sound_mps, event.sample_rate_hz)
    mono = delay_input(event, tau)
    if scene.scale != 1.0:
        mono = MonauralClip(mono.samples * scene.scale, mono.sample_rate_hz)
        target = BinauralClip(target.samples * scene.scale, target.sample_rate_hz)
    mono, target = mix_noise(mono, target, scene.noise, scene.snr_db)
    return mono, target, scene.prompt


# -- synthetic spherical-head HRIRs ---------------------------------------

_SINC_HALF_WIDTH = 16


def _fractional_impulse(length: int, delay: float, gain: float) -> np.ndarray:
    """Blackman-windowed sinc approximating ``gain * delta[n - delay]``."""
    n = np.arange(length, dtype=np.float64)
    t = n - delay
    window = np.where(np.abs(t) <= _SINC_HALF_WIDTH,
                      0.42 + 0.5 * np.cos(np.pi * t / _SINC_HALF_WIDTH)
                      + 0.08 * np.cos(2 * np.pi * t / _SINC_HALF_WIDTH), 0.0)
    return gain * np.sinc(t) * window


def _left_ear_ir(azimuth_deg: float, head_radius_m: float, distance_m: float, sample_rate_hz: int,
                 length: int, speed_of_sound_mps: float, ild_db: float, pinna_gain: float) -> np.ndarray:
    az = math.radians(azimuth_deg)
    # angle between the source direction and the left-ear axis (azimuth 90)
    cos_incidence = math.sin(az)
    incidence = math.acos(max(-1.0, min(1.0, cos_incidence)))
    if incidence <= math.pi / 2:
        path = -head_radius_m * cos_incidence
    else:
        path = head_radius_m * (incidence - math.pi / 2)
    delay = (distance_m + path) / speed_of_sound_mps * sample_rate_hz
    shadow = max(0.0, -cos_incidence)
    gain = 10.0 ** (-ild_db * shadow / 20.0)
    ir = _fractional_impulse(length, delay, gain)
    # pinna-like echo whose lag grows toward the back; breaks front/back symmetry
    echo_lag = 2.0 + 6.0 * (1.0 - math.cos(az)) / 2.0
    ir += _fractional_impulse(length, delay + echo_lag, -pinna_gain * gain)
    return ir


def synth_hrir(azimuth_deg: float, head_radius_m: float = DEFAULT_HEAD_RADIUS_M,
               distance_m: float = DEFAULT_DISTANCE_M, sample_rate_hz: int = 24000,
               length: int = 256, speed_of_sound_mps: float = SPEED_OF_SOUND,
               ild_db: float = 12.0, pinna_gain: float = 0.5) -> np.ndarray:
    """Spherical-head HRIR pair, shape ``(2, length)``.

    Azimuth is counter-clockwise from the front, so 90 is the listener's
    left.  Per-ear delays follow Woodworth's path model, the far ear is
    attenuated by up to ``ild_db`` in proportion to ``|sin(azimuth)|``, and a
    short negative echo with a front/back-dependent lag stands in for pinna
    cues.  The right ear is the left-ear model evaluated at the mirrored
    azimuth, so ``synth_hrir(360 - a)`` is exactly ``synth_hrir(a)`` with
    channels swapped.
    """
    if not 0 <= azimuth_deg < 360:
        raise DomainError(f"azimuth {azimuth_deg} outside [0, 360)")
    if not head_radius_m > 0 or not distance_m > 0:
        raise DomainError("head radius and distance must be positive")
    max_delay = (distance_m + head_radius_m * math.pi / 2) / speed_of_sound_mps * sample_rate_hz
    if max_delay + 8.0 + _SINC_HALF_WIDTH >= length:
        raise DomainError(f"HRIR length {length} too short for a {max_delay:.1f}-sample delay")
    args = (head_radius_m, distance_m, sample_rate_hz, length, speed_of_sound_mps, ild_db, pinna_gain)
    left = _left_ear_ir(azimuth_deg, *args)
    right = _left_ear_ir((360 - azimuth_deg) % 360, *args)
    return np.stack([left, right])


def synth_hrir_set(num_azimuths: int = NUM_AZIMUTHS, head_radius_m: float = DEFAULT_HEAD_RADIUS_M,
                   distance_m: float = DEFAULT_DISTANCE_M, sample_rate_hz: int = 24000,
                   length: int = 256) -> HRIRSet:
    """Synthetic set on ``num_azimuths`` evenly spaced 10-degree-grid directions."""
    if num_azimuths < 1 or NUM_AZIMUTHS % num_azimuths:
        raise DomainError(f"num_azimuths must divide {NUM_AZIMUTHS}, got {num_azimuths}")
    step = 360 // num_azimuths
    entries = {az: synth_hrir(az, head_radius_m, distance_m, sample_rate_hz, length)
               for az in range(0, 360, step)}
    meta = {"model": "spherical-head", "head_radius_m": head_radius_m, "length": length}
    return HRIRSet(entries, distance_m, sample_rate_hz, meta)

