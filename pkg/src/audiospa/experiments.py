"""Desk-scale experiment recipes shared by the acceptance suite and the CLI.

Clips are 4096 samples (~0.17 s at 24 kHz) and the localizer analyses a
window of the same length, so both networks train on one CPU core in minutes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import MonauralClip
from .augmentation import EventCatalog, SamplerConfig, TemplateSet, fill_template, noise_burst
from .backbone import BackboneConfig
from .localization import LocalizerConfig
from .signal_model import HRIRSet, SpatialScene, compute_delay, delay_input, synth_hrir_set
from .text_conditioning import STUB_DIM
from .training import FixedScenes, SceneSource, TrainConfig

DESK_SAMPLES = 4096
DESK_RATE = 24000
OVERFIT_AZIMUTHS = (0, 40, 90, 130, 180, 220, 270, 320)
OVERFIT_TEMPLATE = "At {azimuth} degrees, the {event} rings out."
OVERFIT_LABEL = "noise burst"


def desk_hrirs() -> HRIRSet:
    return synth_hrir_set(sample_rate_hz=DESK_RATE)


def overfit_scenes(hrirs: HRIRSet, seed: int = 0, azimuths=OVERFIT_AZIMUTHS) -> list[SpatialScene]:
    """One noise-burst event per azimuth, same template and label throughout.

    Only the azimuth word differs between prompts, so the generator can only
    tell the scenes apart through the text path.
    """
    scenes = []
    tau = compute_delay(hrirs.distance_m, sample_rate_hz=DESK_RATE)
    for i, az in enumerate(azimuths):
        rng = np.random.default_rng((seed, 0x0F17, i))
        event = MonauralClip(noise_burst(rng, DESK_SAMPLES, DESK_RATE), DESK_RATE)
        scale = 1.0 / float(np.std(delay_input(event, tau).samples))
        scenes.append(SpatialScene(event, OVERFIT_LABEL, az, fill_template(OVERFIT_TEMPLATE, az, OVERFIT_LABEL),
                                   scale=scale, seed=seed))
    return scenes


def overfit_configs(seed: int = 0, steps: int = 400) -> tuple[TrainConfig, BackboneConfig]:
    """One full-batch step per epoch; the monitored loss is the training loss."""
    train = TrainConfig(max_epochs=steps, lr_init=3e-3, lr_min=1e-4, lr_patience=10, lr_factor=0.5,
                        early_stop_patience=60, batch_size=8, seed=seed)
    model = BackboneConfig(residual_channels=32, num_blocks=10, heads=4, text_dim=STUB_DIM)
    return train, model


@dataclass
class LocalizerRun:
    train: SceneSource
    val: FixedScenes
    test: FixedScenes
    train_cfg: TrainConfig
    loc_cfg: LocalizerConfig


def localizer_run(hrirs: HRIRSet, seed: int = 0, num_scenes: int = 10_000, epochs: int = 8,
                  num_val: int = 360, num_test: int = 720) -> LocalizerRun:
    """Clean noise-burst / tone scenes for the localizer, with disjoint val/test events."""
    templates = TemplateSet.load()
    sampler = SamplerConfig(segment_seconds=DESK_SAMPLES / DESK_RATE, seed=seed)
    event_len = int(1.5 * DESK_SAMPLES)

    def source(count, catalog_seed):
        catalog = EventCatalog.synthetic(count, seed=catalog_seed, num_samples=event_len, sample_rate_hz=DESK_RATE)
        return SceneSource(catalog, hrirs, templates, None, sampler)

    train = source(num_scenes, seed)
    val = FixedScenes.freeze(source(num_val, seed + 10_001))
    test = FixedScenes.freeze(source(num_test, seed + 20_002))
    cfg = TrainConfig(max_epochs=epochs, lr_init=1e-3, lr_min=1e-4, batch_size=32, seed=seed)
    return LocalizerRun(train, val, test, cfg, LocalizerConfig(window_samples=DESK_SAMPLES))
