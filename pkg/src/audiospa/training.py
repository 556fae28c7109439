"""Training harness for the generator and the localizer, checkpoints and evaluation."""
from __future__ import annotations

import copy
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio import BinauralClip, atomic_write_bytes
from .augmentation import EventCatalog, NoisePool, SamplerConfig, TemplateSet, sample_scene
from .backbone import AudioSpa, BackboneConfig, encode_batch, l1_loss
from .errors import CheckpointError, ConfigError, DomainError, NumericalError
from .localization import LocalizationModel, LocalizerConfig, bce_loss, decode_doa, multi_hot
from .metrics import EvalReport
from .signal_model import SPEED_OF_SOUND, HRIRSet, SpatialScene, make_pair
from .text_conditioning import TextEncoder

log = logging.getLogger(__name__)

CACHE_ENV = "AUDIOSPA_CACHE"


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "audiospa"))


@dataclass
class TrainConfig:
    max_epochs: int = 50
    lr_init: float = 1e-3
    lr_min: float = 1e-4
    lr_patience: int = 3
    lr_factor: float = 0.5
    early_stop_patience: int = 10
    batch_size: int = 16
    weight_decay: float = 1e-2
    grad_clip: float | None = 5.0
    improvement_threshold: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.lr_min <= self.lr_init:
            raise ConfigError("lr_min must not exceed lr_init")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not 0 < self.lr_factor < 1:
            raise ConfigError("lr_factor must be in (0, 1)")


class PlateauSchedule:
    """Halve-on-plateau learning rate plus early stopping, driven by one loss per epoch.

    An epoch improves when its loss is below ``best * (1 - threshold)``.
    After ``lr_patience`` consecutive non-improving epochs the rate is
    multiplied by ``lr_factor`` (floored at ``lr_min``) and the count
    restarts; ``early_stop_patience`` non-improving epochs since the best one
    end training.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.lr_init
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0
        self._since_decay = 0

    def step(self, loss: float) -> bool:
        """Record one epoch's loss; returns True if it improved on the best."""
        self.epoch += 1
        improved = self.best == math.inf or loss < self.best - self.cfg.improvement_threshold * abs(self.best)
        if improved:
            self.best = loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            self._since_decay = 0
        else:
            self.bad_epochs += 1
            self._since_decay += 1
            if self._since_decay >= self.cfg.lr_patience:
                self.lr = max(self.lr * self.cfg.lr_factor, self.cfg.lr_min)
                self._since_decay = 0
        return improved

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.cfg.early_stop_patience


# -- data sources ---------------------------------------------------------------

class SceneSource:
    """On-the-fly scenes: one pass over the catalog per epoch."""

    def __init__(self, catalog: EventCatalog, hrirs: HRIRSet, templates: TemplateSet,
                 noise_pool: NoisePool | None, sampler: SamplerConfig):
        self.catalog = catalog
        self.hrirs = hrirs
        self.templates = templates
        self.noise_pool = noise_pool
        self.sampler = sampler

    def __len__(self) -> int:
        return len(self.catalog)

    def scene(self, epoch: int, index: int) -> SpatialScene:
        return sample_scene(epoch, index, self.catalog, self.hrirs, self.templates, self.noise_pool, self.sampler)

    def scenes(self, epoch: int):
        return (self.scene(epoch, i) for i in range(len(self)))


class FixedScenes:
    """The same scene list every epoch (validation sets, overfit runs)."""

    def __init__(self, scenes: list[SpatialScene], hrirs: HRIRSet):
        if not scenes:
            raise ConfigError("empty scene list")
        self.scene_list = list(scenes)
        self.hrirs = hrirs

    def __len__(self) -> int:
        return len(self.scene_list)

    def scenes(self, epoch: int):
        return iter(self.scene_list)

    @classmethod
    def freeze(cls, source: SceneSource, epoch: int = 0) -> "FixedScenes":
        return cls(list(source.scenes(epoch)), source.hrirs)


def _batches(iterable, size):
    batch = []
    for item in iterable:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def _pairs(scenes, hrirs, speed_of_sound):
    mono, target, prompts, azimuths = [], [], [], []
    for sc in scenes:
        x, y, p = make_pair(sc, hrirs, speed_of_sound)
        mono.append(x.samples)
        target.append(y.samples)
        prompts.append(p)
        azimuths.append(sc.azimuth_deg)
    return np.stack(mono), np.stack(target), prompts, azimuths


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, model: torch.nn.Module, meta: dict) -> Path:
    """``<path>.pt`` holds the tensors, ``<path>.json`` the sidecar metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    atomic_write_bytes(path.with_suffix(".pt"), buf.getvalue())
    atomic_write_bytes(path.with_suffix(".json"), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    return path.with_suffix(".pt")


def _read_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint metadata {path.with_suffix('.json')}: {exc}") from exc
    try:
        state = torch.load(path.with_suffix(".pt"), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint tensors {path.with_suffix('.pt')}: {exc}") from exc
    return state, meta


def _restore(model: torch.nn.Module, state: dict, path) -> None:
    try:
        model.load_state_dict(state, strict=True)
    except (RuntimeError, KeyError) as exc:
        raise CheckpointError(f"checkpoint {path} does not match its configuration: {exc}") from exc


def generator_meta(model: AudioSpa, epoch: int, val_loss: float, seed: int) -> dict:
    return {"kind": "generator", "config": model.config.to_dict(), "encoder_key": model.encoder_key,
            "epoch": epoch, "val_loss": val_loss, "rng_seed": seed}


def localizer_meta(model: LocalizationModel, epoch: int, val_loss: float, seed: int) -> dict:
    return {"kind": "localizer", "config": model.config.to_dict(), "encoder_key": None,
            "epoch": epoch, "val_loss": val_loss, "rng_seed": seed}


def load_generator(path) -> tuple[AudioSpa, dict]:
    state, meta = _read_checkpoint(path)
    if meta.get("kind") != "generator":
        raise CheckpointError(f"{path} is not a generator checkpoint")
    try:
        model = AudioSpa(BackboneConfig(**meta["config"]), encoder_key=meta["encoder_key"])
    except (TypeError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"bad generator config in {path}: {exc}") from exc
    _restore(model, state, path)
    model.eval()
    return model, meta


def load_localizer(path) -> tuple[LocalizationModel, dict]:
    state, meta = _read_checkpoint(path)
    if meta.get("kind") != "localizer":
        raise CheckpointError(f"{path} is not a localizer checkpoint")
    try:
        model = LocalizationModel(LocalizerConfig(**meta["config"]))
    except (TypeError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"bad localizer config in {path}: {exc}") from exc
    _restore(model, state, path)
    model.eval()
    return model, meta


# -- training loops ------------------------------------------------------------------

@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf
    checkpoint: Path | None = None


def _dump_state(ckpt_dir, name, info):
    if ckpt_dir is None:
        return None
    path = Path(ckpt_dir) / f"{name}-nan-dump.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(path, json.dumps(info, indent=2, default=str).encode())
    return path


def _fit(model, cfg: TrainConfig, train_epoch, val_loss_fn, name, meta_fn, log_path=None, ckpt_dir=None
         ) -> TrainResult:
    """Generic epoch loop shared by both networks.

    ``train_epoch(epoch, optimizer)`` returns the mean training loss,
    ``val_loss_fn()`` the validation loss (or None to monitor training loss).
    """
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr_init, weight_decay=cfg.weight_decay)
    schedule = PlateauSchedule(cfg)
    result = TrainResult(model)
    best_state = copy.deepcopy(model.state_dict())
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            for group in optimizer.param_groups:
                group["lr"] = schedule.lr
            lr = schedule.lr
            t0 = time.perf_counter()
            train_loss = train_epoch(epoch, optimizer)
            val_loss = val_loss_fn()
            monitored = train_loss if val_loss is None else val_loss
            if not (math.isfinite(train_loss) and math.isfinite(monitored)):
                dump = _dump_state(ckpt_dir, name, {"epoch": epoch, "train_loss": train_loss,
                                                     "val_loss": val_loss, "lr": lr,
                                                     "history": result.history})
                raise NumericalError(f"{name}: non-finite loss at epoch {epoch} (state dump: {dump})")
            improved = schedule.step(monitored)
            record = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
            result.history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            log.info("%s epoch %d train %.6f val %s lr %.2e (%.1fs)", name, epoch, train_loss,
                     "-" if val_loss is None else f"{val_loss:.6f}", lr, time.perf_counter() - t0)
            if improved:
                best_state = copy.deepcopy(model.state_dict())
                result.best_epoch, result.best_loss = epoch, monitored
            if schedule.should_stop:
                break
    finally:
        if log_fh:
            log_fh.close()
    model.load_state_dict(best_state)
    model.eval()
    if ckpt_dir is not None:
        result.checkpoint = save_checkpoint(Path(ckpt_dir) / name, model,
                                            meta_fn(model, result.best_epoch, result.best_loss, cfg.seed))
    return result


def _check_finite_step(loss, name):
    if not torch.isfinite(loss):
        raise NumericalError(f"{name}: non-finite training loss")


def train_audiospa(cfg: TrainConfig, model_cfg: BackboneConfig, train_source, encoder: TextEncoder,
                   val_source=None, speed_of_sound: float = SPEED_OF_SOUND, log_path=None, ckpt_dir=None,
                   name: str = "generator", dtype=torch.float32) -> TrainResult:
    """L1 training of the generator; returns the lowest-loss weights."""
    torch.manual_seed(cfg.seed)
    if model_cfg.text_dim != encoder.dim:
        raise ConfigError(f"model text_dim {model_cfg.text_dim} != encoder dim {encoder.dim}")
    model = AudioSpa(model_cfg, encoder_key=encoder.key).to(dtype)
    token_cache: dict = {}
    hrirs = train_source.hrirs

    def run_batch(batch, train: bool):
        mono, target, prompts, _ = _pairs(batch, hrirs, speed_of_sound)
        tokens, mask = encode_batch(prompts, encoder, dtype, token_cache)
        x = torch.from_numpy(mono).to(dtype)
        y = torch.from_numpy(target).to(dtype)
        return l1_loss(model(x, tokens, mask), y)

    def train_epoch(epoch, optimizer):
        model.train()
        total, count = 0.0, 0
        for batch in _batches(train_source.scenes(epoch), cfg.batch_size):
            loss = run_batch(batch, True)
            _check_finite_step(loss, name)
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            total += loss.item() * len(batch)
            count += len(batch)
        return total / count

    def val_loss():
        if val_source is None:
            return None
        model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for batch in _batches(val_source.scenes(0), cfg.batch_size):
                total += run_batch(batch, False).item() * len(batch)
                count += len(batch)
        return total / count

    return _fit(model, cfg, train_epoch, val_loss, name, generator_meta, log_path, ckpt_dir)


def train_localizer(cfg: TrainConfig, loc_cfg: LocalizerConfig, train_source, val_source=None,
                    speed_of_sound: float = SPEED_OF_SOUND, log_path=None, ckpt_dir=None,
                    name: str = "localizer") -> TrainResult:
    """BCE training on ground-truth binaural targets, labels from scene azimuths."""
    torch.manual_seed(cfg.seed)
    model = LocalizationModel(loc_cfg)
    hrirs = train_source.hrirs

    def run_batch(batch):
        _, target, _, azimuths = _pairs(batch, hrirs, speed_of_sound)
        labels = torch.from_numpy(np.stack([multi_hot([az]) for az in azimuths])).float()
        phase, magnitude = model.features(target)
        return bce_loss(model(phase, magnitude), labels)

    def train_epoch(epoch, optimizer):
        model.train()
        total, count = 0.0, 0
        for batch in _batches(train_source.scenes(epoch), cfg.batch_size):
            loss = run_batch(batch)
            _check_finite_step(loss, name)
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            total += loss.item() * len(batch)
            count += len(batch)
        return total / count

    def val_loss():
        if val_source is None:
            return None
        model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for batch in _batches(val_source.scenes(0), cfg.batch_size):
                total += run_batch(batch).item() * len(batch)
                count += len(batch)
        return total / count

    return _fit(model, cfg, train_epoch, val_loss, name, localizer_meta, log_path, ckpt_dir)


# -- evaluation ----------------------------------------------------------------------

EVAL_MODES = ("generated", "ground-truth", "mono")


def evaluate(scenes, hrirs: HRIRSet, localizer: LocalizationModel, generator: AudioSpa | None = None,
             encoder: TextEncoder | None = None, mode: str = "generated",
             speed_of_sound: float = SPEED_OF_SOUND, workers: int = 1, metadata: dict | None = None
             ) -> EvalReport:
    """Localize and score each scene's estimate against its (possibly noisy) target.

    ``mode`` picks the estimate: the generator output, the target itself, or
    the monaural input duplicated to both ears.
    """
    if mode not in EVAL_MODES:
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    scenes = list(scenes)
    if not scenes:
        raise DomainError("no scenes to evaluate")
    if mode == "generated":
        if generator is None or encoder is None:
            raise ConfigError("generated mode needs a generator and an encoder")
        if generator.encoder_key != encoder.key or generator.config.text_dim != encoder.dim:
            raise CheckpointError(f"generator was trained with encoder {generator.encoder_key!r} "
                                  f"(dim {generator.config.text_dim}); runtime encoder is "
                                  f"{encoder.key!r} (dim {encoder.dim})")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pairs = list(pool.map(lambda sc: make_pair(sc, hrirs, speed_of_sound), scenes))
    report = EvalReport(metadata=dict(metadata or {}, mode=mode))
    for scene, (mono, target, prompt) in zip(scenes, pairs):
        if mode == "generated":
            estimate = generator.spatialize(mono, prompt, encoder)
        elif mode == "ground-truth":
            estimate = target
        else:
            estimate = BinauralClip.duplicate(mono)
        predicted = decode_doa(localizer.posterior(estimate), 1)[0]
        report.add(scene.azimuth_deg, predicted, estimate, target)
    return report

