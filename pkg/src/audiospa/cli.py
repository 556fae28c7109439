"""``audiospa`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (bad input files,
checkpoints, configs), 3 runtime error (numerical failure, unavailable
encoder).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from .audio import atomic_write_bytes, read_binaural, read_mono, write_wav
from .augmentation import SYNTH_KINDS, EventCatalog, NoisePool, SamplerConfig, TemplateSet
from .backbone import BackboneConfig
from .errors import CheckpointError, ConfigError, DomainError, EncoderUnavailableError
from .localization import LocalizerConfig, decode_doa
from .signal_model import (
    DEFAULT_DISTANCE_M,
    DEFAULT_HEAD_RADIUS_M,
    SPEED_OF_SOUND,
    HRIRSet,
    SpatialScene,
    make_pair,
    synth_hrir_set,
)
from .text_conditioning import get_encoder
from .training import (
    EVAL_MODES,
    FixedScenes,
    SceneSource,
    TrainConfig,
    cache_dir,
    evaluate,
    load_generator,
    load_localizer,
    train_audiospa,
    train_localizer,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- shared loaders -----------------------------------------------------------------

def _hrirs(path) -> HRIRSet:
    return HRIRSet.load(path) if path else synth_hrir_set()


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DomainError(f"{path} is not valid JSON: {exc}") from exc


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_scene_set(path) -> tuple[SceneSource, int, dict]:
    """Read a scene-set description.

    Keys: ``catalog`` (manifest path, or ``{"synthetic": {...}}``),
    ``hrirs``, ``templates``, ``noise_dir``, ``noise_enabled``,
    ``snr_range_db``, ``segment_seconds``, ``seed``, ``epoch``. Relative paths
    are resolved against the file's directory.
    """
    path = Path(path)
    desc = _read_json(path)
    if not isinstance(desc, dict) or "catalog" not in desc:
        raise DomainError(f"{path}: scene set needs a 'catalog' entry")
    base = path.parent
    cat = desc["catalog"]
    if isinstance(cat, dict) and "synthetic" in cat:
        try:
            catalog = EventCatalog.synthetic(**cat["synthetic"])
        except TypeError as exc:
            raise ConfigError(f"{path}: bad synthetic catalog options: {exc}") from exc
    elif isinstance(cat, str):
        catalog = EventCatalog.load(_resolve(base, cat))
    else:
        raise DomainError(f"{path}: 'catalog' must be a manifest path or {{'synthetic': {{...}}}}")
    if len(catalog) == 0:
        raise DomainError(f"{path}: the scene set is empty")
    hrirs = _hrirs(_resolve(base, desc.get("hrirs")))
    templates = TemplateSet.load(_resolve(base, desc.get("templates")))
    noise_dir = _resolve(base, desc.get("noise_dir"))
    noise = NoisePool.from_dir(noise_dir) if noise_dir else None
    sampler_keys = {f.name for f in fields(SamplerConfig)}
    sampler = SamplerConfig(**{k: v for k, v in desc.items() if k in sampler_keys})
    return SceneSource(catalog, hrirs, templates, noise, sampler), int(desc.get("epoch", 0)), desc


# -- commands --------------------------------------------------------------------------

def cmd_synth_hrirs(args) -> dict:
    hrirs = synth_hrir_set(args.azimuths, args.radius, args.distance, args.rate, args.length)
    manifest = hrirs.save(args.out)
    return {"message": f"wrote {len(hrirs)} HRIRs to {args.out}", "manifest": str(manifest),
            "azimuths": hrirs.azimuths}


def cmd_synth_events(args) -> dict:
    kinds = tuple(args.kinds)
    for k in kinds:
        if k not in SYNTH_KINDS:
            raise UsageError(f"unknown event kind {k!r}; choose from {sorted(SYNTH_KINDS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    catalog = EventCatalog.synthetic(args.count, args.seed, int(round(args.seconds * args.rate)), args.rate, kinds)
    items = []
    for i, entry in enumerate(catalog.entries):
        name = f"event_{i:05d}_{entry.synth[0]}.wav"
        write_wav(out / name, entry.load())
        items.append({"file": name, "labels": list(entry.labels)})
    manifest = out / "catalog.json"
    atomic_write_bytes(manifest, (json.dumps(items, indent=2) + "\n").encode())
    return {"message": f"wrote {len(items)} events to {out}", "manifest": str(manifest)}


def cmd_render(args) -> dict:
    mono = read_mono(args.mono)
    hrirs = _hrirs(args.hrirs)
    if args.azimuth not in hrirs:
        raise DomainError(f"azimuth {args.azimuth} is not in the HRIR set {hrirs.azimuths}")
    noise = None
    if args.noise:
        if args.snr is None:
            raise UsageError("--noise needs --snr")
        noise = NoisePool([read_mono(args.noise)]).segment(np.random.default_rng(args.seed), len(mono))
    scene = SpatialScene(mono, "", args.azimuth, "", noise, args.snr if noise else None, seed=args.seed)
    x, y, _ = make_pair(scene, hrirs, args.speed_of_sound)
    write_wav(args.out, y)
    result = {"message": f"rendered azimuth {args.azimuth} to {args.out}", "out": str(args.out)}
    if args.emit_input:
        in_path = Path(args.out).with_name(Path(args.out).stem + "_input.wav")
        write_wav(in_path, x)
        result["input"] = str(in_path)
    return result


def _encoder_for(meta: dict, override: str | None):
    key = meta["encoder_key"]
    if override and override != key:
        raise CheckpointError(f"checkpoint was trained with encoder {key!r}, not {override!r}")
    return get_encoder(key, meta["config"]["text_dim"])


def cmd_spatialize(args) -> dict:
    mono = read_mono(args.mono)
    model, meta = load_generator(args.ckpt)
    encoder = _encoder_for(meta, args.encoder)
    out = model.spatialize(mono, args.prompt, encoder)
    write_wav(args.out, out)
    return {"message": f"wrote {len(out)} binaural samples to {args.out}", "out": str(args.out)}


def cmd_localize(args) -> dict:
    audio = read_binaural(args.audio)
    model, _ = load_localizer(args.ckpt)
    posterior = model.posterior(audio)
    return {"azimuths": decode_doa(posterior, args.sources), "posterior": [round(float(p), 6) for p in posterior]}


def cmd_evaluate(args) -> dict:
    source, epoch, _ = load_scene_set(args.scenes)
    scenes = list(source.scenes(epoch))
    localizer, _ = load_localizer(args.loc_ckpt)
    generator = encoder = None
    meta = {"dataset": str(args.scenes), "loc_ckpt": str(args.loc_ckpt),
            "snr_db": list(source.sampler.snr_range_db) if source.sampler.noise_enabled else None}
    if args.mode == "generated":
        if not args.gen_ckpt:
            raise UsageError("--mode generated needs --gen-ckpt")
        generator, gen_meta = load_generator(args.gen_ckpt)
        encoder = _encoder_for(gen_meta, None)
        meta["gen_ckpt"] = str(args.gen_ckpt)
    report = evaluate(scenes, source.hrirs, localizer, generator, encoder, args.mode,
                      source.sampler.speed_of_sound_mps, args.workers, meta)
    stem = Path(args.report)
    json_path, csv_path = stem.with_suffix(".json"), stem.with_suffix(".csv")
    report.write_json(json_path)
    report.write_csv(csv_path, label=args.label or args.mode)
    agg = report.aggregates
    return {"message": (f"{args.mode}: MAE {agg['mae_deg']:.2f} ACC {agg['acc_pct']:.2f}% "
                        f"SDR {agg['sdr_db']:.2f} dB SISDR {agg['sisdr_db']:.2f} dB over {agg['count']} scenes"),
            "aggregates": agg, "report": str(json_path), "csv": str(csv_path)}


TRAIN_FIELDS = [f for f in fields(TrainConfig) if f.name != "seed"]


def cmd_train(args) -> dict:
    config = _read_json(args.config) if args.config else {}
    train_kw = dict(config.get("train", {}))
    for f in TRAIN_FIELDS:
        value = getattr(args, f.name)
        if value is not None:
            train_kw[f.name] = value
    train_kw["seed"] = args.seed
    try:
        cfg = TrainConfig(**train_kw)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
    source, _, _ = load_scene_set(args.train_scenes)
    val = None
    if args.val_scenes:
        val_source, val_epoch, _ = load_scene_set(args.val_scenes)
        val = FixedScenes.freeze(val_source, val_epoch)
    out = Path(args.out) if args.out else cache_dir() / "checkpoints"
    name = args.name or args.network
    log_path = out / f"{name}.log.jsonl"
    out.mkdir(parents=True, exist_ok=True)
    model_kw = config.get("model", {})
    try:
        if args.network == "generator":
            encoder = get_encoder(args.encoder or config.get("encoder", "stub"), model_kw.get("text_dim", 64))
            model_cfg = BackboneConfig(**{"text_dim": encoder.dim, **model_kw})
            result = train_audiospa(cfg, model_cfg, source, encoder, val, source.sampler.speed_of_sound_mps,
                                    log_path, out, name)
        else:
            result = train_localizer(cfg, LocalizerConfig(**model_kw), source, val,
                                     source.sampler.speed_of_sound_mps, log_path, out, name)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from exc
    return {"message": f"best epoch {result.best_epoch} loss {result.best_loss:.6f}; checkpoint {result.checkpoint}",
            "checkpoint": str(result.checkpoint), "log": str(log_path),
            "best_epoch": result.best_epoch, "best_loss": result.best_loss}


# -- parser ----------------------------------------------------------------------------

def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--json", action="store_true", help="machine-readable output and errors")

    parser = Parser(prog="audiospa", description="Text-steered binaural spatialization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("synth-hrirs", parents=[common], help="write a synthetic spherical-head HRIR set")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--azimuths", type=int, default=36, help="number of directions (divides 36)")
    p.add_argument("--radius", type=float, default=DEFAULT_HEAD_RADIUS_M, help="head radius in metres")
    p.add_argument("--distance", type=float, default=DEFAULT_DISTANCE_M, help="source distance in metres")
    p.add_argument("--rate", type=int, default=24000, help="sample rate in Hz")
    p.add_argument("--length", type=int, default=256, help="impulse response length in samples")
    p.set_defaults(func=cmd_synth_hrirs)

    p = sub.add_parser("synth-events", parents=[common], help="write synthetic events and a catalog manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seconds", type=float, default=1.5)
    p.add_argument("--rate", type=int, default=24000)
    p.add_argument("--kinds", nargs="+", default=["noise_burst", "tone"])
    p.set_defaults(func=cmd_synth_events)

    p = sub.add_parser("render", parents=[common], help="HRIR-convolve a mono clip (the DSP baseline)")
    p.add_argument("--mono", required=True)
    p.add_argument("--azimuth", type=int, required=True)
    p.add_argument("--hrirs", help="HRIR manifest (default: synthetic set)")
    p.add_argument("--snr", type=float, help="SNR in dB for --noise")
    p.add_argument("--noise", help="noise WAV mixed into input and target")
    p.add_argument("--speed-of-sound", type=float, default=SPEED_OF_SOUND)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-input", action="store_true", help="also write the delayed mono input")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("spatialize", parents=[common], help="run a trained generator")
    p.add_argument("--mono", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--encoder", help="expected encoder key; refused if it differs from the checkpoint's")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spatialize)

    p = sub.add_parser("localize", parents=[common], help="estimate source azimuths of a binaural clip")
    p.add_argument("--audio", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sources", type=int, default=1)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", parents=[common], help="score a generator or a baseline on a scene set")
    p.add_argument("--gen-ckpt")
    p.add_argument("--loc-ckpt", required=True)
    p.add_argument("--scenes", required=True, help="scene-set JSON")
    p.add_argument("--report", required=True, help="report path stem; writes .json and .csv")
    p.add_argument("--mode", choices=EVAL_MODES, default="generated")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--label", help="method name in the CSV row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", parents=[common], help="train the generator or the localizer")
    p.add_argument("network", choices=["generator", "localizer"])
    p.add_argument("--train-scenes", required=True)
    p.add_argument("--val-scenes")
    p.add_argument("--config", help="JSON with 'train', 'model' and 'encoder' sections")
    p.add_argument("--encoder", help="text encoder key (generator only)")
    p.add_argument("--out", help="checkpoint directory (default: $AUDIOSPA_CACHE/checkpoints)")
    p.add_argument("--name")
    for f in TRAIN_FIELDS:
        kind = int if isinstance(f.default, int) else float
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None,
                       help=f"override train.{f.name} (default {f.default})")
    p.set_defaults(func=cmd_train)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, EncoderUnavailableError):
        return EXIT_RUNTIME
    if isinstance(exc, (DomainError, ConfigError, CheckpointError, OSError, KeyError)):
        return EXIT_DATA
    return EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    torch.manual_seed(args.seed)
    try:
        result = args.func(args)
    except Exception as exc:  # every failure maps to a non-zero exit code with a diagnostic
        code = _exit_code(exc)
        if args.json:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
        else:
            print(f"audiospa {args.command}: {exc}", file=sys.stderr)
        return code
    if args.json or args.command == "localize":
        print(json.dumps(result))
    else:
        print(result["message"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
