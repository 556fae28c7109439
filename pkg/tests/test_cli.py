import json
import subprocess
import sys

import numpy as np
import pytest

from audiospa.audio import MonauralClip, read_binaural, read_wav, write_wav
from audiospa.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def mono_wav(work):
    path = work / "mono.wav"
    write_wav(path, MonauralClip(np.random.default_rng(0).standard_normal(3000) * 0.3))
    return path


@pytest.fixture(scope="module")
def scene_file(work):
    path = work / "scenes.json"
    path.write_text(json.dumps({"catalog": {"synthetic": {"count": 6, "seed": 1, "num_samples": 1500}},
                                "segment_seconds": 0.05, "seed": 0}))
    return path


@pytest.fixture(scope="module")
def gen_ckpt(work, scene_file):
    cfg = work / "gen.json"
    cfg.write_text(json.dumps({"model": {"residual_channels": 4, "num_blocks": 2}, "train": {"batch_size": 3}}))
    assert run("train", "generator", "--train-scenes", scene_file, "--val-scenes", scene_file,
               "--config", cfg, "--max-epochs", 2, "--out", work / "ck", "--name", "gen") == 0
    return work / "ck" / "gen.pt"


@pytest.fixture(scope="module")
def loc_ckpt(work, scene_file):
    cfg = work / "loc.json"
    cfg.write_text(json.dumps({"model": {"window_samples": 1024}, "train": {"batch_size": 3}}))
    assert run("train", "localizer", "--train-scenes", scene_file, "--config", cfg,
               "--max-epochs", 1, "--out", work / "ck", "--name", "loc") == 0
    return work / "ck" / "loc.pt"


def test_help_and_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["render", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--mono", "--azimuth", "--hrirs", "--snr", "--noise", "--out", "--emit-input", "--seed", "--json"):
        assert flag in out
    with pytest.raises(SystemExit) as exc:
        main(["render", "--bogus"])
    assert exc.value.code == 1


def test_entry_point_unknown_flag():
    res = subprocess.run([sys.executable, "-m", "audiospa.cli", "localize", "--nope"], capture_output=True, text=True)
    assert res.returncode == 1
    res = subprocess.run([sys.executable, "-m", "audiospa.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "synth-hrirs" in res.stdout


def test_synth_hrirs(tmp_path):
    assert run("synth-hrirs", "--out", tmp_path / "a") == 0
    files = sorted((tmp_path / "a").glob("*.wav"))
    assert len(files) == 36 and (tmp_path / "a" / "manifest.json").exists()
    assert run("synth-hrirs", "--out", tmp_path / "b", "--azimuths", 12) == 0
    assert len(json.loads((tmp_path / "b" / "manifest.json").read_text())["entries"]) == 12
    assert run("synth-hrirs", "--out", tmp_path / "c") == 0
    for f in files:
        assert f.read_bytes() == (tmp_path / "c" / f.name).read_bytes()


def test_synth_hrirs_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("synth-hrirs", "--out", blocker / "sub", "--json") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2


def test_synth_events(tmp_path):
    assert run("synth-events", "--out", tmp_path, "--count", 4, "--seconds", 0.1) == 0
    items = json.loads((tmp_path / "catalog.json").read_text())
    assert len(items) == 4 and items[0]["labels"] == ["noise burst", "noise"]
    assert run("synth-events", "--out", tmp_path, "--kinds", "bell") == 1


def test_render(tmp_path, mono_wav):
    assert run("render", "--mono", mono_wav, "--azimuth", 0, "--out", tmp_path / "front.wav", "--emit-input") == 0
    front = read_binaural(tmp_path / "front.wav")
    assert np.array_equal(front.left, front.right)
    assert (tmp_path / "front_input.wav").exists()
    assert run("render", "--mono", mono_wav, "--azimuth", 90, "--out", tmp_path / "left.wav") == 0
    left = read_binaural(tmp_path / "left.wav")
    assert np.sum(left.left ** 2) > np.sum(left.right ** 2)
    assert len(left) == 3000


def test_render_errors(tmp_path, mono_wav):
    assert run("render", "--mono", tmp_path / "missing.wav", "--azimuth", 0, "--out", tmp_path / "o.wav") == 2
    assert run("render", "--mono", mono_wav, "--azimuth", 5, "--out", tmp_path / "o.wav") == 2
    assert run("render", "--mono", mono_wav, "--azimuth", 0, "--noise", mono_wav, "--out", tmp_path / "o.wav") == 1


def test_render_with_noise_is_seeded(tmp_path, mono_wav):
    noise = tmp_path / "noise.wav"
    write_wav(noise, MonauralClip(np.random.default_rng(1).standard_normal(20000)))
    for name in ("a", "b"):
        assert run("render", "--mono", mono_wav, "--azimuth", 40, "--noise", noise, "--snr", 5,
                   "--seed", 3, "--out", tmp_path / f"{name}.wav") == 0
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_spatialize(tmp_path, gen_ckpt, mono_wav):
    for name in ("a", "b"):
        assert run("spatialize", "--mono", mono_wav, "--prompt", "At 90 degrees, a tone rings out.",
                   "--ckpt", gen_ckpt, "--out", tmp_path / f"{name}.wav") == 0
    data, rate = read_wav(tmp_path / "a.wav")
    assert data.shape == (2, 3000) and rate == 24000
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_spatialize_errors(tmp_path, gen_ckpt, mono_wav, capsys):
    assert run("spatialize", "--mono", mono_wav, "--prompt", "x", "--ckpt", gen_ckpt,
               "--encoder", "pretrained-base", "--out", tmp_path / "o.wav") == 2
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"garbage")
    bad.with_suffix(".json").write_text(gen_ckpt.with_suffix(".json").read_text())
    capsys.readouterr()
    assert run("spatialize", "--mono", mono_wav, "--prompt", "x", "--ckpt", bad, "--out", tmp_path / "o.wav",
               "--json") == 2
    assert json.loads(capsys.readouterr().err)["error"] == "CheckpointError"
    assert run("spatialize", "--mono", mono_wav, "--prompt", " ", "--ckpt", gen_ckpt, "--out", tmp_path / "o.wav") == 2


def test_localize(tmp_path, loc_ckpt, mono_wav, capsys):
    assert run("render", "--mono", mono_wav, "--azimuth", 90, "--out", tmp_path / "b.wav") == 0
    capsys.readouterr()
    assert run("localize", "--audio", tmp_path / "b.wav", "--ckpt", loc_ckpt, "--sources", 2) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["azimuths"]) == 2 and len(out["posterior"]) == 36
    assert all(a % 10 == 0 for a in out["azimuths"])
    assert run("localize", "--audio", mono_wav, "--ckpt", loc_ckpt) == 2


def test_evaluate(tmp_path, loc_ckpt, gen_ckpt, scene_file, capsys):
    report = tmp_path / "gt"
    assert run("evaluate", "--loc-ckpt", loc_ckpt, "--scenes", scene_file, "--report", report,
               "--mode", "ground-truth", "--json") == 0
    result = json.loads(capsys.readouterr().out)
    assert result["aggregates"]["count"] == 6 and result["aggregates"]["sdr_db"] == pytest.approx(100.0)
    first = (report.with_suffix(".json").read_bytes(), report.with_suffix(".csv").read_bytes())
    assert run("evaluate", "--loc-ckpt", loc_ckpt, "--scenes", scene_file, "--report", report,
               "--mode", "ground-truth") == 0
    assert (report.with_suffix(".json").read_bytes(), report.with_suffix(".csv").read_bytes()) == first
    assert report.with_suffix(".csv").read_text().splitlines()[0] == "Method,MAE,ACC (%),SDR (dB),SISDR (dB)"
    assert run("evaluate", "--loc-ckpt", loc_ckpt, "--gen-ckpt", gen_ckpt, "--scenes", scene_file,
               "--report", tmp_path / "gen", "--workers", 2) == 0
    assert json.loads((tmp_path / "gen.json").read_text())["metadata"]["mode"] == "generated"


def test_evaluate_errors(tmp_path, loc_ckpt, scene_file):
    assert run("evaluate", "--loc-ckpt", loc_ckpt, "--scenes", scene_file, "--report", tmp_path / "r") == 1
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"catalog": {"synthetic": {"count": 0}}}))
    assert run("evaluate", "--loc-ckpt", loc_ckpt, "--scenes", empty, "--report", tmp_path / "r",
               "--mode", "mono") == 2
    (tmp_path / "broken.json").write_text("{")
    assert run("evaluate", "--loc-ckpt", loc_ckpt, "--scenes", tmp_path / "broken.json", "--report",
               tmp_path / "r", "--mode", "mono") == 2


def test_train_bad_config(tmp_path, scene_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"nonsense": 1}}))
    assert run("train", "localizer", "--train-scenes", scene_file, "--config", cfg, "--out", tmp_path) == 2
    assert run("train", "localizer", "--train-scenes", scene_file, "--lr-min", 1.0, "--out", tmp_path) == 2
