import json
import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from audiospa.audio import BinauralClip, MonauralClip, write_wav
from audiospa.augmentation import (
    EventCatalog,
    NoisePool,
    SamplerConfig,
    TemplateSet,
    check_template,
    epoch_order,
    epoch_scenes,
    fill_template,
    ingest_clip,
    normalize_pair,
    sample_scene,
    take_segment,
    trim_silence,
)
from audiospa.errors import ConfigError, DomainError, TemplateError
from audiospa.signal_model import make_pair, synth_hrir_set

FS = 24000
T = "At {azimuth} degrees, the {event} rings out."


@pytest.fixture(scope="module")
def hrirs():
    return synth_hrir_set()


@pytest.fixture(scope="module")
def templates():
    return TemplateSet.load()


def short_cfg(**kw):
    return SamplerConfig(segment_seconds=0.05, **kw)


# -- templates


def test_fill_template_examples():
    assert fill_template(T, 90, "dog barking") == "At 90 degrees, the dog barking rings out."
    assert "0 degrees" in fill_template(T, 0, "rain")
    assert "350" in fill_template(T, 350, "bass")


def test_fill_template_single_pass():
    assert fill_template(T, 10, "{azimuth} echo") == "At 10 degrees, the {azimuth} echo rings out."


def test_template_validation():
    check_template(T)
    for bad in ("At {azimuth} degrees", "the {event}", "{azimuth} {azimuth} {event}", "{event} {event} {azimuth}"):
        with pytest.raises(TemplateError):
            check_template(bad)
    with pytest.raises(TemplateError):
        TemplateSet.parse("# only a comment\n\n")
    with pytest.raises(TemplateError):
        TemplateSet.parse(T + "\nmissing placeholders\n")


def test_bundled_templates(templates):
    assert len(templates) == 20
    assert templates[0] == T
    assert TemplateSet.parse("# c\n" + T + "\n\n").templates == (T,)


# -- silence trimming and ingest


def burst(n, seed=0):
    return np.random.default_rng(seed).standard_normal(n)


def test_trim_silence_examples():
    frame = int(0.02 * FS)
    b = burst(3 * frame)
    clip = MonauralClip(np.concatenate([np.zeros(1000), b, np.zeros(1000)]))
    out = trim_silence(clip)
    assert abs(len(out) - len(b)) <= 2 * frame
    assert np.sum(out.samples ** 2) == pytest.approx(np.sum(b ** 2))
    loud = MonauralClip(burst(5000, 1))
    assert np.array_equal(trim_silence(loud).samples, loud.samples)
    assert np.array_equal(trim_silence(clip, -math.inf).samples, clip.samples)
    with pytest.raises(DomainError):
        trim_silence(MonauralClip(np.zeros(100)))


def test_trim_keeps_interior_silence():
    frame = int(0.02 * FS)
    x = np.concatenate([burst(frame), np.zeros(5 * frame), burst(frame, 2)])
    assert np.array_equal(trim_silence(MonauralClip(x)).samples, x)


def test_ingest_duration_limits():
    assert ingest_clip(MonauralClip(burst(int(0.4 * FS)))) is None
    assert ingest_clip(MonauralClip(burst(int(0.6 * FS)))) is not None
    assert ingest_clip(MonauralClip(np.zeros(FS))) is None


# -- sampling


def test_sample_scene_deterministic(hrirs, templates):
    cat = EventCatalog.synthetic(10, seed=3, num_samples=2000)
    cfg = short_cfg(noise_enabled=True)
    noise = NoisePool.synthetic(2, seconds=0.5)
    a = sample_scene(2, 5, cat, hrirs, templates, noise, cfg)
    b = sample_scene(2, 5, cat, hrirs, templates, noise, cfg)
    assert (a.azimuth_deg, a.prompt, a.snr_db, a.scale) == (b.azimuth_deg, b.prompt, b.snr_db, b.scale)
    assert np.array_equal(a.event.samples, b.event.samples)
    assert np.array_equal(a.noise.samples, b.noise.samples)
    assert a.event_label in cat[epoch_order(0, 2, 10)[5]].labels
    assert a.prompt in {fill_template(t, a.azimuth_deg, a.event_label) for t in templates.templates}


def test_epochs_differ(hrirs, templates):
    cat = EventCatalog.synthetic(40, num_samples=1500)
    cfg = short_cfg()
    draws = [[(s.azimuth_deg, s.prompt) for s in epoch_scenes(e, cat, hrirs, templates, None, cfg)]
             for e in (0, 1)]
    assert sum(a != b for a, b in zip(*draws)) > 30


def test_epoch_reproducible_bit_exact(hrirs, templates):
    cat = EventCatalog.synthetic(12, num_samples=1500)
    cfg = short_cfg(noise_enabled=True)
    noise = NoisePool.synthetic(2, seconds=0.5)
    a = list(epoch_scenes(4, cat, hrirs, templates, noise, cfg))
    b = list(epoch_scenes(4, cat, hrirs, templates, noise, cfg))
    for x, y in zip(a, b):
        assert x.event.samples.tobytes() == y.event.samples.tobytes()
        assert x.noise.samples.tobytes() == y.noise.samples.tobytes()
        assert (x.prompt, x.snr_db, x.scale) == (y.prompt, y.snr_db, y.scale)


def test_each_event_once_per_epoch(hrirs, templates):
    n = int(0.05 * FS)
    cat = EventCatalog.synthetic(30, seed=9, num_samples=n)
    cfg = short_cfg(normalize=False)
    order = epoch_order(cfg.seed, 1, len(cat))
    assert sorted(order) == list(range(30))
    scenes = list(epoch_scenes(1, cat, hrirs, templates, None, cfg))
    for scene, idx in zip(scenes, order):
        assert np.array_equal(scene.event.samples, cat[idx].load().samples)
    used = Counter(scene.event.samples.tobytes() for scene in scenes)
    assert len(used) == 30 and set(used.values()) == {1}


def test_all_azimuths_covered(hrirs, templates):
    cat = EventCatalog.synthetic(3600, num_samples=600)
    cfg = SamplerConfig(segment_seconds=0.025)
    seen = {s.azimuth_deg for s in epoch_scenes(0, cat, hrirs, templates, None, cfg)}
    assert seen == set(range(0, 360, 10))


def test_snr_uniform_ks(hrirs, templates):
    cat = EventCatalog.synthetic(1000, num_samples=240)
    cfg = SamplerConfig(segment_seconds=0.01, noise_enabled=True)
    noise = NoisePool.synthetic(2, seconds=0.2)
    snrs = [s.snr_db for e in range(10) for s in epoch_scenes(e, cat, hrirs, templates, noise, cfg)]
    assert len(snrs) == 10_000
    assert min(snrs) >= 0 and max(snrs) <= 15
    assert stats.kstest(snrs, stats.uniform(loc=0, scale=15).cdf).pvalue > 0.01


def test_sampler_errors(hrirs, templates):
    with pytest.raises(ConfigError):
        SamplerConfig(snr_range_db=(10, 5))
    with pytest.raises(ConfigError):
        SamplerConfig(segment_seconds=0)
    with pytest.raises(ConfigError):
        sample_scene(0, 0, EventCatalog([]), hrirs, templates, None, short_cfg())
    cat = EventCatalog.synthetic(2, num_samples=500)
    with pytest.raises(ConfigError):
        sample_scene(0, 0, cat, hrirs, templates, NoisePool([]), short_cfg(noise_enabled=True))
    with pytest.raises(DomainError):
        sample_scene(0, 2, cat, hrirs, templates, None, short_cfg())


def test_take_segment_offsets_and_padding():
    clip = MonauralClip(np.arange(1.0, 11.0))
    rng = np.random.default_rng(0)
    for _ in range(20):
        seg = take_segment(clip, 4, rng).samples
        assert len(seg) == 4 and np.all(np.diff(seg) == 1)
    assert take_segment(clip, 13, rng).samples.tolist() == list(range(1, 11)) + [0, 0, 0]


def test_scene_scale_normalises_input(hrirs, templates):
    cat = EventCatalog.synthetic(4, num_samples=3000)
    scene = sample_scene(0, 1, cat, hrirs, templates, None, short_cfg())
    mono, _, _ = make_pair(scene, hrirs)
    assert np.std(mono.samples) == pytest.approx(1.0, abs=1e-9)


# -- catalog and noise files


def test_catalog_manifest(tmp_path):
    write_wav(tmp_path / "a.wav", MonauralClip(burst(1000)))
    (tmp_path / "cat.json").write_text(json.dumps([{"file": "a.wav", "labels": ["dog", "animal"]}]))
    cat = EventCatalog.load(tmp_path / "cat.json")
    assert cat[0].labels == ("dog", "animal")
    assert len(cat[0].load()) == 1000
    (tmp_path / "bad.json").write_text(json.dumps([{"file": "a.wav", "labels": []}]))
    with pytest.raises(DomainError):
        EventCatalog.load(tmp_path / "bad.json")
    with pytest.raises(DomainError):
        EventCatalog.load(tmp_path / "missing.json")


def test_noise_pool_dir(tmp_path):
    write_wav(tmp_path / "n.wav", MonauralClip(burst(300)))
    pool = NoisePool.from_dir(tmp_path)
    seg = pool.segment(np.random.default_rng(0), 1000)
    assert len(seg) == 1000


# -- normalisation


def test_normalize_pair_examples():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(4000)
    x = (x - x.mean()) / x.std() * 2.0
    bin_ = BinauralClip(np.stack([x, 0.3 * x]))
    mono, out, scale = normalize_pair(MonauralClip(x), bin_)
    assert scale == pytest.approx(0.5, rel=1e-12)
    np.testing.assert_allclose(out.samples, bin_.samples / 2, rtol=1e-12)
    assert np.var(mono.samples) == pytest.approx(1.0, abs=1e-9)
    _, _, again = normalize_pair(mono, out)
    assert again == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        normalize_pair(MonauralClip(np.ones(10)), BinauralClip(np.ones((2, 10))))


@pytest.mark.parametrize("seed", range(10))
def test_normalize_preserves_ild(seed):
    rng = np.random.default_rng(seed)
    mono = MonauralClip(rng.standard_normal(500) * rng.uniform(0.01, 100))
    bin_ = BinauralClip(rng.standard_normal((2, 500)) * [[rng.uniform(0.1, 5)], [rng.uniform(0.1, 5)]])
    _, out, _ = normalize_pair(mono, bin_)
    before = np.sum(bin_.left ** 2) / np.sum(bin_.right ** 2)
    after = np.sum(out.left ** 2) / np.sum(out.right ** 2)
    assert after == pytest.approx(before, rel=1e-12)
