import numpy as np
import pytest

from tpdrseg import checkpoint as ckpt
from tpdrseg.config import CLASSES, Config, load_descriptions
from tpdrseg.dataset import decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_dataset, write_dataset
from tpdrseg.errors import ConfigError, FormatError, GenerationError
from tpdrseg.synth import BACKGROUND, SplitMix64, SynthConfig, generate_dataset, generate_sample, split_ids


def test_splitmix64_reference_vector():
    # published outputs of the reference C implementation for seed 1234567
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_uniform_array_matches_sequential_draws():
    a, b = SplitMix64(99), SplitMix64(99)
    seq = [a.uniform() for _ in range(37)]
    assert np.array_equal(b.uniform_array(37), seq)
    assert a.state == b.state


def test_randint_is_inclusive():
    rng = SplitMix64(3)
    draws = {rng.randint(2, 4) for _ in range(200)}
    assert draws == {2, 3, 4}


def test_sample_is_deterministic():
    cfg = SynthConfig()
    a, b = generate_sample(cfg, 11), generate_sample(cfg, 11)
    assert a.image.tobytes() == b.image.tobytes()
    assert all(a.masks[c].tobytes() == b.masks[c].tobytes() for c in CLASSES)


def test_sample_invariants():
    cfg = SynthConfig()
    for sample in generate_dataset(cfg, 0, 20):
        img = sample.image
        assert img.dtype == np.float32 and np.isfinite(img).all() and img.min() >= 0 and img.max() <= 1
        stack = np.stack([sample.masks[c] for c in CLASSES])
        assert set(np.unique(stack)) <= {0, 1}
        assert stack.sum(axis=0).max() <= 1  # disjoint when overlap is off
        lesion = stack.any(axis=0)
        # lesions sit on the retina, which is never pure black
        assert (img[lesion].sum(axis=-1) > 0).all()


def test_zero_instance_class_gives_empty_mask():
    cfg = SynthConfig(counts={"MA": (0, 0), "HE": (1, 1), "EX": (1, 1), "SE": (0, 0)})
    s = generate_sample(cfg, 0)
    assert not s.masks["MA"].any() and not s.masks["SE"].any()
    assert s.masks["HE"].any() and s.masks["EX"].any()


def test_too_small_raises():
    with pytest.raises(GenerationError):
        generate_sample(SynthConfig(size=16), 0)


def test_exudates_brighter_than_background():
    cfg = Config()
    samples = generate_dataset(SynthConfig.from_config(cfg), 0, 30)
    lum = lambda px: px.mean(axis=-1)
    ex = np.concatenate([lum(s.image[s.masks["EX"] == 1]) for s in samples])
    none = [~np.stack([s.masks[c] for c in CLASSES]).any(0) & (s.image.sum(-1) > 0) for s in samples]
    bg = np.concatenate([lum(s.image[m]) for s, m in zip(samples, none)])
    assert ex.mean() > bg.mean() + cfg["synth.ex_margin"]


def test_lesion_pixels_differ_from_background_base():
    cfg = SynthConfig()
    for s in generate_dataset(cfg, 0, 10):
        for c in CLASSES:
            px = s.image[s.masks[c] == 1]
            if len(px):
                assert (np.abs(px - BACKGROUND).max(axis=-1) > cfg.noise).all()


def test_split_is_deterministic_and_partitions():
    ids = list(range(200))
    train, held = split_ids(ids, 0.2, seed=7)
    assert sorted(train + held) == ids
    assert (train, held) == split_ids(ids, 0.2, seed=7)
    assert 20 < len(held) < 60


def test_netpbm_round_trip_and_header_errors():
    s = generate_sample(SynthConfig(), 1)
    assert decode_ppm(encode_ppm(s.image)).tobytes() == s.image.tobytes()
    m = s.masks["HE"] * 255
    assert np.array_equal(decode_pgm(encode_pgm(m)), m)
    with pytest.raises(FormatError, match="offset"):
        decode_ppm(b"P6\n64 x4\n255\n")
    with pytest.raises(FormatError):
        decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00")


def test_dataset_round_trip(tmp_path):
    samples = generate_dataset(SynthConfig(), 0, 10)
    write_dataset(tmp_path, samples, {"seed": 7})
    back = read_dataset(tmp_path)
    assert not back.warnings and len(back) == 10
    for a, b in zip(samples, back):
        assert a.sample_id == b.sample_id
        assert a.image.tobytes() == b.image.tobytes()
        for c in CLASSES:
            assert a.masks[c].tobytes() == b.masks[c].tobytes()
    raw = (tmp_path / "masks" / "EX" / "00000.pgm").read_bytes()
    assert set(np.unique(decode_pgm(raw))) <= {0, 255}
    assert "ids = 00000" in (tmp_path / "manifest.txt").read_text()


def test_empty_and_partial_datasets(tmp_path):
    assert len(read_dataset(tmp_path / "nothing")) == 0
    write_dataset(tmp_path, generate_dataset(SynthConfig(), 0, 2))
    for f in (tmp_path / "masks" / "SE").iterdir():
        f.unlink()
    (tmp_path / "masks" / "SE").rmdir()
    data = read_dataset(tmp_path)
    assert data.warnings and not data[0].masks["SE"].any()


def test_checkpoint_round_trip_and_errors(tmp_path):
    rng = np.random.default_rng(0)
    state = {"a.weight": rng.standard_normal((3, 4)).astype(np.float32), "b": np.float64(2.5) * np.ones(())}
    blob = ckpt.dumps(state)
    back = ckpt.loads(blob)
    assert list(back) == list(state)
    assert all(back[k].tobytes() == state[k].tobytes() and back[k].dtype == state[k].dtype for k in state)
    with pytest.raises(FormatError, match="'b'"):
        ckpt.loads(blob[:-3])
    with pytest.raises(FormatError, match="offset 0"):
        ckpt.loads(b"NOTSEG" + blob[6:])


def test_config_parsing(tmp_path):
    cfg = Config.from_text("# comment\ntrain.lr = 0.001\ninjector.enabled = false\n")
    assert cfg["train.lr"] == 0.001 and cfg["injector.enabled"] is False
    assert Config.from_text(cfg.to_text()).to_text() == cfg.to_text()
    assert cfg.checksum() != Config().checksum()
    with pytest.raises(ConfigError):
        Config.from_text("no.such.key = 1")
    with pytest.raises(ConfigError):
        Config().apply(["train.steps=many"])
    with pytest.raises(ConfigError):
        Config({"model.width": 0}).validate()
    reg = tmp_path / "reg.txt"
    reg.write_text("class.EX.description = bright yellow flecks\n")
    assert load_descriptions(reg)["EX"] == "bright yellow flecks"


def test_default_learning_rate_and_exudate_text():
    cfg = Config()
    assert cfg["train.lr"] == 1e-4
    assert cfg["class.EX.description"] == "yellowish-white deposits"
