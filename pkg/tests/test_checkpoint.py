import numpy as np
import pytest

from specdisc import checkpoint as ckpt
from specdisc.data import CorpusConfig
from specdisc.discriminators import DiscriminatorConfig, build
from specdisc.generator import GeneratorConfig, build_generator
from specdisc.trainer import TrainConfig, make_optimizers, train


def test_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.b": rng.normal(size=(3, 4)), "c": rng.normal(size=5), "scalar": np.array(2.5),
               "empty": np.zeros((0, 3))}
    man = ckpt.save(str(tmp_path / "x"), tensors, {"iteration": 7, "note": "hello world"})
    assert man.endswith(".manifest")
    loaded, meta = ckpt.load(str(tmp_path / "x"))
    assert list(loaded) == list(tensors)
    for k in tensors:
        assert loaded[k].shape == tensors[k].shape
        assert loaded[k].tobytes() == tensors[k].tobytes()
    assert meta == {"iteration": "7", "note": "hello world"}
    assert ckpt.load(man)[1] == meta


def test_binary_layout(tmp_path):
    ckpt.save(str(tmp_path / "y"), {"u": np.array([1.0, 2.0]), "v": np.array([[3.0]])})
    raw = (tmp_path / "y.bin").read_bytes()
    assert np.frombuffer(raw, dtype="<f8").tolist() == [1.0, 2.0, 3.0]
    lines = (tmp_path / "y.manifest").read_text().splitlines()
    assert lines[0] == "format = specdisc-checkpoint-1"
    assert "tensor.u = shape=2 offset=0" in lines and "tensor.v = shape=1,1 offset=16" in lines


def test_missing_and_corrupt(tmp_path):
    with pytest.raises(FileNotFoundError):
        ckpt.load(str(tmp_path / "nope"))
    ckpt.save(str(tmp_path / "z"), {"u": np.ones(4)})
    (tmp_path / "z.bin").write_bytes(b"\0" * 16)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(str(tmp_path / "z"))


def test_rejects_unwritable_names(tmp_path):
    with pytest.raises(ckpt.CheckpointError):
        ckpt.save(str(tmp_path / "w"), {"bad name": np.ones(1)})
    with pytest.raises(ckpt.CheckpointError):
        ckpt.save(str(tmp_path / "w"), {}, {"k": "two\nlines"})


def models():
    gen = build_generator(GeneratorConfig(embed_dim=8, enc_channels=8, dec_channels=8), seed=0)
    disc = build(DiscriminatorConfig(channels=(4, 8, 8, 16), n_mels=16), seed=1)
    return gen, disc


def test_resume_matches_uninterrupted_run(tmp_path):
    corpus_cfg = CorpusConfig()
    cfg = TrainConfig(total_iters=8).resolved("m-tf")

    gen, disc = models()
    straight = train(gen, disc, corpus_cfg, cfg)
    final = [p.data.tobytes() for p in gen.parameters() + disc.parameters()]

    gen, disc = models()
    opts = make_optimizers(gen, disc, cfg)

    def save_at_six(it, g, d, o):
        if it == 6:
            ckpt.save_training_state(str(tmp_path / "mid"), it, g, d, o, {"seed": 0})

    train(gen, disc, corpus_cfg, TrainConfig(total_iters=6).resolved("m-tf"), opts=opts,
          on_iteration_end=save_at_six)

    gen, disc = models()
    opts = make_optimizers(gen, disc, cfg)
    tensors, meta = ckpt.load(str(tmp_path / "mid"))
    start = ckpt.restore_training_state(tensors, meta, gen, disc, opts) + 1
    assert start == 7 and ckpt.run_config_from_meta(meta) == {"seed": "0"}
    resumed = train(gen, disc, corpus_cfg, cfg, start_iter=start, opts=opts)
    assert resumed == straight[6:]
    assert [p.data.tobytes() for p in gen.parameters() + disc.parameters()] == final


def test_missing_optimizer_state(tmp_path):
    gen, disc = models()
    ckpt.save_training_state(str(tmp_path / "p"), 1, gen, disc, (None, None), {})
    tensors, meta = ckpt.load(str(tmp_path / "p"))
    opts = make_optimizers(gen, disc, TrainConfig())
    with pytest.raises(ckpt.CheckpointError, match="optimizer"):
        ckpt.restore_training_state(tensors, meta, gen, disc, opts)
