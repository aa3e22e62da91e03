import struct

import numpy as np
import pytest

from manifold_reg import checkpoint, config
from manifold_reg.exceptions import ConfigError, FormatError
from manifold_reg.model import build, desk_config, mlp_config
from manifold_reg.seeding import STREAMS, substream


def test_parse_text_and_comments():
    cfg = config.parse_text("# comment\nnet.K = 32  # trailing\nloss.alpha = 0.1, 0.2\ndata.standardize = yes\n")
    assert cfg == {"net.K": 32, "loss.alpha": [0.1, 0.2], "data.standardize": True}


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError, match="valid keys"):
        config.parse_text("net.width = 3")


def test_bad_value_and_line():
    with pytest.raises(ConfigError):
        config.parse_text("train.epochs = many")
    with pytest.raises(ConfigError):
        config.parse_text("just words")


def test_overrides_win():
    cfg = config.apply_overrides({"train.epochs": 5}, ["train.epochs=7", "run.seed = 3"])
    assert cfg["train.epochs"] == 7 and cfg["run.seed"] == 3
    with pytest.raises(ConfigError):
        config.apply_overrides({}, ["novalue"])


def test_resolve_synthetic_defaults():
    r = config.resolve({})
    assert r["net.preset"] == "mlp" and r["net.input_shape"] == [64] and r["net.extractor"] == []
    assert r["net.num_classes"] == 2 and r["loss.alpha"] == [0.001, 0.01, 0.01]
    tc = config.train_config(r)
    assert tc.net.widths() == [64, 64, 32, 32, 16, 16, 2]


def test_resolve_cifar_defaults():
    r = config.resolve({"data.source": "cifar10"})
    assert r["net.preset"] == "desk" and r["net.input_shape"] == [3, 32, 32]
    assert r["net.num_classes"] == 10 and r["probe.classes"] == "dog,cat"
    assert config.probe_classes(r) == (5, 3)
    assert config.resolve({"data.source": "cifar100", "data.label_mode": "coarse"})["net.num_classes"] == 20


def test_alpha_length_and_zero_broadcast():
    r = config.resolve({"loss.alpha": [0.0]})
    assert config.loss_weights(r).alpha == (0.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        config.resolve({"loss.alpha": [0.1, 0.1]})


def test_dump_round_trip(tmp_path):
    r = config.resolve({"net.K": 32, "loss.alpha": [0.001, 0.01]})
    path = tmp_path / "r.cfg"
    path.write_text(config.dump(r))
    assert config.resolve(config.load(path)) == r


def test_missing_config_file():
    with pytest.raises(ConfigError):
        config.load("/nonexistent/x.cfg")


def test_substreams_independent_and_reproducible():
    assert STREAMS["init"] != STREAMS["shuffle"]
    a = substream(1, "init").random(4)
    assert np.array_equal(a, substream(1, "init").random(4))
    assert not np.array_equal(a, substream(1, "shuffle").random(4))
    assert not np.array_equal(substream(1, "shuffle", 1).random(4), substream(1, "shuffle", 2).random(4))


def _ckpt(net):
    return checkpoint.to_bytes(net, {"net": net.config.to_dict(), "run": {"run.seed": 0}})


def test_checkpoint_round_trip():
    net = build(desk_config(min_width=8, start_width=16), 4)
    back, cfg = checkpoint.from_bytes(_ckpt(net))
    assert cfg["run"] == {"run.seed": 0}
    for (n1, p), (n2, q) in zip(net.named_parameters(), back.named_parameters()):
        assert n1 == n2 and p.data.tobytes() == q.data.tobytes()
    assert _ckpt(back) == _ckpt(net)


def test_checkpoint_layout_header():
    blob = _ckpt(build(mlp_config(3, 2, 2, 2), 0))
    assert blob[:8] == checkpoint.MAGIC
    assert struct.unpack("<I", blob[8:12])[0] == checkpoint.VERSION


def test_checkpoint_rejects_corruption():
    blob = _ckpt(build(mlp_config(3, 2, 2, 2), 0))
    with pytest.raises(FormatError):
        checkpoint.from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(FormatError):
        checkpoint.from_bytes(blob[:-3])
    with pytest.raises(FormatError):
        checkpoint.from_bytes(blob + b"\0")
    with pytest.raises(FormatError):
        checkpoint.from_bytes(blob[:8] + struct.pack("<I", 99) + blob[12:])


def test_checkpoint_file_io(tmp_path):
    net = build(mlp_config(3, 2, 2, 2), 1)
    path = checkpoint.save(tmp_path / "c.bin", net, {"net": net.config.to_dict()})
    back, _ = checkpoint.load(path)
    assert np.array_equal(back.dense[0].weight.data, net.dense[0].weight.data)
