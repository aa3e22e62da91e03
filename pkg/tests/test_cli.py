import csv
import json

import numpy as np
import pytest

from manifold_reg import data
from manifold_reg.cli import main

TINY = """\
data.source = synthetic
synth.n_train = 60
synth.n_test = 30
synth.ambient_dim = 16
net.K = 8
net.W = 4
train.epochs = 2
"""

CONV = """\
data.source = synthetic
synth.n_train = 40
synth.n_test = 20
synth.ambient_dim = 16
net.preset = custom
net.input_shape = 1, 4, 4
net.extractor = conv:2:3:1:1, pool
net.K = 4
net.W = 2
train.epochs = 1
"""


@pytest.fixture
def cfgs(tmp_path):
    paths = {}
    for name, text in {
        "tiny": TINY,
        "conv": CONV,
        "wide": CONV + "net.head = vanilla\nnet.vanilla_width = 64\n",
        "empty": "net.head = none\n",
    }.items():
        paths[name] = tmp_path / f"{name}.cfg"
        paths[name].write_text(text)
    return paths


def test_train_one_epoch_and_artifacts(cfgs, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfgs["tiny"]), "--set", "train.epochs=1", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["epochs"]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["train.epochs"] == 1 and manifest["seed"] == 0
    assert set(manifest["sha256"]) == {"report", "epochs", "timeline", "checkpoint"}
    assert "test_acc=" in capsys.readouterr().out


def test_manifest_rerun_is_byte_identical(cfgs, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfgs["conv"]), "--out", str(a)]) == 0
    assert main(["train", "--manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("report.json", "epochs.csv", "timeline.csv", "checkpoint.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["sha256"] == mb["sha256"]


def test_ab_reports_comparable(cfgs, tmp_path):
    from manifold_reg.analysis import generalization_table

    reports = []
    for tag, extra in (("reg", []), ("plain", ["--set", "loss.alpha=0,0"])):
        assert main(["train", "--config", str(cfgs["tiny"]), "--out", str(tmp_path / tag), *extra]) == 0
        reports.append(json.loads((tmp_path / tag / "report.json").read_text()))
    rows = generalization_table(reports)
    assert sorted(r.regularized for r in rows) == [False, True]


def test_exit_codes(cfgs, tmp_path, capsys):
    assert main(["train", "--config", str(cfgs["tiny"]), "--set", "net.K=12", "--out", str(tmp_path)]) == 2
    assert main(["train", "--config", str(cfgs["tiny"]), "--set", "bogus.key=1"]) == 2
    assert main(["train", "--config", str(cfgs["tiny"]), "--set", "data.source=cifar10",
                 "--data-root", str(tmp_path / "none")]) == 3
    assert main(["train", "--config", str(cfgs["tiny"]), "--set", "synth.noise=1e300",
                 "--out", str(tmp_path / "nan")]) == 4
    assert "numeric abort" in capsys.readouterr().err


def test_profile_table_ratio_and_phases(cfgs, tmp_path, capsys):
    out = tmp_path / "prof"
    args = ["profile", "--config", str(cfgs["conv"]), "--config", str(cfgs["wide"]), "--config", str(cfgs["empty"]),
            "--out", str(out)]
    assert main(args) == 0
    text = capsys.readouterr().out
    assert "ratio wide/conv" in text
    total_row = next(line for line in text.splitlines() if line.startswith("Total"))
    assert total_row.split()[-1] == "0"
    with open(out / "timeline_conv.csv") as fh:
        phases = [row["phase"] for row in csv.DictReader(fh)]
    order = [p for i, p in enumerate(phases) if i == 0 or p != phases[i - 1]]
    assert order == ["fwd1", "fwd2", "bwd2", "bwd1"]


def test_profile_vgg16_preset(capsys):
    assert main(["profile", "--preset", "vgg16", "--static-only"]) == 0
    text = capsys.readouterr().out
    ratio = float(text.split("ratio vanilla/W=32 = ")[1].split()[0])
    assert ratio >= 2.0


def test_probe_and_evaluate(cfgs, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfgs["tiny"]), "--out", str(run)]) == 0
    ckpt = str(run / "checkpoint.bin")
    assert main(["evaluate", "--checkpoint", ckpt]) == 0
    assert main(["probe", "--checkpoint", ckpt, "--class-a", "0", "--class-b", "1", "--out", str(run)]) == 0
    rows = (run / "probe.csv").read_text().splitlines()
    assert len(rows) == 1 + 1 + 4  # header, extractor output, four taps
    assert main(["probe", "--checkpoint", ckpt, "--class-a", "1", "--class-b", "1"]) == 2


def test_data_synth_verify_round_trip(tmp_path):
    out = tmp_path / "syn"
    assert main(["data", "synth", "--out", str(out), "--n-train", "12", "--n-test", "6", "--seed", "2"]) == 0
    assert main(["data", "verify", "--root", str(out)]) == 0
    tr = data.parse_cifar10(out / "data_batch_1.bin")
    ref, _ = data.to_pixel_range(*data.synthetic_split(12, 6, intrinsic_dim=4, ambient_dim=data.PIXELS,
                                                        noise=0.05, seed=2))
    assert np.array_equal(tr.labels, ref.labels)
    assert data.cifar10_bytes(tr) == (out / "data_batch_1.bin").read_bytes()


def test_data_verify_truncated(tmp_path, capsys):
    out = tmp_path / "syn"
    main(["data", "synth", "--out", str(out), "--n-train", "4", "--n-test", "2"])
    blob = (out / "test_batch.bin").read_bytes()
    (out / "test_batch.bin").write_bytes(blob[:-7])
    assert main(["data", "verify", "--root", str(out)]) != 0
    assert "test_batch.bin" in capsys.readouterr().err
