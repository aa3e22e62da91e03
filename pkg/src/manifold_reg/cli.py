"""Command-line entry point: ``manifold-reg {train,evaluate,profile,probe,data}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, checkpoint, config, data
from .exceptions import ConfigError, ContractError, FormatError, NumericAbort
from .memory import model_memory, memory_table, timeline_csv
from .model import build, mimic_vgg16_config
from .seeding import substream
from .train import evaluate, profile_step, train
from .data import MiniBatch

log = logging.getLogger("manifold_reg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


# -- helpers --------------------------------------------------------------------


def _flag_overrides(args) -> list[str]:
    """Translate convenience flags into ``key=value`` overrides (flags win over the file)."""
    sets = []
    for flag, key in (("seed", "run.seed"), ("epochs", "train.epochs"), ("out", "run.out_dir"),
                      ("data_root", "data.root"), ("batch_size", "train.batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            sets.append(f"{key}={value}")
    return list(getattr(args, "set", None) or []) + sets


def resolved_config(args) -> dict:
    raw = config.load(args.config) if getattr(args, "config", None) else {}
    return config.resolve(config.apply_overrides(raw, _flag_overrides(args)))


def artifact_config(r: dict) -> dict:
    """Resolved config minus the output location, so reruns elsewhere are byte-identical."""
    return {k: v for k, v in r.items() if k != "run.out_dir"}


def load_datasets(r: dict) -> tuple[data.Dataset, data.Dataset]:
    source = r["data.source"]
    shape = tuple(r["net.input_shape"])
    try:
        if source == "synthetic":
            train_ds, test_ds = data.synthetic_split(
                r["synth.n_train"], r["synth.n_test"], intrinsic_dim=r["synth.intrinsic_dim"],
                ambient_dim=r["synth.ambient_dim"], classes=r["synth.classes"], noise=r["synth.noise"],
                seed=r["run.seed"], embedding=r["synth.embedding"], curvature=r["synth.curvature"],
            )
            if shape != train_ds.sample_shape:
                if math.prod(shape) != train_ds.sample_shape[0]:
                    raise ConfigError(f"synthetic ambient_dim {train_ds.sample_shape[0]} cannot feed input {shape}")
                train_ds, test_ds = data.to_pixel_range(train_ds, test_ds)
                train_ds.raw = train_ds.raw.reshape(-1, *shape)
                test_ds.raw = test_ds.raw.reshape(-1, *shape)
        elif source == "cifar10":
            root = r["data.root"] or None
            train_ds, test_ds = data.load_cifar10(root, "train"), data.load_cifar10(root, "test")
        else:
            root = r["data.root"] or None
            train_ds = data.load_cifar100(root, "train", r["data.label_mode"])
            test_ds = data.load_cifar100(root, "test", r["data.label_mode"])
    except (FileNotFoundError, FormatError) as exc:
        raise DataError(str(exc)) from exc
    if r["data.train_subset"]:
        train_ds = train_ds.head(r["data.train_subset"], seed=r["run.seed"])
    if r["data.test_subset"]:
        test_ds = test_ds.head(r["data.test_subset"], seed=r["run.seed"] + 1)
    if r["data.standardize"]:
        test_ds = test_ds.standardized(train_ds)
        train_ds = train_ds.standardized()
    return train_ds, test_ds


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        r = config.resolve(config.apply_overrides(manifest["config"], _flag_overrides(args)))
    else:
        r = resolved_config(args)
    tc = config.train_config(r)
    train_ds, test_ds = load_datasets(r)
    out = Path(r["run.out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    from .memory import MemoryLedger

    ledger = MemoryLedger(r["run.bytes_per_element"])
    net, report = train(tc, train_ds, test_ds, ledger=ledger)
    start, stop = ledger.steps[0] if ledger.steps else (0, 0)

    stored = artifact_config(r)
    paths = {
        "report": _write(out / "report.json", report.to_json()),
        "epochs": _write(out / "epochs.csv", report.to_csv()),
        "timeline": _write(out / "timeline.csv", timeline_csv(ledger, start, stop)),
        "checkpoint": checkpoint.save(out / "checkpoint.bin", net, {"net": tc.net.to_dict(), "run": stored}),
    }
    manifest = {
        "tool": "manifold-reg",
        "version": __version__,
        "command": "train",
        "seed": r["run.seed"],
        "config": stored,
        "artifacts": {k: p.name for k, p in paths.items()},
        "sha256": {k: _sha256(p) for k, p in paths.items()},
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    s = report.summary()
    print(f"train_acc={s['train_acc']:.2f} test_acc={s['test_acc']:.2f} "
          f"gen_error={s['generalization_error']:.2f} epochs={s['epochs']} "
          f"wall_clock={report.wall_clock_seconds:.1f}s -> {out}")
    return EXIT_OK


def _checkpoint_run(args) -> tuple:
    try:
        net, stored = checkpoint.load(args.checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {args.checkpoint}: {exc}") from exc
    r = config.resolve(config.apply_overrides(stored["run"], _flag_overrides(args)))
    return net, r


def cmd_evaluate(args) -> int:
    net, r = _checkpoint_run(args)
    train_ds, test_ds = load_datasets(r)
    ds = test_ds if args.split == "test" else train_ds
    acc = evaluate(net, ds, r["train.eval_batch"])
    print(f"{args.split}_acc={100.0 * acc:.2f} n={len(ds)}")
    return EXIT_OK


def _profile_batch(cfg, batch_size: int, seed: int) -> MiniBatch:
    rng = substream(seed, "probe", 99)
    x = rng.uniform(0.0, 1.0, size=(batch_size, *cfg.input_shape))
    y = rng.integers(0, cfg.num_classes, size=batch_size)
    return MiniBatch(x, y, np.arange(batch_size))


def cmd_profile(args) -> int:
    entries, runnable = {}, {}
    if args.preset == "vgg16":
        entries["vanilla"] = model_memory(mimic_vgg16_config("vanilla"), args.bytes_per_element)
        for W in (32, 16, 8):
            entries[f"W={W}"] = model_memory(mimic_vgg16_config(min_width=W), args.bytes_per_element)
    heads = {}
    for path in args.config or []:
        r = config.resolve(config.apply_overrides(config.load(path), args.set))
        net_cfg = config.network_config(r)
        name = Path(path).stem
        entries[name] = model_memory(net_cfg, r["run.bytes_per_element"])
        heads[name] = net_cfg.head
        if not args.static_only and r["net.preset"] != "mimic_vgg16" and net_cfg.widths():
            runnable[name] = r
    if not entries:
        raise ConfigError("nothing to profile: give --config files or --preset vgg16")
    print(memory_table(entries), end="")
    vanilla = [n for n in entries if heads.get(n) == "vanilla" or n == "vanilla"]
    others = [n for n in entries if n not in vanilla and entries[n][2] > 0]
    for v in vanilla:
        for o in others:
            print(f"ratio {v}/{o} = {entries[v][2] / entries[o][2]:.3f}")

    out = Path(args.out)
    if runnable:
        out.mkdir(parents=True, exist_ok=True)
    for name, r in runnable.items():
        tc = config.train_config(r)
        net = build(tc.net, r["run.seed"])
        L = args.batch_size or r["train.batch_size"]
        ledger, start, stop = profile_step(net, _profile_batch(tc.net, L, r["run.seed"]), tc.loss, 0.0,
                                           r["run.bytes_per_element"])
        peak, phase = ledger.peak_between(start, stop)
        _write(out / f"timeline_{name}.csv", timeline_csv(ledger, start, stop))
        print(f"{name}: batch={L} peak_bytes={peak:,} peak_phase={phase}")
    return EXIT_OK


def cmd_probe(args) -> int:
    net, r = _checkpoint_run(args)
    train_ds, test_ds = load_datasets(r)
    ds = test_ds if r["probe.split"] == "test" else train_ds
    if args.class_a is not None or args.class_b is not None:
        if args.class_a is None or args.class_b is None:
            raise ConfigError("give both --class-a and --class-b")
        names = f"{args.class_a},{args.class_b}"
    else:
        names = r["probe.classes"]
    a, b = config.probe_classes({"probe.classes": names}, ds.class_names)
    if a == b:
        raise ContractError("probe classes must differ")
    for c in (a, b):
        if not np.any(ds.labels == c):
            raise ContractError(f"class {c} is absent from the {r['probe.split']} split")
    curve = analysis.layer_probe(net, ds, (a, b), r["probe.sample_cap"], r["run.seed"], r["probe.ridge"])
    out = Path(args.out or r["run.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "probe.csv", analysis.probe_csv(curve))
    emb = analysis.embed_layers(net, ds, (a, b), r["probe.sample_cap"], r["run.seed"])
    _write(out / "embeddings.csv", emb.to_csv())
    for layer, acc in curve:
        print(f"{layer:>10}  lda_accuracy={acc:.4f}")
    return EXIT_OK


def cmd_data_verify(args) -> int:
    problems = data.verify_cifar(args.root, args.dataset, strict=args.strict)
    for name, msg in problems:
        print(f"FAIL {name}: {msg}", file=sys.stderr)
    if problems:
        return EXIT_DATA
    print(f"ok: {args.dataset} files under {args.root}")
    return EXIT_OK


def cmd_data_synth(args) -> int:
    train_ds, test_ds = data.synthetic_split(
        args.n_train, args.n_test, intrinsic_dim=args.intrinsic_dim, ambient_dim=data.PIXELS,
        classes=args.classes, noise=args.noise, seed=args.seed,
    )
    if args.classes > 256:
        raise ConfigError("at most 256 classes fit in a label byte")
    train_ds, test_ds = data.to_pixel_range(train_ds, test_ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "data_batch_1.bin").write_bytes(data.cifar10_bytes(train_ds))
    (out / "test_batch.bin").write_bytes(data.cifar10_bytes(test_ds))
    data.write_checksums(out)
    print(f"wrote {len(train_ds)} train / {len(test_ds)} test records to {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _common(p, with_config=True):
    if with_config:
        p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help="= run.seed")
    p.add_argument("--out", help="= run.out_dir")
    p.add_argument("--data-root", help=f"= data.root (defaults to ${data.DATA_ROOT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifold-reg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write report, timeline, checkpoint, manifest")
    _common(p)
    p.add_argument("--epochs", type=int, help="= train.epochs")
    p.add_argument("--batch-size", type=int, help="= train.batch_size")
    p.add_argument("--manifest", help="rerun from a manifest.json written by a previous run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint")
    _common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("profile", help="model-memory table and one instrumented step")
    p.add_argument("--config", action="append", help="config file (repeatable)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--preset", choices=("vgg16",), help="add the mimic-VGG16 vanilla / W=32,16,8 rows")
    p.add_argument("--batch-size", type=int, help="batch size of the instrumented step")
    p.add_argument("--bytes-per-element", type=int, default=4, help="for --preset rows")
    p.add_argument("--static-only", action="store_true")
    p.add_argument("--out", default="profile")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("probe", help="LDA separability of PCA-2D embeddings per layer")
    _common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class-a")
    p.add_argument("--class-b")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("data", help="dataset utilities")
    dsub = p.add_subparsers(dest="data_command", required=True)
    v = dsub.add_parser("verify", help="check CIFAR binary files")
    v.add_argument("--root", default=None)
    v.add_argument("--dataset", choices=("cifar10", "cifar100"), default="cifar10")
    v.add_argument("--strict", action="store_true", help="require the full canonical file set and sizes")
    v.set_defaults(func=cmd_data_verify)
    s = dsub.add_parser("synth", help="write a synthetic manifold dataset in CIFAR-10 record format")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=2000)
    s.add_argument("--n-test", type=int, default=1000)
    s.add_argument("--intrinsic-dim", type=int, default=4)
    s.add_argument("--classes", type=int, default=2)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_data_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        print(json.dumps(exc.snapshot, sort_keys=True, default=str), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
