"""Flat ``section.key = value`` run configuration.

Config files are plain text, one assignment per line, ``#`` starts a comment::

    # tiny synthetic run
    data.source = synthetic
    net.K = 32
    net.W = 8
    loss.alpha = 0.001, 0.01, 0.01
    train.epochs = 30

Every key has a default (see :data:`DEFAULTS`); unknown keys are rejected.
Values equal to ``auto`` are filled in by :func:`resolve` from the data
source, so the resolved mapping is fully concrete and can be echoed into a
run manifest.
"""

from __future__ import annotations

from pathlib import Path

from .data import CIFAR10_CLASSES
from .exceptions import ConfigError
from .losses import LossWeights, default_alpha, regularized_pairs
from .model import DESK_EXTRACTOR, VGG16_EXTRACTOR, NetworkConfig
from .train import TrainConfig

DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "run.out_dir": "runs/default",
    "run.bytes_per_element": 4,
    "train.epochs": 200,
    "train.lr": 0.01,
    "train.batch_size": 5,
    "train.eval_every": 1,
    "train.eval_batch": 256,
    "net.preset": "auto",
    "net.extractor": "auto",
    "net.input_shape": "auto",
    "net.num_classes": "auto",
    "net.head": "bottleneck",
    "net.K": 64,
    "net.W": 16,
    "net.halving_period": 2,
    "net.vanilla_width": 4096,
    "net.vanilla_depth": 2,
    "net.tap_mode": "post",
    "net.freeze_extractor": False,
    "loss.alpha": "default",
    "loss.lambda": 1e-4,
    "loss.scope": "scoped",
    "loss.normalize": False,
    "data.source": "synthetic",
    "data.root": "",
    "data.label_mode": "fine",
    "data.train_subset": 0,
    "data.test_subset": 0,
    "data.standardize": False,
    "synth.n_train": 2000,
    "synth.n_test": 1000,
    "synth.intrinsic_dim": 4,
    "synth.ambient_dim": 64,
    "synth.classes": 2,
    "synth.noise": 0.05,
    "synth.curvature": 2.0,
    "synth.embedding": "polynomial",
    "probe.classes": "auto",
    "probe.sample_cap": 500,
    "probe.split": "test",
    "probe.ridge": 1e-6,
}

_LIST_KEYS = {"loss.alpha": float, "net.input_shape": int, "net.extractor": str}
_AUTO_KEYS = {"net.preset", "net.extractor", "net.input_shape", "net.num_classes", "probe.classes", "loss.alpha"}
PRESETS = ("desk", "mlp", "mimic_vgg16", "custom")
SOURCES = ("synthetic", "cifar10", "cifar100")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_value(key: str, text) -> object:
    """Convert a raw string to the type of ``key``'s default."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(DEFAULTS))}")
    if not isinstance(text, str):
        return text
    text = text.strip()
    if key in _AUTO_KEYS and text in ("auto", "default"):
        return text
    try:
        if key in _LIST_KEYS:
            kind = _LIST_KEYS[key]
            return [kind(t.strip()) for t in text.split(",") if t.strip()]
        default = DEFAULTS[key]
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int) or key == "net.num_classes":
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def parse_text(text: str) -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def load(path) -> dict[str, object]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text)


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``key=value`` strings (from ``--set``) on top of ``cfg``."""
    cfg = dict(cfg)
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        cfg[key] = parse_value(key, value)
    return cfg


def dump(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, (list, tuple)):
            value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def resolve(cfg: dict) -> dict:
    """Merge with defaults and materialize every ``auto`` value."""
    for key in cfg:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(DEFAULTS))}")
    r = {**DEFAULTS, **cfg}
    r = {k: parse_value(k, v) for k, v in r.items()}
    source = r["data.source"]
    if source not in SOURCES:
        raise ConfigError(f"data.source must be one of {SOURCES}")
    if r["net.preset"] == "auto":
        r["net.preset"] = "mlp" if source == "synthetic" else "desk"
    preset = r["net.preset"]
    if preset not in PRESETS:
        raise ConfigError(f"net.preset must be one of {PRESETS}")
    if r["net.extractor"] == "auto":
        r["net.extractor"] = {"desk": list(DESK_EXTRACTOR), "mimic_vgg16": list(VGG16_EXTRACTOR)}.get(preset, [])
    if r["net.input_shape"] == "auto":
        r["net.input_shape"] = [r["synth.ambient_dim"]] if (source == "synthetic" and preset == "mlp") else [3, 32, 32]
    if r["net.num_classes"] == "auto":
        r["net.num_classes"] = {"synthetic": r["synth.classes"], "cifar10": 10}.get(
            source, 100 if r["data.label_mode"] == "fine" else 20
        )
    net = network_config(r)
    n_pairs = len(regularized_pairs(len(net.hidden_widths())))
    if r["loss.alpha"] in ("auto", "default"):
        r["loss.alpha"] = list(default_alpha(n_pairs))
    if r["probe.classes"] == "auto":
        r["probe.classes"] = "dog,cat" if source == "cifar10" else "0,1"
    loss_weights(r, net)
    return r


def network_config(r: dict) -> NetworkConfig:
    return NetworkConfig(
        input_shape=tuple(r["net.input_shape"]),
        extractor=tuple(r["net.extractor"]),
        head=r["net.head"],
        start_width=r["net.K"],
        min_width=r["net.W"],
        halving_period=r["net.halving_period"],
        num_classes=r["net.num_classes"],
        vanilla_width=r["net.vanilla_width"],
        vanilla_depth=r["net.vanilla_depth"],
        tap_mode=r["net.tap_mode"],
        freeze_extractor=r["net.freeze_extractor"],
    )


def loss_weights(r: dict, net: NetworkConfig | None = None) -> LossWeights:
    net = net or network_config(r)
    n_pairs = len(regularized_pairs(len(net.hidden_widths())))
    alpha = list(r["loss.alpha"])
    if len(alpha) == 1 and n_pairs != 1 and alpha[0] == 0:
        alpha = alpha * n_pairs
    if len(alpha) != n_pairs:
        raise ConfigError(f"loss.alpha needs {n_pairs} values for this network, got {len(alpha)}")
    return LossWeights(tuple(alpha), r["loss.lambda"], r["loss.scope"], r["loss.normalize"])


def train_config(r: dict) -> TrainConfig:
    net = network_config(r)
    return TrainConfig(
        net=net,
        loss=loss_weights(r, net),
        epochs=r["train.epochs"],
        lr=r["train.lr"],
        batch_size=r["train.batch_size"],
        seed=r["run.seed"],
        eval_every=r["train.eval_every"],
        eval_batch=r["train.eval_batch"],
    )


def probe_classes(r: dict, class_names=()) -> tuple[int, int]:
    """Translate ``probe.classes`` names (e.g. ``dog,cat``) into label indices."""
    names = [s.strip() for s in str(r["probe.classes"]).split(",")]
    if len(names) != 2:
        raise ConfigError("probe.classes needs exactly two class names or indices")
    return tuple(class_index(n, class_names) for n in names)


def class_index(name: str, class_names=()) -> int:
    if name in class_names:
        return list(class_names).index(name)
    if name in CIFAR10_CLASSES and not class_names:
        return CIFAR10_CLASSES.index(name)
    try:
        return int(name)
    except ValueError:
        raise ConfigError(f"unknown class {name!r}") from None
