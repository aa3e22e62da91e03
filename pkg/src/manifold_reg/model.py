"""Convolutional feature extractor followed by a halving fully connected head.

The bottleneck head has hidden widths ``K, K, K/2, K/2, ..., W, W`` (each
width repeated ``halving_period`` times) and a final ``num_classes`` logits
layer.  The "vanilla" head replaces it with the classic wide block
(``vanilla_depth`` layers of ``vanilla_width`` units) for memory comparisons.

Extractor layers are given as short strings::

    conv:<filters>:<kernel>:<stride>:<pad>   conv + bias + ReLU
    pool                                     2x2 max pooling, stride 2
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import memory
from .exceptions import ConfigError, ContractError, DimensionError
from .seeding import substream

DESK_EXTRACTOR = ("conv:16:3:1:1", "conv:16:3:1:1", "pool", "conv:32:3:1:1", "conv:32:3:1:1", "pool")

VGG16_EXTRACTOR = (
    "conv:64:3:1:1", "conv:64:3:1:1", "pool",
    "conv:128:3:1:1", "conv:128:3:1:1", "pool",
    "conv:256:3:1:1", "conv:256:3:1:1", "conv:256:3:1:1", "pool",
    "conv:512:3:1:1", "conv:512:3:1:1", "conv:512:3:1:1", "pool",
    "conv:512:3:1:1", "conv:512:3:1:1", "conv:512:3:1:1", "pool",
)  # fmt: skip


def _parse_layer(spec: str) -> tuple:
    parts = spec.strip().split(":")
    if parts == ["pool"]:
        return ("pool",)
    if parts[0] == "conv" and len(parts) == 5:
        try:
            filters, kernel, stride, pad = (int(p) for p in parts[1:])
        except ValueError:
            raise ConfigError(f"bad conv descriptor {spec!r}") from None
        if min(filters, kernel, stride) < 1 or pad < 0:
            raise ConfigError(f"bad conv descriptor {spec!r}")
        return ("conv", filters, kernel, stride, pad)
    raise ConfigError(f"unknown extractor layer {spec!r} (expected conv:F:k:s:p or pool)")


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple[int, ...] = (3, 32, 32)
    extractor: tuple[str, ...] = DESK_EXTRACTOR
    head: str = "bottleneck"
    start_width: int = 64
    min_width: int = 16
    halving_period: int = 2
    num_classes: int = 10
    vanilla_width: int = 4096
    vanilla_depth: int = 2
    tap_mode: str = "post"
    freeze_extractor: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "extractor", tuple(self.extractor))
        self.validate()

    def validate(self) -> None:
        if self.head not in ("bottleneck", "vanilla", "none"):
            raise ConfigError(f"head must be 'bottleneck', 'vanilla' or 'none', got {self.head!r}")
        if self.tap_mode not in ("post", "pre"):
            raise ConfigError(f"tap_mode must be 'post' or 'pre', got {self.tap_mode!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if any(s < 1 for s in self.input_shape) or len(self.input_shape) not in (1, 3):
            raise ConfigError(f"input_shape must be (D,) or (C, H, W), got {self.input_shape}")
        if self.extractor and len(self.input_shape) != 3:
            raise ConfigError("a conv extractor needs a (C, H, W) input shape")
        for spec in self.extractor:
            _parse_layer(spec)
        if self.head == "bottleneck":
            K, W = self.start_width, self.min_width
            if K < 1 or W < 1 or self.halving_period < 1:
                raise ConfigError("start_width, min_width and halving_period must be positive")
            if K < W or K % W or (K // W) & (K // W - 1):
                raise ConfigError(f"start_width/min_width must be a power of two, got {K}/{W}")
        elif self.head == "vanilla" and self.vanilla_width < 1 or self.vanilla_depth < 0:
            raise ConfigError("vanilla_width must be positive and vanilla_depth non-negative")

    def hidden_widths(self) -> list[int]:
        if self.head == "none":
            return []
        if self.head == "vanilla":
            return [self.vanilla_width] * self.vanilla_depth
        widths, w = [], self.start_width
        while w >= self.min_width:
            widths.extend([w] * self.halving_period)
            w //= 2
        return widths

    def widths(self) -> list[int]:
        """Fully connected widths including the logits layer (none for an empty head)."""
        if self.head == "none":
            return []
        return self.hidden_widths() + [self.num_classes]

    def extractor_shapes(self) -> list[tuple]:
        """``(kind, weight_shape or None, output_shape)`` for each extractor layer."""
        shape = self.input_shape
        out = []
        for spec in self.extractor:
            layer = _parse_layer(spec)
            C, H, W = shape
            if layer[0] == "pool":
                if H % 2 or W % 2:
                    raise ConfigError(f"pool on odd spatial size {H}x{W}")
                shape = (C, H // 2, W // 2)
                out.append(("pool", None, shape))
            else:
                _, F, k, s, p = layer
                try:
                    Ho = ad.conv_output_size(H, k, s, p)
                    Wo = ad.conv_output_size(W, k, s, p)
                except DimensionError as exc:
                    raise ConfigError(str(exc)) from None
                shape = (F, Ho, Wo)
                out.append(("conv", (F, C, k, k), shape))
        return out

    def feature_dim(self) -> int:
        shapes = self.extractor_shapes()
        final = shapes[-1][2] if shapes else self.input_shape
        return math.prod(final)

    def parameter_shapes(self) -> list[tuple[str, list[tuple[int, ...]]]]:
        """Per-layer parameter shapes, in declaration order."""
        out = []
        for i, (kind, wshape, _) in enumerate(self.extractor_shapes()):
            if kind == "conv":
                out.append((f"conv{i}", [wshape, (wshape[0],)]))
        fan_in = self.feature_dim()
        for j, width in enumerate(self.widths()):
            out.append((f"fc{j}", [(fan_in, width), (width,)]))
            fan_in = width
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["extractor"] = list(self.extractor)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        valid = set(cls.__dataclass_fields__)
        unknown = set(d) - valid
        if unknown:
            raise ConfigError(f"unknown network keys {sorted(unknown)}; valid: {sorted(valid)}")
        return cls(**d)


def desk_config(min_width: int = 16, start_width: int = 64, head: str = "bottleneck", **kw) -> NetworkConfig:
    """Small 4-conv / 2-pool extractor for 32x32 RGB input."""
    return NetworkConfig(
        input_shape=(3, 32, 32), extractor=DESK_EXTRACTOR, head=head,
        start_width=start_width, min_width=min_width, **kw,
    )


def mimic_vgg16_config(head: str = "bottleneck", min_width: int = 32, start_width: int = 512,
                       input_size: int = 32, num_classes: int = 10) -> NetworkConfig:
    """VGG16 conv shapes for parameter counting only; never trained here.

    With 32x32 input the vanilla head has 33,638,218 parameters and the
    default bottleneck (K=512, W=32) 15,502,410.
    """
    return NetworkConfig(
        input_shape=(3, input_size, input_size), extractor=VGG16_EXTRACTOR, head=head,
        start_width=start_width, min_width=min_width, num_classes=num_classes,
    )


def mlp_config(input_dim: int, start_width: int, min_width: int, num_classes: int, **kw) -> NetworkConfig:
    """Bottleneck head applied directly to vector input (no extractor)."""
    return NetworkConfig(
        input_shape=(input_dim,), extractor=(), start_width=start_width,
        min_width=min_width, num_classes=num_classes, **kw,
    )


class Conv2d:
    def __init__(self, weight, bias, stride, pad):
        self.weight, self.bias, self.stride, self.pad = weight, bias, stride, pad

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return ad.relu(ad.add_bias(ad.conv2d(x, self.weight, self.stride, self.pad), self.bias))


class MaxPool2:
    def parameters(self):
        return []

    def __call__(self, x):
        return ad.maxpool2(x)


class Dense:
    def __init__(self, weight, bias):
        self.weight, self.bias = weight, bias

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)


@dataclass
class ForwardResult:
    logits: ad.Tensor
    taps: list
    features: ad.Tensor
    hidden: list = field(default_factory=list)  # post-activation outputs of hidden layers


@dataclass
class Network:
    config: NetworkConfig
    extractor: list = field(default_factory=list)
    dense: list = field(default_factory=list)

    @property
    def tap_indices(self) -> list[int]:
        return list(range(len(self.dense) - 1))

    def parameters(self) -> list[ad.Tensor]:
        return [p for layer in self.extractor + self.dense for p in layer.parameters()]

    def trainable_parameters(self) -> list[ad.Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        out = []
        for i, layer in enumerate(self.extractor):
            if isinstance(layer, Conv2d):
                out += [(f"conv{i}.weight", layer.weight), (f"conv{i}.bias", layer.bias)]
        for j, layer in enumerate(self.dense):
            out += [(f"fc{j}.weight", layer.weight), (f"fc{j}.bias", layer.bias)]
        return out

    def dense_parameters(self, index: int) -> list[ad.Tensor]:
        return self.dense[index].parameters()

    def extract(self, x) -> ad.Tensor:
        """Extractor output flattened to ``B x feature_dim``."""
        x = ad.as_tensor(x)
        expected = self.config.input_shape
        if x.shape[1:] != expected:
            raise DimensionError(f"input shape {x.shape[1:]} does not match config {expected}")
        ledger = memory.active_ledger()
        if self.extractor:
            if ledger is not None:
                ledger.set_phase("fwd1")
            for layer in self.extractor:
                x = layer(x)
        if ledger is not None:
            ledger.set_phase("fwd2")
        return ad.flatten(x) if x.ndim > 2 else x

    def dense_step(self, index: int, x: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """Run hidden layer ``index``; returns ``(output, tap)``."""
        pre = self.dense[index](x)
        post = ad.relu(pre)
        return post, (post if self.config.tap_mode == "post" else pre)

    def forward(self, x) -> ForwardResult:
        if not self.dense:
            raise ContractError("network has no fully connected layers to produce logits")
        features = self.extract(x)
        h, taps, hidden = features, [], []
        for i in range(len(self.dense) - 1):
            h, tap = self.dense_step(i, h)
            taps.append(tap)
            hidden.append(h)
        logits = self.dense[-1](h)
        return ForwardResult(logits, taps, features, hidden)

    __call__ = forward


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build(config: NetworkConfig, seed: int = 0) -> Network:
    """Instantiate parameters with seeded Kaiming-uniform weights and zero biases."""
    rng = substream(seed, "init")
    net = Network(config)
    trainable_extractor = not config.freeze_extractor
    for spec, (kind, wshape, _) in zip(config.extractor, config.extractor_shapes()):
        if kind == "pool":
            net.extractor.append(MaxPool2())
            continue
        _, F, k, stride, pad = _parse_layer(spec)
        w = ad.Tensor(_kaiming_uniform(rng, wshape, wshape[1] * k * k), requires_grad=trainable_extractor)
        b = ad.Tensor(np.zeros(F), requires_grad=trainable_extractor)
        net.extractor.append(Conv2d(w, b, stride, pad))
    fan_in = config.feature_dim()
    for width in config.widths():
        w = ad.Tensor(_kaiming_uniform(rng, (fan_in, width), fan_in), requires_grad=True)
        b = ad.Tensor(np.zeros(width), requires_grad=True)
        net.dense.append(Dense(w, b))
        fan_in = width
    return net


def count_parameters(net_or_config) -> tuple[list[tuple[str, int]], int]:
    """Per-layer and total weight+bias element counts (no allocation needed for configs)."""
    if net_or_config is None:
        return [], 0
    config = net_or_config.config if isinstance(net_or_config, Network) else net_or_config
    per_layer = [(name, sum(math.prod(s) for s in shapes)) for name, shapes in config.parameter_shapes()]
    return per_layer, sum(n for _, n in per_layer)


def count_buffers(net_or_config) -> int:
    """Persistent non-trainable elements.  None of our layer types keep any."""
    return 0


def with_overrides(config: NetworkConfig, **changes) -> NetworkConfig:
    return replace(config, **changes)
