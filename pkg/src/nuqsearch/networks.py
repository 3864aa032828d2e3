"""Layer inventories for memory accounting, plus the bundled CIFAR networks.

Bundled parameter counts are derived from the layer shapes of the standard
CIFAR-10 variants of each architecture (3x3 and 1x1 convolutions without
bias, batch norm excluded, a single 10-way classifier). Their FP32 totals
land within about 1% of the published sizes:

=========  ==========  ==============
network    conv layers  FP32 size (MB)
=========  ==========  ==============
vgg11      8            36.89
vgg16      13           58.86
vgg19      16           80.10
resnet18   20           44.66
resnet20   19            1.07
googlenet  64           24.57
=========  ==========  ==============
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import Sequence

import yaml

from .dsconv import DEFAULT_BLOCK_SIZE

SPEC_SCHEMA_VERSION = "1.0"
KDS_BITS = 16
FP32_BYTES = 4


class LayerKind(str, enum.Enum):
    CONV = "conv"
    FC = "fc"


@dataclass(frozen=True)
class Layer:
    name: str
    kind: LayerKind
    param_count: int

    def __post_init__(self):
        kind = self.kind.value if isinstance(self.kind, LayerKind) else str(self.kind).lower()
        object.__setattr__(self, "kind", LayerKind(kind))
        if int(self.param_count) <= 0:
            raise ValueError(f"layer {self.name!r}: param_count must be positive")
        object.__setattr__(self, "param_count", int(self.param_count))


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[Layer, ...]
    dataset: str = "cifar10"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not any(layer.kind is LayerKind.CONV for layer in self.layers):
            raise ValueError(f"network {self.name!r} has no convolutional layer")

    @property
    def conv_layers(self) -> tuple[Layer, ...]:
        return tuple(layer for layer in self.layers if layer.kind is LayerKind.CONV)

    @property
    def n_conv(self) -> int:
        return len(self.conv_layers)

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def fp32_bytes(self) -> int:
        return self.param_count * FP32_BYTES

    def to_dict(self) -> dict:
        return {
            "schema_version": SPEC_SCHEMA_VERSION,
            "name": self.name,
            "dataset": self.dataset,
            "layers": [
                {"name": l.name, "kind": l.kind.value, "param_count": l.param_count} for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        version = str(data.get("schema_version", SPEC_SCHEMA_VERSION))
        if int(version.split(".")[0]) > int(SPEC_SCHEMA_VERSION.split(".")[0]):
            raise ValueError(f"network spec schema {version} is newer than supported {SPEC_SCHEMA_VERSION}")
        try:
            layers = [Layer(d["name"], d["kind"], d["param_count"]) for d in data["layers"]]
            return cls(name=str(data["name"]), layers=tuple(layers), dataset=str(data.get("dataset", "")))
        except KeyError as exc:
            raise ValueError(f"network spec missing field {exc}") from None


def save_network_spec(spec: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(spec.to_dict(), fh, sort_keys=False)


def load_network_spec(ref: str | os.PathLike) -> NetworkSpec:
    """Load a spec file, or a bundled network by name (``vgg16`` or ``builtin:vgg16``)."""
    ref_s = str(ref)
    name = ref_s.split(":", 1)[1] if ref_s.startswith("builtin:") else ref_s
    if name.lower() in BUILDERS and not os.path.exists(ref_s):
        return builtin_network(name)
    with open(ref_s, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{ref_s}: network spec must be a mapping")
    return NetworkSpec.from_dict(data)


# --- memory accounting -------------------------------------------------------


def layer_bytes(spec: NetworkSpec, bits: Sequence[int], block_size: int = DEFAULT_BLOCK_SIZE,
                kds_bits: int = KDS_BITS) -> list[tuple[Layer, int | None, float]]:
    """Per-layer ``(layer, bits or None, bytes)``.

    A convolution costs ``bits + kds_bits / block_size`` bits per weight;
    fully connected layers stay FP32.
    """
    bits = [int(b) for b in bits]
    if len(bits) != spec.n_conv:
        raise ValueError(f"{spec.name}: got {len(bits)} bit widths for {spec.n_conv} conv layers")
    if any(not 1 <= b <= 8 for b in bits):
        raise ValueError("bit widths must lie in [1, 8]")
    it = iter(bits)
    out = []
    for layer in spec.layers:
        if layer.kind is LayerKind.CONV:
            b = next(it)
            out.append((layer, b, layer.param_count * (b + kds_bits / block_size) / 8.0))
        else:
            out.append((layer, None, float(layer.param_count * FP32_BYTES)))
    return out


def model_size_bytes(spec: NetworkSpec, bits: Sequence[int], block_size: int = DEFAULT_BLOCK_SIZE,
                     kds_bits: int = KDS_BITS) -> float:
    return sum(b for _, _, b in layer_bytes(spec, bits, block_size, kds_bits))


# --- bundled architectures ---------------------------------------------------

_VGG_CFG = {
    "vgg11": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "vgg16": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"],
    "vgg19": [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
              512, 512, 512, 512, "M", 512, 512, 512, 512, "M"],
}

_INCEPTION_CFG = [
    # name, in, 1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool proj
    ("a3", 192, 64, 96, 128, 16, 32, 32),
    ("b3", 256, 128, 128, 192, 32, 96, 64),
    ("a4", 480, 192, 96, 208, 16, 48, 64),
    ("b4", 512, 160, 112, 224, 24, 64, 64),
    ("c4", 512, 128, 128, 256, 24, 64, 64),
    ("d4", 512, 112, 144, 288, 32, 64, 64),
    ("e4", 528, 256, 160, 320, 32, 128, 128),
    ("a5", 832, 256, 160, 320, 32, 128, 128),
    ("b5", 832, 384, 192, 384, 48, 128, 128),
]


def _conv(name: str, cin: int, cout: int, k: int) -> Layer:
    return Layer(name, LayerKind.CONV, cin * cout * k * k)


def _vgg(name: str, classes: int = 10) -> NetworkSpec:
    layers, cin = [], 3
    for v in _VGG_CFG[name]:
        if v == "M":
            continue
        layers.append(_conv(f"conv{len(layers) + 1}", cin, v, 3))
        cin = v
    layers.append(Layer("fc", LayerKind.FC, cin * classes))
    return NetworkSpec(name, tuple(layers))


def _resnet18(classes: int = 10) -> NetworkSpec:
    layers = [_conv("conv1", 3, 64, 3)]
    cin = 64
    for stage, (cout, stride) in enumerate([(64, 1), (128, 2), (256, 2), (512, 2)], start=1):
        for blk in range(2):
            s = stride if blk == 0 else 1
            p = f"layer{stage}.{blk}"
            layers.append(_conv(f"{p}.conv1", cin, cout, 3))
            layers.append(_conv(f"{p}.conv2", cout, cout, 3))
            if s != 1 or cin != cout:
                layers.append(_conv(f"{p}.shortcut", cin, cout, 1))
            cin = cout
    layers.append(Layer("fc", LayerKind.FC, 512 * classes))
    return NetworkSpec("resnet18", tuple(layers))


def _resnet20(classes: int = 10) -> NetworkSpec:
    # identity (zero-padded) shortcuts: no projection convolutions
    layers = [_conv("conv1", 3, 16, 3)]
    cin = 16
    for stage, cout in enumerate([16, 32, 64], start=1):
        for blk in range(3):
            p = f"layer{stage}.{blk}"
            layers.append(_conv(f"{p}.conv1", cin, cout, 3))
            layers.append(_conv(f"{p}.conv2", cout, cout, 3))
            cin = cout
    layers.append(Layer("fc", LayerKind.FC, 64 * classes))
    return NetworkSpec("resnet20", tuple(layers))


def _googlenet(classes: int = 10) -> NetworkSpec:
    layers = [_conv("pre", 3, 192, 3)]
    for name, cin, n1, n3r, n3, n5r, n5, pp in _INCEPTION_CFG:
        layers += [
            _conv(f"{name}.b1", cin, n1, 1),
            _conv(f"{name}.b2_reduce", cin, n3r, 1),
            _conv(f"{name}.b2", n3r, n3, 3),
            _conv(f"{name}.b3_reduce", cin, n5r, 1),
            _conv(f"{name}.b3a", n5r, n5, 3),
            _conv(f"{name}.b3b", n5, n5, 3),
            _conv(f"{name}.b4", cin, pp, 1),
        ]
    layers.append(Layer("fc", LayerKind.FC, 1024 * classes))
    return NetworkSpec("googlenet", tuple(layers))


BUILDERS = {
    "vgg11": lambda: _vgg("vgg11"),
    "vgg16": lambda: _vgg("vgg16"),
    "vgg19": lambda: _vgg("vgg19"),
    "resnet18": _resnet18,
    "resnet20": _resnet20,
    "googlenet": _googlenet,
}


def builtin_network(name: str) -> NetworkSpec:
    try:
        return BUILDERS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown bundled network {name!r}; choose from {sorted(BUILDERS)}") from None


def uniform_network(n_conv: int, params_per_layer: int = 1000, name: str = "uniform") -> NetworkSpec:
    """Toy network with equal-sized conv layers, handy for synthetic runs."""
    layers = [Layer(f"conv{i + 1}", LayerKind.CONV, params_per_layer) for i in range(n_conv)]
    return NetworkSpec(name, tuple(layers), dataset="synthetic")
