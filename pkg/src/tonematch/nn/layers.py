"""Layer modules, declarative layer specs and weight initialization."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autograd as T
from .autograd import Tensor


class Module:
    """Container that tracks parameters, buffers and child modules by name."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, x):
        raise NotImplementedError

    def modules(self):
        yield self
        for child in self._modules.values():
            yield from child.modules()

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._modules.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._modules.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((n, p.data) for n, p in self.named_parameters())
        out.update((n, b) for n, b in self.named_buffers())
        return out

    def load_state_dict(self, state, strict: bool = True):
        own = dict(self.named_parameters())
        bufs = {}
        for mod_prefix, mod in self._walk():
            for bname in mod._buffers:
                bufs[mod_prefix + bname] = (mod, bname)
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.shape:
                    raise T.ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
                p.data = arr.astype(p.dtype).copy()
        for name, (mod, bname) in bufs.items():
            if name in state:
                mod.register_buffer(bname, np.asarray(state[name]).astype(np.float32).copy())

    def _walk(self, prefix: str = ""):
        yield prefix, self
        for cname, child in self._modules.items():
            yield from child._walk(f"{prefix}{cname}.")

    def astype(self, dtype):
        for mod in self.modules():
            for p in mod._params.values():
                p.data = p.data.astype(dtype)
            for bname, b in list(mod._buffers.items()):
                mod.register_buffer(bname, b.astype(dtype))
        return self

    def train(self, mode: bool = True):
        for mod in self.modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag
        return self


def _param(shape, fill=0.0) -> Tensor:
    return Tensor(np.full(shape, fill, dtype=np.float32), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, stride=1, pad=0, pad_mode="zero", bias=True):
        super().__init__()
        self.stride, self.pad, self.pad_mode = stride, pad, pad_mode
        self.weight = _param((out_ch, in_ch, k, k))
        self.bias = _param((out_ch,)) if bias else None

    def forward(self, x):
        return T.conv2d(T.pad2d(x, self.pad, self.pad_mode), self.weight, self.bias, self.stride)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, k=3, stride=2, pad=1, output_padding=1, bias=True):
        super().__init__()
        self.stride, self.pad, self.output_padding = stride, pad, output_padding
        self.weight = _param((in_ch, out_ch, k, k))
        self.bias = _param((out_ch,)) if bias else None

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad, self.output_padding)


class InstanceNorm2d(Module):
    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = _param((channels,), 1.0)
        self.bias = _param((channels,))

    def forward(self, x):
        return T.instance_norm(x, self.weight, self.bias, self.eps)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.weight = _param((channels,), 1.0)
        self.bias = _param((channels,))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x):
        if not self.training:
            return T.batch_norm(x, self.weight, self.bias, self.eps, (self.running_mean, self.running_var))
        mu = x.data.mean(axis=(0, 2, 3))
        n = x.data.size / x.shape[1]
        var = x.data.var(axis=(0, 2, 3)) * (n / max(n - 1.0, 1.0))
        m = self.momentum
        self.register_buffer("running_mean", ((1 - m) * self.running_mean + m * mu).astype(np.float32))
        self.register_buffer("running_var", ((1 - m) * self.running_var + m * var).astype(np.float32))
        return T.batch_norm(x, self.weight, self.bias, self.eps)


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class LeakyReLU(Module):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        return T.leaky_relu(x, self.slope)


class Tanh(Module):
    def forward(self, x):
        return T.tanh(x)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]


def make_norm(kind: str, channels: int) -> Module:
    if kind == "instance":
        return InstanceNorm2d(channels)
    if kind == "batch":
        return BatchNorm2d(channels)
    raise ValueError(f"unknown norm {kind!r}")


class ResidualBlock(Module):
    """x + norm(conv(relu(norm(conv(x))))), 3x3 reflection-padded convolutions."""

    def __init__(self, channels, norm="instance", pad_mode="reflect"):
        super().__init__()
        self.body = Sequential(
            Conv2d(channels, channels, 3, 1, 1, pad_mode), make_norm(norm, channels), ReLU(),
            Conv2d(channels, channels, 3, 1, 1, pad_mode), make_norm(norm, channels),
        )

    def forward(self, x):
        return x + self.body(x)


# --------------------------------------------------------------------------
# declarative specs


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_ch: int = 0
    out_ch: int = 0
    k: int = 0
    stride: int = 1
    pad: int = 0
    pad_mode: str = "zero"
    slope: float = 0.2
    norm: str = "instance"

    def param_count(self) -> int:
        if self.kind == "conv":
            return self.out_ch * self.in_ch * self.k * self.k + self.out_ch
        if self.kind == "convT":
            return self.in_ch * self.out_ch * self.k * self.k + self.out_ch
        if self.kind in ("instance_norm", "batch_norm"):
            return 2 * self.out_ch
        if self.kind == "resblock":
            c = self.out_ch
            return 2 * (c * c * 9 + c) + 4 * c
        return 0

    def describe(self) -> str:
        if self.kind in ("conv", "convT"):
            return f"{self.kind} {self.in_ch}->{self.out_ch} k{self.k} s{self.stride} p{self.pad} {self.pad_mode}"
        if self.kind in ("instance_norm", "batch_norm", "resblock"):
            return f"{self.kind} {self.out_ch}"
        if self.kind == "leaky_relu":
            return f"leaky_relu {self.slope}"
        return self.kind


def build_layer(spec: LayerSpec) -> Module:
    k = spec.kind
    if k == "conv":
        return Conv2d(spec.in_ch, spec.out_ch, spec.k, spec.stride, spec.pad, spec.pad_mode)
    if k == "convT":
        return ConvTranspose2d(spec.in_ch, spec.out_ch, spec.k, spec.stride, spec.pad)
    if k == "instance_norm":
        return InstanceNorm2d(spec.out_ch)
    if k == "batch_norm":
        return BatchNorm2d(spec.out_ch)
    if k == "relu":
        return ReLU()
    if k == "leaky_relu":
        return LeakyReLU(spec.slope)
    if k == "tanh":
        return Tanh()
    if k == "resblock":
        return ResidualBlock(spec.out_ch, spec.norm, spec.pad_mode)
    raise ValueError(f"unknown layer kind {k!r}")


def norm_spec(kind: str, channels: int) -> LayerSpec:
    return LayerSpec(f"{kind}_norm", out_ch=channels)


# --------------------------------------------------------------------------
# initialization


def init_weights(model: Module, seed: int, std: float = 0.02) -> Module:
    """Conv weights ~ N(0, std^2), biases 0; norm scales ~ N(1, std^2), shifts 0."""
    rng = np.random.default_rng(seed)
    for mod in model.modules():
        if isinstance(mod, (Conv2d, ConvTranspose2d)):
            mod.weight.data = rng.normal(0.0, std, mod.weight.shape).astype(mod.weight.dtype)
            if mod.bias is not None:
                mod.bias.data = np.zeros_like(mod.bias.data)
        elif isinstance(mod, (InstanceNorm2d, BatchNorm2d)):
            mod.weight.data = rng.normal(1.0, std, mod.weight.shape).astype(mod.weight.dtype)
            mod.bias.data = np.zeros_like(mod.bias.data)
    return model
