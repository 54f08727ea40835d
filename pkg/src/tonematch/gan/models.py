"""Generator, patch discriminator and fixed perceptual feature network.

Architecture table (b = base width, n_down = 4, 9 residual blocks):

    generator            kernel  stride  pad           channels
    stem                 7x7     1       3 reflect     1 -> b
    down i (i=0..3)      3x3     2       1 zero        b*2^i -> b*2^(i+1)
    residual x9          3x3     1       1 reflect     16b -> 16b (two convs each)
    up i (i=0..3)        3x3 T   2       1 (+1 out)    16b/2^i -> 16b/2^(i+1)
    head                 7x7     1       3 reflect     b -> 1, tanh, (t+1)/2

Every conv except the head is followed by normalization and ReLU.

    discriminator        kernel  stride  pad           channels
    layer 1              4x4     2       1 zero        2 -> b        (no norm)
    layer 2              4x4     2       1 zero        b -> 2b
    layer 3              4x4     2       1 zero        2b -> 4b
    layer 4              4x4     1       1 zero        4b -> 8b
    logits               4x4     1       1 zero        8b -> 1

Layers 1-4 end with LeakyReLU(0.2); layers 2-4 are instance-normalized.

The two-scale generator runs a full generator on the 2x average-pooled input
and adds its last feature map (b channels, half resolution), upsampled by
nearest neighbour, to the full-resolution branch right after its stem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import autograd as T
from ..nn.autograd import ShapeError, Tensor
from ..nn.layers import LayerSpec, Module, ReLU, ResidualBlock, Sequential, build_layer, init_weights, norm_spec

SCALES = ("single", "multi")
NORMS = ("instance", "batch")


@dataclass(frozen=True)
class GeneratorConfig:
    scale: str = "single"
    base_width: int = 8
    n_resblocks: int = 9
    n_down: int = 4
    norm: str = "instance"
    in_channels: int = 1

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"generator scale must be one of {SCALES}, got {self.scale!r}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.base_width < 1 or self.n_resblocks < 0 or self.n_down < 1 or self.in_channels < 1:
            raise ValueError(f"invalid generator config {self}")

    @property
    def bottleneck_width(self) -> int:
        return self.base_width * 2 ** self.n_down

    @property
    def size_multiple(self) -> int:
        """Input sides must be divisible by this."""
        return 2 ** (self.n_down + (1 if self.scale == "multi" else 0))


@dataclass(frozen=True)
class DiscriminatorConfig:
    scale: str = "single"
    base_width: int = 8
    n_layers: int = 4
    in_channels: int = 2

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"discriminator scale must be one of {SCALES}, got {self.scale!r}")
        if self.base_width < 1 or self.n_layers < 2 or self.in_channels < 1:
            raise ValueError(f"invalid discriminator config {self}")

    @property
    def n_scales(self) -> int:
        return 2 if self.scale == "multi" else 1


# --------------------------------------------------------------------------
# architecture tables


def generator_table(cfg: GeneratorConfig) -> dict:
    """Layer specs of one single-scale generator, grouped by stage."""
    b, nm = cfg.base_width, cfg.norm
    stem = [LayerSpec("conv", cfg.in_channels, b, 7, 1, 3, "reflect"), norm_spec(nm, b), LayerSpec("relu")]
    down = []
    for i in range(cfg.n_down):
        cin, cout = b * 2 ** i, b * 2 ** (i + 1)
        down += [LayerSpec("conv", cin, cout, 3, 2, 1, "zero"), norm_spec(nm, cout), LayerSpec("relu")]
    c = cfg.bottleneck_width
    res = [LayerSpec("resblock", c, c, 3, 1, 1, "reflect", norm=nm) for _ in range(cfg.n_resblocks)]
    up = []
    for i in range(cfg.n_down):
        cin, cout = c // 2 ** i, c // 2 ** (i + 1)
        up += [LayerSpec("convT", cin, cout, 3, 2, 1), norm_spec(nm, cout), LayerSpec("relu")]
    head = [LayerSpec("conv", b, 1, 7, 1, 3, "reflect"), LayerSpec("tanh")]
    return {"stem": stem, "down": down, "res": res, "up": up, "head": head}


def discriminator_table(cfg: DiscriminatorConfig) -> list:
    """One list of layer specs per feature stage, the last producing logits."""
    b = cfg.base_width
    stages = []
    cin = cfg.in_channels
    for i in range(cfg.n_layers):
        cout = b * 2 ** i
        stride = 2 if i < cfg.n_layers - 1 else 1
        stage = [LayerSpec("conv", cin, cout, 4, stride, 1, "zero")]
        if i > 0:
            stage.append(norm_spec("instance", cout))
        stage.append(LayerSpec("leaky_relu", slope=0.2))
        stages.append(stage)
        cin = cout
    stages.append([LayerSpec("conv", cin, 1, 4, 1, 1, "zero")])
    return stages


def table_param_count(specs) -> int:
    """Closed-form parameter count of a (possibly nested) list of layer specs."""
    if isinstance(specs, dict):
        return sum(table_param_count(v) for v in specs.values())
    if isinstance(specs, LayerSpec):
        return specs.param_count()
    return sum(table_param_count(s) for s in specs)


def describe_architecture(gcfg: GeneratorConfig, dcfg: DiscriminatorConfig) -> str:
    lines = [f"generator ({gcfg.scale}, base width {gcfg.base_width}, norm {gcfg.norm})"]
    for stage, specs in generator_table(gcfg).items():
        for spec in specs:
            lines.append(f"  {stage:5s} {spec.describe()}")
    n_g = table_param_count(generator_table(gcfg)) * (2 if gcfg.scale == "multi" else 1)
    lines.append(f"  parameters: {n_g}")
    lines.append(f"discriminator ({dcfg.scale}, base width {dcfg.base_width}, receptive field "
                 f"{receptive_field(dcfg)} px)")
    for i, specs in enumerate(discriminator_table(dcfg)):
        for spec in specs:
            lines.append(f"  d{i}    {spec.describe()}")
    lines.append(f"  parameters: {table_param_count(discriminator_table(dcfg)) * dcfg.n_scales}")
    return "\n".join(lines)


def receptive_field(cfg: DiscriminatorConfig) -> int:
    rf, jump = 1, 1
    for stage in discriminator_table(cfg):
        conv = stage[0]
        rf += (conv.k - 1) * jump
        jump *= conv.stride
    return rf


def patch_map_size(side: int, cfg: DiscriminatorConfig) -> int:
    """Spatial size of the logit map for a square input of ``side`` pixels."""
    for stage in discriminator_table(cfg):
        conv = stage[0]
        side = (side + 2 * conv.pad - conv.k) // conv.stride + 1
    return side


# --------------------------------------------------------------------------
# generator


class Generator(Module):
    """Single-scale encoder / residual / decoder network mapping [0,1] luminance to [0,1]."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        table = generator_table(cfg)
        self.stem = Sequential(*(build_layer(s) for s in table["stem"]))
        self.down = Sequential(*(build_layer(s) for s in table["down"]))
        self.res = Sequential(*(build_layer(s) for s in table["res"]))
        self.up = Sequential(*(build_layer(s) for s in table["up"]))
        self.head = Sequential(*(build_layer(s) for s in table["head"]))

    def check_input(self, x: Tensor, multiple: int | None = None):
        multiple = multiple or 2 ** self.cfg.n_down
        if x.data.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"generator expects N x {self.cfg.in_channels} x H x W input, got {x.shape}")
        h, w = x.shape[2:]
        if h % multiple or w % multiple:
            raise ShapeError(f"generator input sides must be multiples of {multiple}, got {h}x{w}")

    def features(self, x: Tensor, inject: Tensor | None = None) -> Tensor:
        """Last feature map before the output head; ``inject`` is added after the stem."""
        h = self.stem(x)
        if inject is not None:
            h = h + inject
        return self.up(self.res(self.down(h)))

    def forward(self, x: Tensor, inject: Tensor | None = None) -> Tensor:
        self.check_input(x)
        return (self.head(self.features(x, inject)) + 1.0) * 0.5


class MultiScaleGenerator(Module):
    """Coarse generator on the half-resolution input feeding a full-resolution generator."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        single = GeneratorConfig("single", cfg.base_width, cfg.n_resblocks, cfg.n_down, cfg.norm, cfg.in_channels)
        self.coarse = Generator(single)
        self.fine = Generator(single)
        self.use_coarse = True

    def forward(self, x: Tensor) -> Tensor:
        self.fine.check_input(x, self.cfg.size_multiple)
        if not self.use_coarse:
            return self.fine(x)
        feats = self.coarse.features(T.avg_pool2(x))
        return self.fine(x, inject=T.upsample2(feats))

    def coarse_output(self, x: Tensor) -> Tensor:
        """Stand-alone prediction of the coarse branch at half resolution."""
        return self.coarse(T.avg_pool2(x))


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Module:
    model = Generator(cfg) if cfg.scale == "single" else MultiScaleGenerator(cfg)
    return init_weights(model, seed)


# --------------------------------------------------------------------------
# discriminator


class PatchDiscriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.stages = Sequential(*(Sequential(*(build_layer(s) for s in stage)) for stage in discriminator_table(cfg)))

    def forward(self, x: Tensor) -> list:
        """Intermediate features of every stage; the last entry is the logit map."""
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Discriminator(Module):
    """One patch discriminator per scale; scale k sees the input average-pooled k times."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.nets = Sequential(*(PatchDiscriminator(cfg) for _ in range(cfg.n_scales)))

    def forward(self, hdr: Tensor, ldr: Tensor) -> list:
        x = T.concat([hdr, ldr], axis=1)
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"discriminator expects {self.cfg.in_channels} channels, got {x.shape[1]}")
        outs = []
        for i, net in enumerate(self.nets):
            if i > 0:
                x = T.avg_pool2(x)
            outs.append(net(x))
        return outs


def build_discriminator(cfg: DiscriminatorConfig, seed: int = 1) -> Discriminator:
    return init_weights(Discriminator(cfg), seed)


# --------------------------------------------------------------------------
# perceptual features


class PerceptualNet(Module):
    """Fixed, seeded stack of 3x3 conv + ReLU layers with taps after every second layer.

    Weights are He-normal and never trained; 2x average pooling follows each
    tap except the last.
    """

    WIDTHS = (8, 8, 16, 16, 32, 32, 32, 32)

    def __init__(self, seed: int = 0, widths=WIDTHS, in_channels: int = 1):
        super().__init__()
        self.seed = seed
        self.widths = tuple(widths)
        rng = np.random.default_rng(seed)
        self.kernels = []
        cin = in_channels
        for cout in self.widths:
            w = rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), (cout, cin, 3, 3)).astype(np.float32)
            w.setflags(write=False)
            self.kernels.append(w)
            cin = cout

    def parameters(self):
        return []

    def astype(self, dtype):
        self.kernels = [k.astype(dtype) for k in self.kernels]
        for k in self.kernels:
            k.setflags(write=False)
        return self

    def forward(self, x: Tensor) -> list:
        taps = []
        for i, k in enumerate(self.kernels):
            x = T.relu(T.conv2d(T.pad2d(x, 1, "reflect"), Tensor(k)))
            if i % 2 == 1:
                taps.append(x)
                if i + 1 < len(self.kernels) and x.shape[2] % 2 == 0 and x.shape[3] % 2 == 0:
                    x = T.avg_pool2(x)
        return taps
