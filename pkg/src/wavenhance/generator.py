"""Feed-forward dilated-convolution enhancement network with a convolutional postnet."""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from .errors import ConfigurationError


def _default_cycle():
    return tuple(2**k for k in range(10))


@dataclass(frozen=True)
class GeneratorConfig:
    n_layers: int = 20
    dilation_cycle: tuple = field(default_factory=_default_cycle)
    kernel_size: int = 3
    channels: int = 128
    postnet_layers: int = 12
    postnet_channels: int = 128
    postnet_kernel: int = 32

    def __post_init__(self):
        object.__setattr__(self, "dilation_cycle", tuple(int(d) for d in self.dilation_cycle))
        sizes = (self.n_layers, self.kernel_size, self.channels, self.postnet_layers,
                 self.postnet_channels, self.postnet_kernel)
        if min(sizes) <= 0 or not self.dilation_cycle:
            raise ConfigurationError(f"all generator sizes must be positive: {self}")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("main-network kernel_size must be odd for centered padding")
        if self.n_layers % len(self.dilation_cycle):
            raise ConfigurationError(
                f"n_layers={self.n_layers} is not a whole number of {len(self.dilation_cycle)}-layer stacks"
            )
        cycle = self.dilation_cycle
        if any(d & (d - 1) for d in cycle) or any(b <= a for a, b in zip(cycle, cycle[1:])):
            raise ConfigurationError(f"dilations must be increasing powers of two, got {cycle}")

    @property
    def stacks(self):
        return self.n_layers // len(self.dilation_cycle)

    @property
    def dilations(self):
        return self.dilation_cycle * self.stacks


@dataclass
class GeneratorOutput:
    pre_postnet: torch.Tensor
    post_postnet: torch.Tensor


def receptive_field(cfg: GeneratorConfig, include_postnet: bool = False) -> int:
    """Input span (samples) that can influence one output sample.

    The main network spans ``1 + sum((kernel - 1) * dilation)``; the postnet
    widens that by ``(postnet_kernel - 1) * postnet_layers``.
    """
    rf = 1 + sum((cfg.kernel_size - 1) * d for d in cfg.dilations)
    if include_postnet:
        rf += (cfg.postnet_kernel - 1) * cfg.postnet_layers
    return rf


def parameter_table(cfg: GeneratorConfig):
    """Per-layer ``(name, weights, biases)`` in construction order."""
    c, k = cfg.channels, cfg.kernel_size
    rows = [("input", c, c)]
    for i in range(cfg.n_layers):
        rows.append((f"layers.{i}.dilated", 2 * c * c * k, 2 * c))
        if i < cfg.n_layers - 1:
            rows.append((f"layers.{i}.residual", c * c, c))
        rows.append((f"layers.{i}.skip", c * c, c))
    rows += [("head.0", c * c, c), ("head.1", c, 1)]
    pc, pk = cfg.postnet_channels, cfg.postnet_kernel
    for i in range(cfg.postnet_layers):
        cin = 1 if i == 0 else pc
        cout = 1 if i == cfg.postnet_layers - 1 else pc
        rows.append((f"postnet.{i}", cin * cout * pk, cout))
    return rows


def count_parameters(cfg: GeneratorConfig, part: str = "all") -> int:
    """Trainable scalar count; ``part`` is "all", "main" or "postnet"."""
    if part not in ("all", "main", "postnet"):
        raise ValueError(f"unknown part {part!r}")
    total = 0
    for name, w, b in parameter_table(cfg):
        is_post = name.startswith("postnet.")
        if part == "all" or (part == "postnet") == is_post:
            total += w + b
    return total


class GatedLayer(nn.Module):
    def __init__(self, channels, kernel_size, dilation, has_residual=True):
        super().__init__()
        self.pad = dilation * (kernel_size - 1) // 2
        self.dilated = nn.Conv1d(channels, 2 * channels, kernel_size, dilation=dilation)
        self.residual = nn.Conv1d(channels, channels, 1) if has_residual else None
        self.skip = nn.Conv1d(channels, channels, 1)

    def forward(self, h):
        z = self.dilated(F.pad(h, (self.pad, self.pad)))
        a, b = z.chunk(2, dim=1)
        g = torch.tanh(a) * torch.sigmoid(b)
        out = h + self.residual(g) if self.residual is not None else None
        return out, self.skip(g)


class Postnet(nn.Module):
    """Stack of 1-D convolutions with tanh between layers; even kernels pad K//2 left."""

    def __init__(self, n_layers, channels, kernel_size):
        super().__init__()
        self.padding = (kernel_size // 2, kernel_size - 1 - kernel_size // 2)
        self.convs = nn.ModuleList()
        for i in range(n_layers):
            cin = 1 if i == 0 else channels
            cout = 1 if i == n_layers - 1 else channels
            self.convs.append(nn.Conv1d(cin, cout, kernel_size))
        nn.init.zeros_(self.convs[-1].weight)
        nn.init.zeros_(self.convs[-1].bias)

    def forward(self, x):
        for i, conv in enumerate(self.convs):
            x = conv(F.pad(x, self.padding))
            if i < len(self.convs) - 1:
                x = torch.tanh(x)
        return x


class Generator(nn.Module):
    """Non-causal gated WaveNet (residual + skip paths) followed by a residual postnet.

    Input and outputs are (batch, time) waveforms of identical length.
    """

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.input = nn.Conv1d(1, c, 1)
        self.layers = nn.ModuleList(
            GatedLayer(c, cfg.kernel_size, d, has_residual=i < cfg.n_layers - 1)
            for i, d in enumerate(cfg.dilations)
        )
        self.head = nn.ModuleList([nn.Conv1d(c, c, 1), nn.Conv1d(c, 1, 1)])
        self.postnet = Postnet(cfg.postnet_layers, cfg.postnet_channels, cfg.postnet_kernel)

    def main_network(self, x):
        h = self.input(x.unsqueeze(1))
        skips = 0
        for layer in self.layers:
            h, s = layer(h)
            skips = skips + s
        y = self.head[0](F.relu(skips))
        return self.head[1](F.relu(y)).squeeze(1)

    def forward(self, x, use_postnet: bool = True) -> GeneratorOutput:
        if x.dim() == 1:
            x = x.unsqueeze(0)
        pre = self.main_network(x)
        if not use_postnet:
            return GeneratorOutput(pre, pre)
        post = pre + self.postnet(pre.unsqueeze(1)).squeeze(1)
        return GeneratorOutput(pre, post)


def generator_forward(x, params, cfg: GeneratorConfig, use_postnet: bool = True) -> GeneratorOutput:
    """Stateless forward pass with an explicit parameter mapping (name -> tensor)."""
    with torch.device("meta"):
        skeleton = Generator(cfg)
    expected = {k: tuple(v.shape) for k, v in skeleton.named_parameters()}
    got = {k: tuple(v.shape) for k, v in params.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        raise ConfigurationError(
            f"parameters do not match config: missing={missing[:5]} extra={extra[:5]} "
            f"mis-shaped={wrong[:5]}"
        )
    return functional_call(skeleton, dict(params), (x,), {"use_postnet": use_postnet})
