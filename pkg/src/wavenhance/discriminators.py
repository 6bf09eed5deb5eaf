"""Multi-scale waveform discriminators and the mel-spectrogram discriminator.

Every discriminator returns a :class:`DiscriminatorVerdict`: an unbounded
real score per example plus the intermediate activations (output layer
excluded) used for feature matching.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .dsp import MelConfig, as_tensor, downsample_by_2, mel_spectrogram, reflect_pad, same_padding
from .errors import ConfigurationError, InvalidInputError

WAVE_DISC_NAMES = ("wave_disc_16k", "wave_disc_8k", "wave_disc_4k")
SPEC_DISC_NAME = "spec_disc"
DISC_NAMES = WAVE_DISC_NAMES + (SPEC_DISC_NAME,)


@dataclass(frozen=True)
class WaveDiscConfig:
    kernel_sizes: tuple = (15, 41, 41, 41, 41, 5, 3)
    strides: tuple = (1, 4, 4, 4, 4, 1, 1)
    channels: tuple = (16, 64, 256, 1024, 1024, 1024, 1)
    groups: tuple = (1, 4, 16, 64, 256, 1, 1)
    negative_slope: float = 0.2

    def __post_init__(self):
        for name in ("kernel_sizes", "strides", "channels", "groups"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        lens = {len(self.kernel_sizes), len(self.strides), len(self.channels), len(self.groups)}
        if len(lens) != 1:
            raise ConfigurationError("wave discriminator tuples must have equal length")
        cin = 1
        for c, g in zip(self.channels, self.groups):
            if c % g or cin % g:
                raise ConfigurationError(f"channels {cin}->{c} not divisible by groups {g}")
            cin = c

    @property
    def total_stride(self):
        out = 1
        for s in self.strides:
            out *= s
        return out


@dataclass(frozen=True)
class SpecDiscConfig:
    kernel_sizes: tuple = ((3, 9), (3, 8), (3, 8), (3, 6))
    strides: tuple = ((1, 2), (1, 2), (1, 2), (1, 2))
    channels: int = 32
    head_kernel: tuple = (3, 3)
    mel: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(tuple(int(v) for v in k) for k in self.kernel_sizes))
        object.__setattr__(self, "strides", tuple(tuple(int(v) for v in s) for s in self.strides))
        object.__setattr__(self, "head_kernel", tuple(int(v) for v in self.head_kernel))
        if len(self.kernel_sizes) != len(self.strides):
            raise ConfigurationError("spec discriminator kernel/stride lists differ in length")

    @property
    def time_stride(self):
        out = 1
        for s in self.strides:
            out *= s[1]
        return out


@dataclass
class FeatureMapStack:
    layers: list

    @property
    def unit_counts(self):
        """Scalar activations per example in each layer."""
        return [int(t[0].numel()) for t in self.layers]

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]


@dataclass
class DiscriminatorVerdict:
    score: torch.Tensor  # (batch,)
    features: FeatureMapStack


def _as_batch(x):
    if x.dim() == 1:
        x = x.unsqueeze(0)
    return x


class WaveDiscriminator(nn.Module):
    """MelGAN-style stack of grouped 1-D convolutions with reflection same-padding."""

    def __init__(self, cfg: WaveDiscConfig = WaveDiscConfig()):
        super().__init__()
        self.cfg = cfg
        self.convs = nn.ModuleList()
        cin = 1
        for k, s, c, g in zip(cfg.kernel_sizes, cfg.strides, cfg.channels, cfg.groups):
            self.convs.append(nn.Conv1d(cin, c, k, stride=s, groups=g))
            cin = c
        nn.init.zeros_(self.convs[-1].weight)
        nn.init.zeros_(self.convs[-1].bias)

    def forward(self, w) -> DiscriminatorVerdict:
        h = _as_batch(w)
        if h.shape[-1] < self.cfg.total_stride:
            raise InvalidInputError(
                f"waveform discriminator needs >= {self.cfg.total_stride} samples, got {h.shape[-1]}"
            )
        h = h.unsqueeze(1)
        features = []
        for i, conv in enumerate(self.convs):
            left, right = same_padding(h.shape[-1], conv.kernel_size[0], conv.stride[0])
            h = conv(reflect_pad(h, left, right))
            if i < len(self.convs) - 1:
                h = F.leaky_relu(h, self.cfg.negative_slope)
                features.append(h)
        return DiscriminatorVerdict(h.mean(dim=(1, 2)), FeatureMapStack(features))

    def pre_pool_length(self, length):
        for conv in self.convs:
            length = -(-length // conv.stride[0])
        return length


class GLUBlock(nn.Module):
    def __init__(self, cin, channels, kernel, stride):
        super().__init__()
        self.kernel, self.stride = kernel, stride
        self.conv = nn.Conv2d(cin, 2 * channels, kernel, stride=stride)
        # batch statistics only: these networks never run in inference mode
        self.norm = nn.BatchNorm2d(2 * channels, track_running_stats=False)

    def forward(self, h):
        fl, fr = same_padding(h.shape[-2], self.kernel[0], self.stride[0])
        tl, tr = same_padding(h.shape[-1], self.kernel[1], self.stride[1])
        h = self.norm(self.conv(F.pad(h, (tl, tr, fl, fr))))
        return F.glu(h, dim=1)


class SpecDiscriminator(nn.Module):
    """Conv2d + batch norm + GLU blocks over a (mel, time) log-mel image.

    Axis 2 of the image is mel frequency (stride 1), axis 3 is time (stride 2).
    ``mel_mean``/``mel_std`` normalize the log-mel input; the training loop sets
    them from corpus statistics.
    """

    def __init__(self, cfg: SpecDiscConfig = SpecDiscConfig()):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList()
        cin = 1
        for k, s in zip(cfg.kernel_sizes, cfg.strides):
            self.blocks.append(GLUBlock(cin, cfg.channels, k, s))
            cin = cfg.channels
        self.head = nn.Conv2d(cin, 1, cfg.head_kernel)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.register_buffer("mel_mean", torch.zeros(()))
        self.register_buffer("mel_std", torch.ones(()))

    def forward(self, x) -> DiscriminatorVerdict:
        x = _as_batch(x)
        n_frames = x.shape[-1] // self.cfg.mel.spectrogram.hop_size + 1
        if n_frames < self.cfg.time_stride:
            raise InvalidInputError(
                f"spectrogram discriminator needs >= {self.cfg.time_stride} frames, "
                f"input gives {n_frames}"
            )
        m = mel_spectrogram(x, self.cfg.mel)
        h = ((m - self.mel_mean) / self.mel_std).unsqueeze(1)
        features = []
        for block in self.blocks:
            h = block(h)
            features.append(h)
        kf, kt = self.cfg.head_kernel
        fl, fr = same_padding(h.shape[-2], kf, 1)
        tl, tr = same_padding(h.shape[-1], kt, 1)
        score = self.head(F.pad(h, (tl, tr, fl, fr))).mean(dim=(1, 2, 3))
        return DiscriminatorVerdict(score, FeatureMapStack(features))


class DiscriminatorSet(nn.Module):
    """The three waveform discriminators (16/8/4 kHz views, unshared weights) and the
    spectrogram discriminator, in that order."""

    def __init__(self, wave_cfg: WaveDiscConfig = WaveDiscConfig(), spec_cfg: SpecDiscConfig = SpecDiscConfig()):
        super().__init__()
        self.wave = nn.ModuleDict({name: WaveDiscriminator(wave_cfg) for name in WAVE_DISC_NAMES})
        self.spec = SpecDiscriminator(spec_cfg)

    def named_discriminators(self):
        return [(name, self.wave[name]) for name in WAVE_DISC_NAMES] + [(SPEC_DISC_NAME, self.spec)]

    def forward(self, w):
        return multi_scale_forward(w, [self.wave[n] for n in WAVE_DISC_NAMES]) + [self.spec(w)]


def multi_scale_forward(w16k, discs):
    """Run ``discs[i]`` on the signal pooled ``i`` times; rate-descending order."""
    w = _as_batch(w16k)
    verdicts = []
    for i, disc in enumerate(discs):
        if i:
            w = downsample_by_2(w)
        verdicts.append(disc(w))
    return verdicts


def wave_disc_forward(w, disc: WaveDiscriminator) -> DiscriminatorVerdict:
    return disc(as_tensor(w, next(disc.parameters()).dtype))


def grouped_conv_parameter_count(cfg: WaveDiscConfig):
    """Per-layer ``(weights, biases)`` of the waveform discriminator."""
    rows = []
    cin = 1
    for k, c, g in zip(cfg.kernel_sizes, cfg.channels, cfg.groups):
        rows.append((cin * c * k // g, c))
        cin = c
    return rows
