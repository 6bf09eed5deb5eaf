"""Training objectives: sample L1, dual-resolution log-spectrogram L2, hinge
adversarial losses and per-layer normalized feature matching."""

from dataclasses import dataclass, fields
import math

import torch

from .discriminators import DISC_NAMES, FeatureMapStack
from .dsp import LARGE_SPEC, SMALL_SPEC, as_tensor, log_spectrogram
from .errors import InvalidInputError


@dataclass(frozen=True)
class LossWeights:
    w_l1: float = 100.0
    w_spec: float = 1.0
    w_adv: float = 1.0
    w_fm: float = 10.0

    def __post_init__(self):
        vals = [float(getattr(self, f.name)) for f in fields(self)]
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise InvalidInputError(f"loss weights must be finite and non-negative: {self}")
        if not any(v > 0 for v in vals):
            raise InvalidInputError("at least one loss weight must be positive")


def _scalar(v):
    return v.detach().item() if torch.is_tensor(v) else float(v)


@dataclass
class LossReport:
    """Itemized generator objective; ``adv_per_disc``/``fm_per_disc`` follow DISC_NAMES order.

    Fields hold 0-dim tensors; ``total_g`` keeps its autograd graph.
    """

    l1_pre: torch.Tensor
    l1_post: torch.Tensor
    spec_pre: torch.Tensor
    spec_post: torch.Tensor
    adv_per_disc: list
    fm_per_disc: list
    total_g: torch.Tensor
    d_losses: list | None = None

    def as_record(self):
        """Flat ``{name: float}`` mapping for the JSON-lines training log."""
        rec = {
            "l1_pre": _scalar(self.l1_pre),
            "l1_post": _scalar(self.l1_post),
            "spec_pre": _scalar(self.spec_pre),
            "spec_post": _scalar(self.spec_post),
        }
        for name, a, f in zip(DISC_NAMES, self.adv_per_disc, self.fm_per_disc):
            rec[f"adv_{name}"] = _scalar(a)
            rec[f"fm_{name}"] = _scalar(f)
        rec["total_g"] = _scalar(self.total_g)
        if self.d_losses is not None:
            for name, d in zip(DISC_NAMES, self.d_losses):
                rec[f"d_{name}"] = _scalar(d)
        return rec


def _pair(y, t):
    y, t = as_tensor(y), as_tensor(t)
    if y.shape != t.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(y.shape)} vs {tuple(t.shape)}")
    return y, t


def l1_sample_loss(y, t):
    y, t = _pair(y, t)
    return (y - t).abs().mean()


def multires_spec_loss(y, t, floor_eps=1e-5):
    """Equal-weight mean of log-magnitude MSE at (2048, 512) and (512, 128)."""
    y, t = _pair(y, t)
    if y.shape[-1] < SMALL_SPEC.fft_size:
        raise InvalidInputError(f"spectrogram loss needs >= {SMALL_SPEC.fft_size} samples")
    total = 0.0
    for cfg in (LARGE_SPEC, SMALL_SPEC):
        diff = log_spectrogram(y, cfg, floor_eps) - log_spectrogram(t, cfg, floor_eps)
        total = total + 0.5 * diff.pow(2).mean()
    return total


def hinge_g(score_fake):
    """``max(1 - D(G(x)), 0)``, averaged over a batch of scores."""
    return torch.clamp(1.0 - as_tensor(score_fake), min=0.0).mean()


def hinge_d(score_fake, score_real):
    """``max(1 + D(G(x)), 0) + max(1 - D(x'), 0)``, averaged over the batch."""
    fake, real = as_tensor(score_fake), as_tensor(score_real)
    return torch.clamp(1.0 + fake, min=0.0).mean() + torch.clamp(1.0 - real, min=0.0).mean()


def feature_match(f_fake, f_real):
    """Sum over layers of ``||a - b||_1 / N_i``, with N_i the units per example.

    For batched maps the per-example value is averaged over the batch, which for
    equal-sized examples is the elementwise mean of |a - b| in each layer.
    """
    fake = f_fake.layers if isinstance(f_fake, FeatureMapStack) else list(f_fake)
    real = f_real.layers if isinstance(f_real, FeatureMapStack) else list(f_real)
    if len(fake) != len(real):
        raise InvalidInputError(f"feature stacks differ in depth: {len(fake)} vs {len(real)}")
    total = 0.0
    for i, (a, b) in enumerate(zip(fake, real)):
        a, b = as_tensor(a), as_tensor(b)
        if a.shape != b.shape:
            raise InvalidInputError(f"layer {i}: shape {tuple(a.shape)} vs {tuple(b.shape)}")
        total = total + (a - b).abs().mean()
    return as_tensor(total)


def generator_objective(x, target, output, discriminators=None, weights=LossWeights(), use_postnet=True):
    """Weighted generator objective for one batch.

    ``output`` is a GeneratorOutput for ``x``. Adversarial and feature-matching
    terms are evaluated on the post-postnet signal only and are skipped (exact
    zeros) when ``discriminators`` is None or both their weights are zero.
    With ``use_postnet`` false the post-postnet L1/spectral terms are zero.
    """
    pre, post = output.pre_postnet, output.post_postnet
    zero = pre.new_zeros(())
    l1_pre = l1_sample_loss(pre, target)
    spec_pre = multires_spec_loss(pre, target)
    if use_postnet:
        l1_post = l1_sample_loss(post, target)
        spec_post = multires_spec_loss(post, target)
    else:
        l1_post, spec_post = zero, zero

    adv, fm = [zero] * len(DISC_NAMES), [zero] * len(DISC_NAMES)
    if discriminators is not None and (weights.w_adv > 0 or weights.w_fm > 0):
        fake_v = discriminators(post)
        with torch.no_grad():
            real_v = discriminators(target)
        adv = [hinge_g(v.score) for v in fake_v]
        fm = [feature_match(fv.features, rv.features) for fv, rv in zip(fake_v, real_v)]

    total = weights.w_l1 * (l1_pre + l1_post) + weights.w_spec * (spec_pre + spec_post)
    if discriminators is not None and (weights.w_adv > 0 or weights.w_fm > 0):
        total = total + weights.w_adv * sum(adv) + weights.w_fm * sum(fm)
    return LossReport(l1_pre, l1_post, spec_pre, spec_post, adv, fm, total)


def discriminator_objective(target, fake, discriminators):
    """Per-discriminator hinge losses; ``fake`` is detached so no gradient reaches G."""
    fake = fake.detach()
    fake_v = discriminators(fake)
    real_v = discriminators(target)
    return [hinge_d(f.score, r.score) for f, r in zip(fake_v, real_v)]
