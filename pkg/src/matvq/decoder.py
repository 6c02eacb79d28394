"""Latent-embedding decoder trained by overfitting, with quantized weights.

The decoder is a stack of stages, each a linear channel mix followed by
sub-pixel (pixel-shuffle) upsampling and a GELU on every stage but the
last. The latent is an e2-channel e0 x e1 grid; per-patch latents are free
parameters optimized jointly with the decoder weights. Weight
quantization is per-stage absmax round-to-nearest at ``weight_bits``; QAT
runs the forward pass on quantized weights and updates the float masters
through the straight-through identity.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import (
    DimensionError,
    GradientCheckError,
    ParameterError,
    TrainingError,
)

_F16_TINY = float(np.nextafter(np.float16(0), np.float16(1)))


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_prime(x):
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(
        2.0 * math.pi
    )


def rtn_quantize(values, bits: int):
    """Symmetric absmax round-to-nearest; returns (codes, f16-valued scale)."""
    m = 2 ** (bits - 1) - 1
    absmax = float(np.abs(values).max()) if values.size else 0.0
    scale = max(absmax / m, _F16_TINY)
    scale = float(np.float64(np.float16(scale)))
    if scale == 0.0:
        scale = _F16_TINY
    codes = np.clip(np.rint(values / scale), -m, m).astype(np.int32)
    return codes, scale


@dataclass
class DecoderStage:
    weight: np.ndarray  # master, (c_in, c_out * u * u)
    bias: np.ndarray  # master, (c_out * u * u,)
    c_in: int
    c_out: int
    upsample: int
    # materialized quantized view (refreshed from masters)
    w_codes: np.ndarray = None
    b_codes: np.ndarray = None
    scale: float = 0.0

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size

    def refresh_view(self, bits: int):
        stacked = np.concatenate([self.weight.ravel(), self.bias.ravel()])
        codes, scale = rtn_quantize(stacked, bits)
        self.w_codes = codes[: self.weight.size].reshape(self.weight.shape)
        self.b_codes = codes[self.weight.size :]
        self.scale = scale

    def quantized(self):
        return (
            self.w_codes.astype(np.float64) * self.scale,
            self.b_codes.astype(np.float64) * self.scale,
        )


@dataclass
class DecoderSpec:
    stages: list
    latent_shape: tuple  # (e0, e1, e2)
    patch_size: int
    weight_bits: int

    @property
    def param_count(self) -> int:
        return sum(s.param_count for s in self.stages)

    def refresh_view(self):
        for s in self.stages:
            s.refresh_view(self.weight_bits)


def make_decoder_spec(
    latent_shape,
    patch_size: int,
    channels,
    upsample,
    weight_bits: int = 6,
    seed: int = 0,
) -> DecoderSpec:
    """Build and initialize a decoder; channels[-1] must be 1.

    prod(upsample) * e0 must equal patch_size, and the latent grid must be
    square (e0 == e1) since pixel-shuffle upsampling is isotropic.
    """
    e0, e1, e2 = latent_shape
    if e0 != e1:
        raise ParameterError(f"latent grid must be square, got {e0} x {e1}")
    if len(channels) != len(upsample) or not channels:
        raise ParameterError("channels and upsample must be non-empty, equal length")
    if channels[-1] != 1:
        raise ParameterError("final stage must emit a single channel")
    if e0 * int(np.prod(upsample)) != patch_size:
        raise ParameterError(
            f"upsampling {tuple(upsample)} maps {e0} to {e0 * int(np.prod(upsample))}, "
            f"not patch size {patch_size}"
        )
    if not (2 <= weight_bits <= 16):
        raise ParameterError(f"weight_bits must be in [2, 16], got {weight_bits}")
    if e0 * e1 * e2 >= patch_size * patch_size:
        warnings.warn(
            f"latent {latent_shape} is not smaller than the {patch_size}^2 patch; "
            "compression is not meaningful",
            stacklevel=2,
        )

    rng = np.random.default_rng(seed)
    stages = []
    c_in = e2
    for c_out, u in zip(channels, upsample):
        c_mid = c_out * u * u
        std = math.sqrt(2.0 / (c_in + c_mid))
        stages.append(
            DecoderStage(
                weight=rng.normal(0.0, std, size=(c_in, c_mid)),
                bias=np.zeros(c_mid),
                c_in=c_in,
                c_out=c_out,
                upsample=u,
            )
        )
        c_in = c_out
    spec = DecoderSpec(
        stages=stages,
        latent_shape=tuple(latent_shape),
        patch_size=patch_size,
        weight_bits=weight_bits,
    )
    spec.refresh_view()
    return spec


def _shuffle(a, n, h, w, c_out, u):
    # (n, h, w, c_out*u*u) -> (n, h*u, w*u, c_out)
    return (
        a.reshape(n, h, w, c_out, u, u)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, h * u, w * u, c_out)
    )


def _unshuffle(d, n, h, w, c_out, u):
    # gradient of _shuffle: (n, h*u, w*u, c_out) -> (n, h*w, c_out*u*u) flat rows
    return (
        d.reshape(n, h, u, w, u, c_out)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n * h * w, c_out * u * u)
    )


def _forward(z_batch, spec: DecoderSpec, mode: str, keep_cache: bool = False):
    n, e0, e1, e2 = z_batch.shape
    x = z_batch
    cache = []
    h, w = e0, e1
    for idx, stage in enumerate(spec.stages):
        last = idx == len(spec.stages) - 1
        if mode == "fp":
            wq, bq = stage.weight, stage.bias
        else:
            wq, bq = stage.quantized()
        xf = x.reshape(n * h * w, stage.c_in)
        a = xf @ wq + bq
        s = _shuffle(a, n, h, w, stage.c_out, stage.upsample)
        y = s if last else _gelu(s)
        if keep_cache:
            cache.append((xf, s, wq, h, w, last))
        x = y
        h *= stage.upsample
        w *= stage.upsample
    return x, cache


def decoder_forward(z, spec: DecoderSpec, mode: str = "qat") -> np.ndarray:
    """Decode one latent into a patch; mode is qat, ptq, or fp.

    qat and ptq both run on the materialized quantized view; fp runs on
    the float masters.
    """
    if mode not in ("qat", "ptq", "fp"):
        raise ParameterError(f"unknown mode {mode!r}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != spec.latent_shape:
        raise DimensionError(
            f"latent shape {z.shape} does not match spec {spec.latent_shape}"
        )
    out, _ = _forward(z[None], spec, mode)
    return out[:, :, :, 0][0]


def decoder_forward_batch(z_batch, spec: DecoderSpec, mode: str = "qat") -> np.ndarray:
    z_batch = np.asarray(z_batch, dtype=np.float64)
    if z_batch.ndim != 4 or z_batch.shape[1:] != spec.latent_shape:
        raise DimensionError(
            f"latent batch shape {z_batch.shape} does not match spec {spec.latent_shape}"
        )
    out, _ = _forward(z_batch, spec, mode)
    return out[:, :, :, 0]


def _backward(d_out, spec: DecoderSpec, cache):
    n = d_out.shape[0]
    grads_w = [None] * len(spec.stages)
    grads_b = [None] * len(spec.stages)
    d = d_out[..., None]  # (n, s, s, 1)
    for idx in range(len(spec.stages) - 1, -1, -1):
        stage = spec.stages[idx]
        xf, s, wq, h, w, last = cache[idx]
        if not last:
            d = d * _gelu_prime(s)
        da = _unshuffle(d, n, h, w, stage.c_out, stage.upsample)
        grads_w[idx] = xf.T @ da
        grads_b[idx] = da.sum(axis=0)
        d = (da @ wq.T).reshape(n, h, w, stage.c_in)
    return grads_w, grads_b, d  # d is the latent gradient (n, e0, e1, e2)


def reconstruction_loss_and_grads(z_batch, targets, spec: DecoderSpec, mode: str):
    """Mean squared error over all patch entries plus analytic gradients."""
    out, cache = _forward(z_batch, spec, mode, keep_cache=True)
    diff = out[:, :, :, 0] - targets
    loss = float((diff * diff).mean())
    d_out = 2.0 * diff / diff.size
    gw, gb, gz = _backward(d_out, spec, cache)
    return loss, gw, gb, gz


class _Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def qat_train(
    patches,
    spec: DecoderSpec,
    epochs: int = 2000,
    peak_lr: float = 1e-3,
    seed: int = 0,
    quantize_weights: bool = True,
):
    """Overfit per-patch latents and decoder weights to the patch set.

    Cosine learning-rate schedule from peak_lr to 0. With
    quantize_weights the forward pass runs on the round-to-nearest
    quantized view (refreshed from the masters every step) and the
    backward pass updates the masters straight through; without it this
    is plain float training (the PTQ baseline's first phase). The state
    returned is the best-loss checkpoint seen during training; quantized
    losses jitter near convergence as the rounded view flips.

    Returns (embeddings, spec, losses) with losses[0] the initial loss
    and one entry per epoch thereafter.
    """
    if epochs < 0:
        raise ParameterError(f"epochs must be >= 0, got {epochs}")
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 3 or patches.shape[1:] != (spec.patch_size, spec.patch_size):
        raise DimensionError(
            f"expected (n, {spec.patch_size}, {spec.patch_size}) patches, "
            f"got {patches.shape}"
        )
    n = patches.shape[0]
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 0.5, size=(n,) + spec.latent_shape)

    mode = "qat" if quantize_weights else "fp"
    params = [z] + [s.weight for s in spec.stages] + [s.bias for s in spec.stages]
    opt = _Adam([p.shape for p in params])

    spec.refresh_view()
    loss, *_ = reconstruction_loss_and_grads(z, patches, spec, mode)
    losses = [loss]
    best_loss = loss
    best = [p.copy() for p in params]
    for epoch in range(epochs):
        if quantize_weights:
            spec.refresh_view()
        loss, gw, gb, gz = reconstruction_loss_and_grads(z, patches, spec, mode)
        if not math.isfinite(loss):
            raise TrainingError("decoder training diverged", epoch)
        if loss < best_loss:
            best_loss = loss
            best = [p.copy() for p in params]
        lr = peak_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(epochs, 1)))
        opt.step(params, [gz] + gw + gb, lr)
        losses.append(loss)
    for p, b in zip(params, best):
        p[...] = b
    spec.refresh_view()
    return z, spec, losses


def ptq_quantize_decoder(spec: DecoderSpec) -> DecoderSpec:
    """Round-to-nearest quantization of a float-trained decoder's weights."""
    spec.refresh_view()
    return spec


def quantization_gap_report(z_batch, spec: DecoderSpec) -> dict:
    """Measured fp-vs-quantized forward difference (no bound asserted)."""
    fp = decoder_forward_batch(z_batch, spec, "fp")
    qt = decoder_forward_batch(z_batch, spec, "qat")
    gap = float(np.sqrt(((fp - qt) ** 2).sum()))
    ref = float(np.sqrt((fp**2).sum()))
    return {"gap_frobenius": gap, "fp_frobenius": ref}


def weight_grad_check(
    spec: DecoderSpec, z, target, rel_tol: float = 1e-4, step: float = 1e-5
) -> dict:
    """Central finite-difference validation of the manual backward pass.

    Runs in fp mode (the quantized forward is piecewise constant in the
    weights). Raises GradientCheckError listing offending parameters when
    any gradient misses the tolerance.
    """
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    zb = z[None]
    tb = target[None]
    _, gw, gb, gz = reconstruction_loss_and_grads(zb, tb, spec, "fp")

    def loss_of():
        out, _ = _forward(zb, spec, "fp")
        diff = out[:, :, :, 0] - tb
        return float((diff * diff).mean())

    offenders = []
    checked = 0
    worst = 0.0

    def compare(arr, analytic, label):
        nonlocal checked, worst
        flat = arr.ravel()
        an = analytic.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_of()
            flat[i] = orig - step
            down = loss_of()
            flat[i] = orig
            fd = (up - down) / (2 * step)
            denom = max(abs(fd), abs(an[i]), 1e-8)
            rel = abs(an[i] - fd) / denom
            worst = max(worst, rel)
            checked += 1
            if rel > rel_tol:
                offenders.append(f"{label}[{i}] analytic={an[i]:.3e} fd={fd:.3e}")

    for idx, stage in enumerate(spec.stages):
        compare(stage.weight, gw[idx], f"stage{idx}.weight")
        compare(stage.bias, gb[idx], f"stage{idx}.bias")
    compare(zb, gz, "latent")

    if offenders:
        raise GradientCheckError("analytic/finite-difference mismatch", offenders)
    return {"checked": checked, "max_rel_err": worst}
