"""Toy fine-tuning harness over synthetic linear blocks.

A ToyBlock is one linear layer (weight = the compressed matrix) with
seeded Gaussian calibration activations and reference outputs computed
once before quantization. Fine-tuning runs plain gradient descent on the
DoRA magnitudes and low-rank factors only; quantized codes stay frozen.
Block-wise training minimizes each block's output error; end-to-end
training minimizes the final output error of the whole chain.
"""

import math
from dataclasses import dataclass

import numpy as np

from .container import QuantizedMatrix, dequantize_base
from .errors import GradientCheckError, ParameterError, TrainingError
from .lowrank import LowRankPair, colnorms, quantize_lowrank


@dataclass
class ToyBlock:
    weight: np.ndarray  # (p, q) uncompressed
    activations: np.ndarray  # (n, p) calibration inputs
    reference: np.ndarray  # activations @ weight, fixed before quantization


def make_toy_chain(dims, n_samples: int = 32, seed: int = 0):
    """Chain of linear ToyBlocks; dims = (d0, d1, ..., dL).

    Activations of block j are the unquantized chain outputs up to j.
    """
    if len(dims) < 2:
        raise ParameterError("need at least two dims for one block")
    rng = np.random.default_rng(seed)
    weights = [
        rng.normal(size=(dims[i], dims[i + 1])) / math.sqrt(dims[i])
        for i in range(len(dims) - 1)
    ]
    x = rng.normal(size=(n_samples, dims[0]))
    blocks = []
    for w in weights:
        blocks.append(ToyBlock(weight=w, activations=x, reference=x @ w))
        x = x @ w
    return blocks


@dataclass
class BlockAdapters:
    """Trainable view of one compressed block: frozen base + DoRA params."""

    base: np.ndarray  # frozen dequantized quantized part
    L1: np.ndarray
    L2: np.ndarray
    m: np.ndarray

    def weight(self) -> np.ndarray:
        v = self.base + self.L1 @ self.L2.T
        return v * (self.m / colnorms(v))[None, :]


def adapters_from_container(qm: QuantizedMatrix) -> BlockAdapters:
    base = dequantize_base(qm)
    if qm.lowrank is not None and qm.lowrank.rank > 0:
        pair = qm.lowrank.pair()
        L1, L2 = pair.L1, pair.L2
    else:
        L1 = np.zeros((qm.p, 0))
        L2 = np.zeros((qm.q, 0))
    if qm.dora_magnitude is not None:
        m = qm.dora_magnitude.copy()
    else:
        m = colnorms(base + L1 @ L2.T)
    return BlockAdapters(base=base, L1=L1, L2=L2, m=m)


def store_adapters(qm: QuantizedMatrix, a: BlockAdapters):
    """Write trained adapters back (8-bit low-rank, 16-bit magnitudes)."""
    if a.L1.shape[1] > 0:
        qm.lowrank = quantize_lowrank(LowRankPair(L1=a.L1, L2=a.L2))
    qm.dora_magnitude = a.m.astype(np.float16).astype(np.float64)


def _dora_grads(a: BlockAdapters, g):
    # g = dLoss/dW_hat with W_hat = V * (m / ||V||_col)
    v = a.base + a.L1 @ a.L2.T
    n = colnorms(v)
    gv_dot = (g * v).sum(axis=0)
    dm = gv_dot / n
    dv = (a.m / n)[None, :] * (g - v * (gv_dot / (n * n))[None, :])
    return dm, dv @ a.L2, dv.T @ a.L1


def finetune_block(block: ToyBlock, a: BlockAdapters, steps: int, lr: float):
    """Gradient descent on (m, L1, L2) against the block's reference output.

    Returns the squared-error loss trajectory, length steps + 1 with the
    initial (pre-update) loss first.
    """
    if steps < 0:
        raise ParameterError(f"steps must be >= 0, got {steps}")
    x = block.activations
    losses = []
    for k in range(steps + 1):
        diff = x @ a.weight() - block.reference
        loss = float((diff * diff).sum())
        if not math.isfinite(loss):
            raise TrainingError("block fine-tuning diverged", k)
        losses.append(loss)
        if k == steps:
            break
        g = 2.0 * x.T @ diff
        dm, dl1, dl2 = _dora_grads(a, g)
        a.m = a.m - lr * dm
        a.L1 = a.L1 - lr * dl1
        a.L2 = a.L2 - lr * dl2
    return losses


def finetune_chain(blocks, adapters, steps: int, lr: float):
    """Joint gradient descent against the unquantized chain's final output."""
    if steps < 0:
        raise ParameterError(f"steps must be >= 0, got {steps}")
    if len(blocks) != len(adapters):
        raise ParameterError("one adapter set per block required")
    x0 = blocks[0].activations
    y_ref = blocks[-1].reference
    losses = []
    for t in range(steps + 1):
        weights = [a.weight() for a in adapters]
        acts = [x0]
        for w in weights:
            acts.append(acts[-1] @ w)
        diff = acts[-1] - y_ref
        loss = float((diff * diff).sum())
        if not math.isfinite(loss):
            raise TrainingError("end-to-end fine-tuning diverged", t)
        losses.append(loss)
        if t == steps:
            break
        delta = 2.0 * diff
        for j in range(len(adapters) - 1, -1, -1):
            g = acts[j].T @ delta
            dm, dl1, dl2 = _dora_grads(adapters[j], g)
            delta = delta @ weights[j].T
            a = adapters[j]
            a.m = a.m - lr * dm
            a.L1 = a.L1 - lr * dl1
            a.L2 = a.L2 - lr * dl2
    return losses


def toy_grad_check(
    block: ToyBlock, a: BlockAdapters, rel_tol: float = 1e-4, step: float = 1e-6
) -> dict:
    """Finite-difference validation of the DoRA/low-rank gradients."""
    x = block.activations

    def loss_of():
        diff = x @ a.weight() - block.reference
        return float((diff * diff).sum())

    diff = x @ a.weight() - block.reference
    g = 2.0 * x.T @ diff
    dm, dl1, dl2 = _dora_grads(a, g)

    offenders = []
    worst = 0.0
    checked = 0

    def compare(arr, analytic, label):
        nonlocal worst, checked
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

    compare(a.m, dm, "m")
    compare(a.L1, dl1, "L1")
    compare(a.L2, dl2, "L2")
    if offenders:
        raise GradientCheckError("analytic/finite-difference mismatch", offenders)
    return {"checked": checked, "max_rel_err": worst}
