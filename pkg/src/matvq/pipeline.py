"""Compression pipelines: permute -> normalize -> quantize, low-rank
alternation, optional learned decoder, and the SQ/VQ x perm ablation."""

from dataclasses import dataclass, field, replace

import numpy as np

from .budget import BitBudgetReport, container_report
from .container import QuantizedMatrix, dequantize, dequantize_base
from .decoder import make_decoder_spec, ptq_quantize_decoder, qat_train
from .errors import ConfigError
from .linalg import as_matrix, frobenius_error, patchify
from .lowrank import (
    LowRankPair,
    colnorms,
    quantize_lowrank,
    residual_decompose,
)
from .nf import denormalize, normalize_blocks, sq_dequantize, sq_quantize
from .permute import permute_strips, unpermute_strips
from .vq import CodeStream, kmeans_fit, vq_decode, vq_encode


@dataclass
class PipelineConfig:
    quantizer: str = "sq"  # sq | vq
    b: int = 3
    d: int = 2
    block_size: int = 64
    group_size: int = 256
    strip_rows: int = 128
    permute: bool = False
    rank: int = 0
    iters: int = 3
    order: str = "residual_first"
    dora: bool = False
    seed: int = 0
    # learned-decoder path
    use_decoder: bool = False
    latent_shape: tuple = (8, 8, 4)
    channels: tuple = (16, 8, 1)
    upsample: tuple = (2, 2, 2)
    patch_size: int = 64
    b_phi: int = 6
    epochs: int = 2000
    peak_lr: float = 1e-3
    decoder_mode: str = "qat"  # qat | ptq
    embed_vq: bool = False

    def validate(self):
        if self.quantizer not in ("sq", "vq"):
            raise ConfigError(f"unknown quantizer {self.quantizer!r}")
        if not (1 <= self.b <= 8):
            raise ConfigError(f"bits must be in [1, 8], got {self.b}")
        if self.use_decoder and self.permute:
            raise ConfigError(
                "column permutation applies to the direct path only; "
                "the decoder path quantizes latents"
            )
        if self.decoder_mode not in ("qat", "ptq"):
            raise ConfigError(f"unknown decoder mode {self.decoder_mode!r}")


@dataclass
class QuantState:
    dequantized: np.ndarray
    codes: CodeStream = None
    tree: object = None
    perms: list = field(default_factory=list)
    codebook: object = None
    decoder: object = None
    embeddings: np.ndarray = None
    losses: list = field(default_factory=list)


class SQQuantizer:
    """Strip permutation (optional) + NF block normalization + scalar codes."""

    def __init__(self, b, block_size=64, group_size=256, strip_rows=128, permute=False):
        self.b = b
        self.block_size = block_size
        self.group_size = group_size
        self.strip_rows = strip_rows
        self.permute = permute

    def quantize(self, w) -> QuantState:
        w = as_matrix(w)
        x, perms = w, []
        if self.permute:
            x, perms = permute_strips(w, self.strip_rows)
        codes, tree = sq_quantize(x.ravel(), self.b, self.block_size, self.group_size)
        deq = sq_dequantize(codes, tree, self.b).reshape(w.shape)
        if perms:
            deq = unpermute_strips(deq, perms, self.strip_rows)
        return QuantState(
            dequantized=deq,
            codes=CodeStream(indices=codes.astype(np.uint64), bits_per_code=self.b),
            tree=tree,
            perms=perms,
        )


class VQQuantizer:
    """Same preprocessing, then a kmeans codebook over d-value buckets."""

    def __init__(
        self, b, d, block_size=64, group_size=256, strip_rows=128, permute=False, seed=0
    ):
        self.b = b
        self.d = d
        self.block_size = block_size
        self.group_size = group_size
        self.strip_rows = strip_rows
        self.permute = permute
        self.seed = seed

    def quantize(self, w) -> QuantState:
        w = as_matrix(w)
        x, perms = w, []
        if self.permute:
            x, perms = permute_strips(w, self.strip_rows)
        normalized, tree = normalize_blocks(x.ravel(), self.block_size, self.group_size)
        cb = kmeans_fit(normalized.reshape(-1, self.d), self.b, self.d, seed=self.seed)
        codes = vq_encode(normalized, cb)
        deq = denormalize(vq_decode(codes, cb), tree).reshape(w.shape)
        if perms:
            deq = unpermute_strips(deq, perms, self.strip_rows)
        return QuantState(
            dequantized=deq, codes=codes, tree=tree, perms=perms, codebook=cb
        )


class DecoderQuantizer:
    """Patchify, overfit latents + decoder, store 16-bit or VQ latents."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg

    def quantize(self, w) -> QuantState:
        from .decoder import decoder_forward_batch
        from .linalg import PatchGrid, depatchify

        cfg = self.cfg
        w = as_matrix(w)
        grid = patchify(w, cfg.patch_size)
        patches = grid.patches.reshape(-1, cfg.patch_size, cfg.patch_size)
        spec = make_decoder_spec(
            cfg.latent_shape,
            cfg.patch_size,
            cfg.channels,
            cfg.upsample,
            weight_bits=cfg.b_phi,
            seed=cfg.seed,
        )
        z, spec, losses = qat_train(
            patches,
            spec,
            epochs=cfg.epochs,
            peak_lr=cfg.peak_lr,
            seed=cfg.seed,
            quantize_weights=(cfg.decoder_mode == "qat"),
        )
        if cfg.decoder_mode == "ptq":
            spec = ptq_quantize_decoder(spec)

        state = QuantState(dequantized=None, decoder=spec, losses=losses)
        if cfg.embed_vq:
            normalized, tree = normalize_blocks(
                z.ravel(), cfg.block_size, cfg.group_size
            )
            cb = kmeans_fit(
                normalized.reshape(-1, cfg.d), cfg.b, cfg.d, seed=cfg.seed
            )
            codes = vq_encode(normalized, cb)
            z_used = denormalize(vq_decode(codes, cb), tree).reshape(z.shape)
            state.codes, state.tree, state.codebook = codes, tree, cb
        else:
            z_used = z.astype(np.float16).astype(np.float64)
            state.embeddings = z_used
        out = decoder_forward_batch(z_used, spec, "qat")
        state.dequantized = depatchify(
            PatchGrid(
                patch_size=cfg.patch_size,
                patches=out.reshape(
                    grid.grid_rows, grid.grid_cols, cfg.patch_size, cfg.patch_size
                ),
                grid_rows=grid.grid_rows,
                grid_cols=grid.grid_cols,
            )
        )
        return state


def _make_quantizer(cfg: PipelineConfig):
    if cfg.use_decoder:
        return DecoderQuantizer(cfg)
    common = dict(
        block_size=cfg.block_size,
        group_size=cfg.group_size,
        strip_rows=cfg.strip_rows,
        permute=cfg.permute,
    )
    if cfg.quantizer == "vq":
        return VQQuantizer(cfg.b, cfg.d, seed=cfg.seed, **common)
    return SQQuantizer(cfg.b, **common)


@dataclass
class CompressionResult:
    qm: QuantizedMatrix
    budget: BitBudgetReport
    objective: float
    objective_history: list
    config: PipelineConfig


def compress(w, cfg: PipelineConfig) -> CompressionResult:
    """Run the full pipeline and assemble the container object.

    The recorded objective is the Frobenius error of the container's own
    dequantization, so re-evaluating a stored file reproduces it exactly.
    """
    cfg.validate()
    w = as_matrix(w)
    quantizer = _make_quantizer(cfg)

    history = []
    if cfg.rank > 0:
        res = residual_decompose(w, cfg.rank, quantizer, iters=cfg.iters, order=cfg.order)
        state, lr, history = res.state, res.lowrank, res.objectives
    else:
        state = quantizer.quantize(w)
        lr = LowRankPair.empty(*w.shape)

    if cfg.use_decoder:
        quantizer_name = "vq" if cfg.embed_vq else "none"
    else:
        quantizer_name = cfg.quantizer
    qm = QuantizedMatrix(
        p=w.shape[0],
        q=w.shape[1],
        quantizer=quantizer_name,
        b=cfg.b,
        d=cfg.d if (cfg.quantizer == "vq" or cfg.embed_vq) else 1,
        block_size=cfg.block_size,
        group_size=cfg.group_size,
        strip_rows=cfg.strip_rows,
        codes=state.codes,
        codebook=state.codebook,
        tree=state.tree,
        perms=state.perms,
        lowrank=quantize_lowrank(lr) if cfg.rank > 0 else None,
        decoder=state.decoder,
        embeddings=state.embeddings,
        embed_vq=cfg.use_decoder and cfg.embed_vq,
        patch_size=cfg.patch_size if cfg.use_decoder else 0,
    )
    if cfg.dora:
        base = dequantize_base(qm)
        m = colnorms(base + (qm.lowrank.product() if qm.lowrank else 0.0))
        qm.dora_magnitude = m.astype(np.float16).astype(np.float64)

    qm.objective = frobenius_error(w, dequantize(qm))
    return CompressionResult(
        qm=qm,
        budget=container_report(qm),
        objective=qm.objective,
        objective_history=history,
        config=cfg,
    )


ABLATION_CELLS = ("sq", "sq_perm", "vq", "vq_perm")


def ablation(w, cfg: PipelineConfig) -> dict:
    """Frobenius error of {SQ, VQ} x {no perm, perm} at one code budget.

    The reported budget per cell covers the quantization payload (codes +
    codebook + scales); permutation storage is a fixed, parameter-free
    overhead reported separately per cell. Cells whose quantization
    budgets diverge by more than 1% raise ConfigError.
    """
    w = as_matrix(w)
    cells = {}
    for name in ABLATION_CELLS:
        cell_cfg = replace(
            cfg,
            quantizer="vq" if name.startswith("vq") else "sq",
            permute=name.endswith("perm"),
            rank=0,
            dora=False,
            use_decoder=False,
        )
        res = compress(w, cell_cfg)
        quant_bits = sum(
            l.bits
            for l in res.budget.lines()
            if l.name in ("codes", "codebook", "scales")
        )
        perm_bits = sum(
            l.bits for l in res.budget.lines() if l.name == "permutations"
        )
        cells[name] = {
            "error": res.objective,
            "quant_bits": quant_bits,
            "quant_bits_per_coord": quant_bits / w.size,
            "perm_overhead_bits_per_coord": perm_bits / w.size,
        }
    budgets = [cells[name]["quant_bits"] for name in ABLATION_CELLS]
    if max(budgets) > 1.01 * min(budgets):
        raise ConfigError(
            f"quantization budgets diverge by more than 1%: {budgets}"
        )
    return cells
