"""matvq: matrix compression with NF scalar/vector quantization, column
permutation preprocessing, low-rank + DoRA residuals, an optional learned
upsampling decoder, and exact bit-budget accounting."""

from ._backend import BACKEND, use_numba
from .budget import (
    BitBudgetReport,
    budget_hybrid,
    budget_lora,
    budget_vq_only,
    codebook_bits,
    container_report,
)
from .container import (
    QuantizedMatrix,
    dequantize,
    dequantize_base,
    deserialize,
    serialize,
)
from .decoder import (
    DecoderSpec,
    decoder_forward,
    make_decoder_spec,
    ptq_quantize_decoder,
    qat_train,
    weight_grad_check,
)
from .linalg import PatchGrid, depatchify, frobenius_error, patchify, truncated_svd
from .lowrank import (
    DoraState,
    LowRankPair,
    dora_forward,
    dora_init,
    residual_decompose,
)
from .nf import NFLevels, ScaleTree, nf_levels, normalize_blocks, sq_quantize
from .permute import (
    ColumnPermutation,
    apply_inverse,
    permutation_bit_cost,
    permute_columns,
)
from .pipeline import PipelineConfig, ablation, compress
from .vq import Codebook, CodeStream, kmeans_fit, ste_backward, vq_decode, vq_encode

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BitBudgetReport",
    "Codebook",
    "CodeStream",
    "ColumnPermutation",
    "DecoderSpec",
    "DoraState",
    "LowRankPair",
    "NFLevels",
    "PatchGrid",
    "PipelineConfig",
    "QuantizedMatrix",
    "ScaleTree",
    "ablation",
    "apply_inverse",
    "budget_hybrid",
    "budget_lora",
    "budget_vq_only",
    "codebook_bits",
    "compress",
    "container_report",
    "decoder_forward",
    "depatchify",
    "dequantize",
    "dequantize_base",
    "deserialize",
    "dora_forward",
    "dora_init",
    "frobenius_error",
    "kmeans_fit",
    "make_decoder_spec",
    "nf_levels",
    "normalize_blocks",
    "patchify",
    "permutation_bit_cost",
    "permute_columns",
    "ptq_quantize_decoder",
    "qat_train",
    "residual_decompose",
    "serialize",
    "sq_quantize",
    "ste_backward",
    "truncated_svd",
    "use_numba",
    "vq_decode",
    "vq_encode",
    "weight_grad_check",
]
