"""Exact bit accounting for compressed-matrix formats.

Totals are integers and rates are exact rationals (rendered to 4 decimal
places); the container serializer must agree with these reports to the
byte. The hybrid-format function mirrors the published comparison-table
semantics: its low-rank term is 16-bit 2 r min(p,q) per format (not
scaled by m, as printed there), while container reports account the 8-bit
storage actually used.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ParameterError


@dataclass
class BudgetLine:
    name: str
    bits: int
    note: str = ""

    @property
    def bytes(self) -> int:
        return -(-self.bits // 8)


@dataclass
class BitBudgetReport:
    p: int
    q: int
    m: int
    components: list
    extensions: list = field(default_factory=list)

    def lines(self):
        return list(self.components) + list(self.extensions)

    @property
    def total_bits(self) -> int:
        return sum(l.bits for l in self.lines())

    @property
    def bits_per_coordinate(self) -> Fraction:
        return Fraction(self.total_bits, self.p * self.q * self.m)

    @property
    def payload_bytes(self) -> int:
        # sections are byte-aligned per line
        return sum(l.bytes for l in self.lines())

    def format_text(self) -> str:
        rows = [f"{'component':<16} {'bits':>14}  note"]
        for l in self.lines():
            rows.append(f"{l.name:<16} {l.bits:>14}  {l.note}")
        rows.append(f"{'total':<16} {self.total_bits:>14}")
        rows.append(
            f"bits/coordinate  {float(self.bits_per_coordinate):.4f} "
            f"(exact {self.bits_per_coordinate})"
        )
        return "\n".join(rows)

    def records(self):
        recs = [f"budget.{l.name}={l.bits}" for l in self.lines()]
        recs.append(f"budget.total_bits={self.total_bits}")
        recs.append(f"budget.bits_per_coord={float(self.bits_per_coordinate):.4f}")
        return recs


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if value < 1:
            raise ParameterError(f"{name} must be >= 1, got {value}")


def perm_width(q: int) -> int:
    return (q - 1).bit_length()


def codebook_bits(b: int, d: int) -> int:
    """16-bit centroid storage: 16 * d * 2^(b*d)."""
    _check_positive(b=b, d=d)
    return 16 * d * 2 ** (b * d)


def budget_lora(p: int, q: int, r: int, m: int = 1) -> int:
    """16-bit matrix plus 16-bit rank-r adapter pair: 16(pq + 2r min(p,q)) m."""
    _check_positive(p=p, q=q, m=m)
    if r < 0:
        raise ParameterError(f"rank must be >= 0, got {r}")
    return 16 * (p * q + 2 * r * min(p, q)) * m


def budget_vq_only(p: int, q: int, b: int, d: int, m: int = 1) -> int:
    """Codes at b bits/coordinate plus one 16-bit codebook: (bpq + 2^(bd+4) d) m."""
    _check_positive(p=p, q=q, b=b, d=d, m=m)
    return (b * p * q + 2 ** (b * d + 4) * d) * m


def budget_hybrid(
    p: int,
    q: int,
    m: int = 1,
    *,
    c: int = 0,
    b_phi: int = 6,
    r: int = 0,
    e_shape=(0, 0, 0),
    n_patches: int = 1,
    b: int = 0,
    d: int = 1,
    embed_bits=16,
    lowrank_bits: int = 16,
    scale_values: int = 0,
    scale_block: int = 64,
    scale_group: int = 256,
    n_perm_strips: int = 0,
    perm_q: int = 0,
    dora: bool = False,
    n_decoder_stages: int = 0,
) -> BitBudgetReport:
    """Embedding + decoder + low-rank + VQ format report.

    With embed_bits set, the e_shape latents are stored raw at that
    precision (the high-precision-embedding configuration); with
    embed_bits=None they are vector-quantized at b bits per coordinate
    plus a codebook. Scale, permutation, DoRA, and decoder-scale
    overheads are appended as separately labeled extension lines, beyond
    the core format table.
    """
    _check_positive(p=p, q=q, m=m)
    e0, e1, e2 = e_shape
    volume = e0 * e1 * e2 * n_patches
    components = []
    if c > 0:
        components.append(BudgetLine("decoder", c * b_phi, f"c={c} at {b_phi} bits"))
    if r > 0:
        components.append(
            BudgetLine(
                "low_rank",
                2 * r * min(p, q) * lowrank_bits,
                f"rank {r} pair at {lowrank_bits} bits",
            )
        )
    if volume > 0:
        if embed_bits is not None:
            components.append(
                BudgetLine(
                    "embedding",
                    embed_bits * volume * m,
                    f"{n_patches} x {e0}x{e1}x{e2} at {embed_bits} bits",
                )
            )
        else:
            _check_positive(b=b, d=d)
            components.append(
                BudgetLine("codes", b * volume * m, f"{b} bits/coordinate")
            )
            components.append(
                BudgetLine("codebook", codebook_bits(b, d) * m, f"d={d}, b={b}")
            )

    extensions = []
    if n_decoder_stages > 0:
        extensions.append(
            BudgetLine("decoder_scales", 16 * n_decoder_stages, "16-bit per stage")
        )
    if scale_values > 0:
        n_blocks = -(-scale_values // scale_block)
        n_groups = -(-n_blocks // scale_group)
        extensions.append(
            BudgetLine(
                "scales",
                (8 * n_blocks + 16 * n_groups) * m,
                f"block {scale_block}, group {scale_group}",
            )
        )
    if n_perm_strips > 0:
        _check_positive(perm_q=perm_q)
        extensions.append(
            BudgetLine(
                "permutations",
                n_perm_strips * perm_q * perm_width(perm_q) * m,
                f"{n_perm_strips} strips at {perm_width(perm_q)} bits/index",
            )
        )
    if dora:
        extensions.append(BudgetLine("dora_magnitude", 16 * q * m, "16-bit per column"))

    return BitBudgetReport(p=p, q=q, m=m, components=components, extensions=extensions)


def container_report(qm) -> BitBudgetReport:
    """Per-section accounting of an in-memory QuantizedMatrix.

    Every line corresponds to serialized payload; the serializer's
    section lengths must equal each line's byte-rounded size exactly.
    """
    components = []
    extensions = []
    if qm.codes is not None:
        components.append(
            BudgetLine(
                "codes",
                qm.codes.payload_bits,
                f"{qm.codes.count} codes at {qm.codes.bits_per_code} bits",
            )
        )
    if qm.codebook is not None:
        components.append(
            BudgetLine("codebook", 16 * qm.codebook.dim * qm.codebook.k, "16-bit centroids")
        )
    if qm.tree is not None:
        extensions.append(
            BudgetLine(
                "scales",
                8 * qm.tree.n_blocks + 16 * qm.tree.n_groups,
                f"{qm.tree.n_blocks} blocks, {qm.tree.n_groups} groups",
            )
        )
    if qm.perms:
        qp = len(qm.perms[0].forward)
        extensions.append(
            BudgetLine(
                "permutations",
                sum(len(p.forward) for p in qm.perms) * perm_width(qp),
                f"{len(qm.perms)} strips at {perm_width(qp)} bits/index",
            )
        )
    if qm.lowrank is not None and qm.lowrank.rank > 0:
        lw = qm.lowrank
        bits = 8 * (lw.codes1.size + lw.codes2.size) + 16 * (
            lw.scales1.size + lw.scales2.size
        )
        components.append(BudgetLine("low_rank", bits, f"rank {lw.rank}, 8-bit codes"))
    if qm.dora_magnitude is not None:
        extensions.append(BudgetLine("dora_magnitude", 16 * qm.q, "16-bit per column"))
    if qm.decoder is not None:
        components.append(
            BudgetLine(
                "decoder",
                qm.decoder.param_count * qm.decoder.weight_bits,
                f"c={qm.decoder.param_count} at {qm.decoder.weight_bits} bits",
            )
        )
        extensions.append(
            BudgetLine(
                "decoder_scales", 16 * len(qm.decoder.stages), "16-bit per stage"
            )
        )
    if qm.embeddings is not None:
        n = int(np.prod(qm.embeddings.shape))
        components.append(BudgetLine("embedding", 16 * n, "16-bit latents"))
    return BitBudgetReport(p=qm.p, q=qm.q, m=1, components=components, extensions=extensions)
