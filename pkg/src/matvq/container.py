"""Single-file container for compressed matrices.

Layout (all little-endian):

    magic "RLQM" | u16 version | u32 header_len | header (JSON, UTF-8)
    u16 n_sections | n_sections x (4-byte tag, u64 offset, u64 length)
    payload bytes | u32 CRC32 over the payload

Section offsets are relative to the payload start. Sections, in fixed
order when present:

    CODE  packed quantization codes, LSB-first
    CBOK  codebook centroids, float16
    SCLT  scale tree: uint8 block codes then float16 group maxes
    PERM  inverse column permutations, one packed stream over all strips
    LWRK  low-rank int8 codes (L1 then L2) then float16 column scales
    DORA  float16 per-column magnitudes
    DECW  decoder weight codes packed at weight_bits (offset-encoded
          unsigned), then float16 per-stage scales
    EMBD  float16 latent embeddings

Every stored float16 value is rounded at construction time, so
serialize/deserialize round-trips are bit-exact.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .decoder import DecoderSpec, DecoderStage
from .errors import CorruptionError, FormatError, StructureError, VersionError
from .linalg import PatchGrid, depatchify
from .lowrank import DoraState, LowRankPair, QuantizedLowRank, dora_forward
from .nf import ScaleTree, denormalize, nf_levels
from .permute import ColumnPermutation, unpermute_strips
from .vq import Codebook, CodeStream, pack_codes, unpack_codes, vq_decode

MAGIC = b"RLQM"
VERSION = 1

_SECTION_ORDER = ["CODE", "CBOK", "SCLT", "PERM", "LWRK", "DORA", "DECW", "EMBD"]


@dataclass
class QuantizedMatrix:
    p: int
    q: int
    quantizer: str  # "sq" | "vq" | "none"
    b: int = 0
    d: int = 1
    block_size: int = 64
    group_size: int = 256
    strip_rows: int = 128
    codes: CodeStream = None
    codebook: Codebook = None
    tree: ScaleTree = None
    perms: list = field(default_factory=list)
    lowrank: QuantizedLowRank = None
    dora_magnitude: np.ndarray = None  # float64 holding f16 values
    decoder: DecoderSpec = None
    embeddings: np.ndarray = None  # (n_patches, e0, e1, e2), f16 values
    embed_vq: bool = False
    patch_size: int = 0
    objective: float = 0.0


def _f16_bytes(values) -> bytes:
    return np.asarray(values, dtype=np.float64).astype("<f2").tobytes()


def _f16_read(buf, count, name):
    expected = 2 * count
    if len(buf) != expected:
        raise CorruptionError(f"section {name}: expected {expected} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<f2").astype(np.float64)


def _meta(qm: QuantizedMatrix) -> dict:
    meta = {
        "p": qm.p,
        "q": qm.q,
        "quantizer": qm.quantizer,
        "b": qm.b,
        "d": qm.d,
        "block_size": qm.block_size,
        "group_size": qm.group_size,
        "strip_rows": qm.strip_rows,
        "embed_vq": qm.embed_vq,
        "patch_size": qm.patch_size,
        "objective": qm.objective,
    }
    if qm.codes is not None:
        meta["n_codes"] = qm.codes.count
        meta["code_bits"] = qm.codes.bits_per_code
    if qm.codebook is not None:
        meta["cb_dim"] = qm.codebook.dim
        meta["cb_bits"] = qm.codebook.bits_per_dim
    if qm.tree is not None:
        meta["n_values"] = qm.tree.n_values
        meta["n_blocks"] = qm.tree.n_blocks
        meta["n_groups"] = qm.tree.n_groups
    if qm.perms:
        meta["n_strips"] = len(qm.perms)
    if qm.lowrank is not None and qm.lowrank.rank > 0:
        meta["rank"] = qm.lowrank.rank
    if qm.dora_magnitude is not None:
        meta["dora"] = True
    if qm.decoder is not None:
        meta["decoder"] = {
            "latent_shape": list(qm.decoder.latent_shape),
            "patch_size": qm.decoder.patch_size,
            "weight_bits": qm.decoder.weight_bits,
            "stages": [
                {"c_in": s.c_in, "c_out": s.c_out, "upsample": s.upsample}
                for s in qm.decoder.stages
            ],
        }
    if qm.embeddings is not None:
        meta["embed_shape"] = list(qm.embeddings.shape)
    return meta


def _sections(qm: QuantizedMatrix) -> dict:
    sections = {}
    if qm.codes is not None:
        sections["CODE"] = pack_codes(qm.codes).tobytes()
    if qm.codebook is not None:
        sections["CBOK"] = _f16_bytes(qm.codebook.centroids)
    if qm.tree is not None:
        sections["SCLT"] = qm.tree.scale_codes.astype(np.uint8).tobytes() + _f16_bytes(
            qm.tree.group_scales
        )
    if qm.perms:
        width = (qm.perms[0].q - 1).bit_length() if qm.perms[0].q > 1 else 1
        inv = np.concatenate([p.inverse for p in qm.perms]).astype(np.uint64)
        sections["PERM"] = kernels.pack_bits(inv, width).tobytes()
    if qm.lowrank is not None and qm.lowrank.rank > 0:
        lw = qm.lowrank
        sections["LWRK"] = (
            lw.codes1.astype(np.int8).tobytes()
            + lw.codes2.astype(np.int8).tobytes()
            + _f16_bytes(lw.scales1)
            + _f16_bytes(lw.scales2)
        )
    if qm.dora_magnitude is not None:
        sections["DORA"] = _f16_bytes(qm.dora_magnitude)
    if qm.decoder is not None:
        offset = 2 ** (qm.decoder.weight_bits - 1) - 1
        codes = np.concatenate(
            [
                np.concatenate([s.w_codes.ravel(), s.b_codes.ravel()])
                for s in qm.decoder.stages
            ]
        )
        packed = kernels.pack_bits(
            (codes + offset).astype(np.uint64), qm.decoder.weight_bits
        )
        scales = _f16_bytes([s.scale for s in qm.decoder.stages])
        sections["DECW"] = packed.tobytes() + scales
    if qm.embeddings is not None:
        sections["EMBD"] = _f16_bytes(qm.embeddings)
    return sections


def serialize(qm: QuantizedMatrix) -> bytes:
    header = json.dumps(_meta(qm), sort_keys=True, separators=(",", ":")).encode()
    sections = _sections(qm)
    tags = [t for t in _SECTION_ORDER if t in sections]
    payload = b""
    table = b""
    for tag in tags:
        data = sections[tag]
        table += struct.pack("<4sQQ", tag.encode(), len(payload), len(data))
        payload += data
    out = MAGIC + struct.pack("<HI", VERSION, len(header)) + header
    out += struct.pack("<H", len(tags)) + table + payload
    out += struct.pack("<I", zlib.crc32(payload))
    return out


def payload_sizes(data: bytes) -> dict:
    """Tag -> section byte length of a serialized container."""
    _, table, _ = _parse_frame(data)
    return {tag: length for tag, _, length in table}


def _parse_frame(data: bytes):
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError("not a container file (bad magic)")
    version, header_len = struct.unpack_from("<HI", data, 4)
    if version > VERSION:
        raise VersionError(f"container version {version} is newer than supported ({VERSION})")
    pos = 10
    if len(data) < pos + header_len + 2:
        raise CorruptionError("truncated header")
    try:
        meta = json.loads(data[pos : pos + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid header: {exc}") from exc
    pos += header_len
    (n_sections,) = struct.unpack_from("<H", data, pos)
    pos += 2
    table = []
    for _ in range(n_sections):
        if len(data) < pos + 20:
            raise CorruptionError("truncated section table")
        tag, offset, length = struct.unpack_from("<4sQQ", data, pos)
        table.append((tag.decode(), offset, length))
        pos += 20
    payload_end = len(data) - 4
    payload = data[pos:payload_end]
    if payload_end < pos:
        raise CorruptionError("truncated payload")
    (crc,) = struct.unpack_from("<I", data, payload_end)
    if zlib.crc32(payload) != crc:
        raise CorruptionError("payload checksum mismatch")
    for tag, offset, length in table:
        if offset + length > len(payload):
            raise CorruptionError(f"section {tag} extends past payload end")
    return meta, table, payload


def deserialize(data: bytes) -> QuantizedMatrix:
    meta, table, payload = _parse_frame(data)
    sections = {tag: payload[off : off + length] for tag, off, length in table}

    qm = QuantizedMatrix(
        p=meta["p"],
        q=meta["q"],
        quantizer=meta["quantizer"],
        b=meta["b"],
        d=meta["d"],
        block_size=meta["block_size"],
        group_size=meta["group_size"],
        strip_rows=meta["strip_rows"],
        embed_vq=meta.get("embed_vq", False),
        patch_size=meta.get("patch_size", 0),
        objective=meta.get("objective", 0.0),
    )

    if "CODE" in sections:
        n, bits = meta["n_codes"], meta["code_bits"]
        expected = -(-n * bits // 8)
        buf = np.frombuffer(sections["CODE"], dtype=np.uint8)
        if buf.size != expected:
            raise CorruptionError(f"section CODE: expected {expected} bytes, got {buf.size}")
        qm.codes = unpack_codes(buf, bits, n)
        if qm.codes.indices.size and qm.codes.indices.max() >= 2 ** bits:
            raise CorruptionError("section CODE: index out of range")
    if "CBOK" in sections:
        dim, bits = meta["cb_dim"], meta["cb_bits"]
        k = 2 ** (bits * dim)
        cent = _f16_read(sections["CBOK"], k * dim, "CBOK").reshape(k, dim)
        qm.codebook = Codebook(dim=dim, bits_per_dim=bits, centroids=cent)
    if "SCLT" in sections:
        n_blocks, n_groups = meta["n_blocks"], meta["n_groups"]
        buf = sections["SCLT"]
        if len(buf) != n_blocks + 2 * n_groups:
            raise CorruptionError(
                f"section SCLT: expected {n_blocks + 2 * n_groups} bytes, got {len(buf)}"
            )
        qm.tree = ScaleTree(
            block_size=meta["block_size"],
            group_size=meta["group_size"],
            scale_codes=np.frombuffer(buf[:n_blocks], dtype=np.uint8).copy(),
            group_scales=_f16_read(buf[n_blocks:], n_groups, "SCLT"),
            n_values=meta["n_values"],
        )
    if "PERM" in sections:
        n_strips = meta["n_strips"]
        q = qm.q
        width = (q - 1).bit_length() if q > 1 else 1
        expected = -(-n_strips * q * width // 8)
        buf = np.frombuffer(sections["PERM"], dtype=np.uint8)
        if buf.size != expected:
            raise CorruptionError(f"section PERM: expected {expected} bytes, got {buf.size}")
        inv = kernels.unpack_bits(buf, width, n_strips * q).astype(np.int64)
        qm.perms = []
        for i in range(n_strips):
            strip_inv = inv[i * q : (i + 1) * q]
            if not np.array_equal(np.sort(strip_inv), np.arange(q)):
                raise CorruptionError(f"section PERM: strip {i} is not a permutation")
            qm.perms.append(
                ColumnPermutation(forward=np.argsort(strip_inv), inverse=strip_inv)
            )
    if "LWRK" in sections:
        r = meta["rank"]
        p, q = qm.p, qm.q
        buf = sections["LWRK"]
        expected = (p + q) * r + 4 * r
        if len(buf) != expected:
            raise CorruptionError(f"section LWRK: expected {expected} bytes, got {len(buf)}")
        c1 = np.frombuffer(buf[: p * r], dtype=np.int8).reshape(p, r).copy()
        c2 = np.frombuffer(buf[p * r : (p + q) * r], dtype=np.int8).reshape(q, r).copy()
        s1 = _f16_read(buf[(p + q) * r : (p + q) * r + 2 * r], r, "LWRK")
        s2 = _f16_read(buf[(p + q) * r + 2 * r :], r, "LWRK")
        qm.lowrank = QuantizedLowRank(codes1=c1, codes2=c2, scales1=s1, scales2=s2)
    if "DORA" in sections:
        qm.dora_magnitude = _f16_read(sections["DORA"], qm.q, "DORA")
    if "DECW" in sections:
        dmeta = meta["decoder"]
        bits = dmeta["weight_bits"]
        offset = 2 ** (bits - 1) - 1
        stages = []
        sizes = []
        c_prev = dmeta["latent_shape"][2]
        for s in dmeta["stages"]:
            c_mid = s["c_out"] * s["upsample"] ** 2
            sizes.append((c_prev, c_mid))
            c_prev = s["c_out"]
        total = sum(ci * cm + cm for ci, cm in sizes)
        packed_len = -(-total * bits // 8)
        buf = sections["DECW"]
        expected = packed_len + 2 * len(sizes)
        if len(buf) != expected:
            raise CorruptionError(f"section DECW: expected {expected} bytes, got {len(buf)}")
        codes = kernels.unpack_bits(
            np.frombuffer(buf[:packed_len], dtype=np.uint8), bits, total
        ).astype(np.int64) - offset
        scales = _f16_read(buf[packed_len:], len(sizes), "DECW")
        pos = 0
        for (ci, cm), sdef, scale in zip(sizes, dmeta["stages"], scales):
            w_codes = codes[pos : pos + ci * cm].reshape(ci, cm).astype(np.int32)
            pos += ci * cm
            b_codes = codes[pos : pos + cm].astype(np.int32)
            pos += cm
            stage = DecoderStage(
                weight=w_codes.astype(np.float64) * scale,
                bias=b_codes.astype(np.float64) * scale,
                c_in=ci,
                c_out=sdef["c_out"],
                upsample=sdef["upsample"],
                w_codes=w_codes,
                b_codes=b_codes,
                scale=float(scale),
            )
            stages.append(stage)
        qm.decoder = DecoderSpec(
            stages=stages,
            latent_shape=tuple(dmeta["latent_shape"]),
            patch_size=dmeta["patch_size"],
            weight_bits=bits,
        )
    if "EMBD" in sections:
        shape = tuple(meta["embed_shape"])
        qm.embeddings = _f16_read(sections["EMBD"], int(np.prod(shape)), "EMBD").reshape(
            shape
        )
    return qm


def _flat_values(qm: QuantizedMatrix) -> np.ndarray:
    """Decode the quantized value stream (still normalized -> denormalize)."""
    if qm.quantizer == "sq":
        levels = nf_levels(qm.b).levels
        if qm.codes.indices.size and qm.codes.indices.max() >= len(levels):
            raise StructureError("scalar code index exceeds level table")
        normalized = levels[qm.codes.indices.astype(np.int64)]
    else:
        normalized = vq_decode(qm.codes, qm.codebook)
    return denormalize(normalized, qm.tree)


def dequantize_base(qm: QuantizedMatrix) -> np.ndarray:
    """Reconstruct the quantized part only (no low-rank, no DoRA)."""
    if qm.decoder is not None:
        from .decoder import decoder_forward_batch

        if qm.embed_vq:
            if qm.codes is None or qm.tree is None or qm.codebook is None:
                raise StructureError("VQ-embedding container is missing code sections")
            e0, e1, e2 = qm.decoder.latent_shape
            n_patches = qm.tree.n_values // (e0 * e1 * e2)
            latents = _flat_values(qm).reshape(n_patches, e0, e1, e2)
        else:
            if qm.embeddings is None:
                raise StructureError("decoder container is missing embeddings")
            latents = qm.embeddings
        s = qm.decoder.patch_size
        if qm.p % s or qm.q % s:
            raise StructureError(f"patch size {s} does not tile {(qm.p, qm.q)}")
        gr, gc = qm.p // s, qm.q // s
        if latents.shape[0] != gr * gc:
            raise StructureError(
                f"{latents.shape[0]} latents for a {gr} x {gc} patch grid"
            )
        patches = decoder_forward_batch(latents, qm.decoder, "qat")
        grid = PatchGrid(
            patch_size=s, patches=patches.reshape(gr, gc, s, s), grid_rows=gr, grid_cols=gc
        )
        return depatchify(grid)

    if qm.quantizer == "none":
        return np.zeros((qm.p, qm.q))

    if qm.codes is None or qm.tree is None:
        raise StructureError("quantized container is missing code/scale sections")
    if qm.quantizer == "vq" and qm.codebook is None:
        raise StructureError("VQ container is missing its codebook")
    if qm.tree.n_values != qm.p * qm.q:
        raise StructureError(
            f"scale tree covers {qm.tree.n_values} values, matrix has {qm.p * qm.q}"
        )
    base = _flat_values(qm).reshape(qm.p, qm.q)
    if qm.perms:
        base = unpermute_strips(base, qm.perms, qm.strip_rows)
    return base


def dequantize(qm: QuantizedMatrix) -> np.ndarray:
    """Full pipeline inverse: base + low-rank correction, then DoRA."""
    base = dequantize_base(qm)
    lr = qm.lowrank.pair() if qm.lowrank is not None else LowRankPair.empty(qm.p, qm.q)
    if qm.dora_magnitude is not None:
        return dora_forward(base, DoraState(magnitude=qm.dora_magnitude, lowrank=lr))
    return base + lr.product()


def qm_equal(a: QuantizedMatrix, b: QuantizedMatrix) -> bool:
    """Field-by-field bit-exact equality (round-trip checks)."""
    return serialize(a) == serialize(b)
