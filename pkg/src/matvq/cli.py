"""Command-line interface.

Subcommands: gen, compress, decompress, eval, budget, train-decoder,
toy-finetune. Reports are deterministic for a fixed config and seed: a
human-readable block plus ``key=value`` records, printed to stdout and
optionally written to a report file.
"""

import argparse
import hashlib
import sys

import numpy as np

from . import budget as budget_mod
from . import container, generators, pipeline, toy
from .errors import MatvqError


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def _emit(lines, path=None):
    text = "\n".join(lines)
    print(text)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _config_records(cfg: pipeline.PipelineConfig):
    recs = []
    for key, value in sorted(vars(cfg).items()):
        recs.append(f"config.{key}={value}")
    return recs


def _add_pipeline_flags(p: argparse.ArgumentParser):
    p.add_argument("--quantizer", choices=["sq", "vq"], default="sq")
    p.add_argument("-b", "--bits", type=int, default=3, help="bits per coordinate")
    p.add_argument("-d", "--dim", type=int, default=2, help="VQ bucket dimension")
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--group-size", type=int, default=256)
    p.add_argument("--strip-rows", type=int, default=128)
    p.add_argument("--permute", action="store_true")
    p.add_argument("-r", "--rank", type=int, default=0)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument(
        "--order", choices=["residual_first", "svd_first"], default="residual_first"
    )
    p.add_argument("--dora", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoder", action="store_true", help="use the learned decoder path")
    p.add_argument("--latent", type=_ints, default=(8, 8, 4), metavar="E0,E1,E2")
    p.add_argument("--channels", type=_ints, default=(16, 8, 1))
    p.add_argument("--upsample", type=_ints, default=(2, 2, 2))
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--b-phi", type=int, default=6)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--peak-lr", type=float, default=1e-3)
    p.add_argument("--decoder-mode", choices=["qat", "ptq"], default="qat")
    p.add_argument("--embed-vq", action="store_true")


def _cfg_from_args(args) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig(
        quantizer=args.quantizer,
        b=args.bits,
        d=args.dim,
        block_size=args.block_size,
        group_size=args.group_size,
        strip_rows=args.strip_rows,
        permute=args.permute,
        rank=args.rank,
        iters=args.iters,
        order=args.order,
        dora=args.dora,
        seed=args.seed,
        use_decoder=args.decoder,
        latent_shape=args.latent,
        channels=args.channels,
        upsample=args.upsample,
        patch_size=args.patch_size,
        b_phi=args.b_phi,
        epochs=args.epochs,
        peak_lr=args.peak_lr,
        decoder_mode=args.decoder_mode,
        embed_vq=args.embed_vq,
    )


def cmd_gen(args):
    if args.kind == "gaussian":
        w = generators.gen_gaussian(args.rows, args.cols, seed=args.seed)
    elif args.kind == "planted":
        w = generators.gen_planted(
            args.rows,
            args.cols,
            n_prototypes=args.prototypes,
            noise=args.noise,
            scale_spread=args.scale_spread,
            seed=args.seed,
        )
    else:
        w = generators.gen_outliers(
            args.rows,
            args.cols,
            count=args.outlier_count,
            amplitude=args.amplitude,
            seed=args.seed,
        )
    generators.write_matrix(args.output, w, dtype=args.dtype)
    _emit(
        [
            f"gen.kind={args.kind}",
            f"gen.shape={args.rows}x{args.cols}",
            f"gen.seed={args.seed}",
            f"gen.column_correlation={generators.column_correlation_stat(w):.6f}",
            f"gen.output={args.output}",
        ]
    )
    return 0


def cmd_compress(args):
    w = generators.read_matrix(args.input)
    cfg = _cfg_from_args(args)
    res = pipeline.compress(w, cfg)
    data = container.serialize(res.qm)
    with open(args.output, "wb") as fh:
        fh.write(data)
    lines = _config_records(cfg)
    lines.append(f"compress.objective={res.objective:.12g}")
    for i, obj in enumerate(res.objective_history):
        lines.append(f"compress.objective_iter{i}={obj:.12g}")
    lines.append(f"compress.container_bytes={len(data)}")
    lines.extend(res.budget.records())
    lines.append("")
    lines.append(res.budget.format_text())
    _emit(lines, args.report)
    return 0


def cmd_decompress(args):
    with open(args.input, "rb") as fh:
        qm = container.deserialize(fh.read())
    w = container.dequantize(qm)
    generators.write_matrix(args.output, w, dtype=args.dtype)
    _emit(
        [
            f"decompress.shape={qm.p}x{qm.q}",
            f"decompress.recorded_objective={qm.objective:.12g}",
            f"decompress.output={args.output}",
        ]
    )
    return 0


def cmd_eval(args):
    w = generators.read_matrix(args.input)
    cfg = _cfg_from_args(args)
    cells = pipeline.ablation(w, cfg)
    lines = _config_records(cfg)
    lines.append("")
    lines.append(f"{'cell':<10} {'error':>14} {'bits/coord':>12} {'perm overhead':>14}")
    for name in pipeline.ABLATION_CELLS:
        cell = cells[name]
        lines.append(
            f"{name:<10} {cell['error']:>14.6f} "
            f"{cell['quant_bits_per_coord']:>12.4f} "
            f"{cell['perm_overhead_bits_per_coord']:>14.4f}"
        )
    lines.append("")
    for name in pipeline.ABLATION_CELLS:
        cell = cells[name]
        lines.append(f"eval.{name}.error={cell['error']:.12g}")
        lines.append(f"eval.{name}.bits_per_coord={cell['quant_bits_per_coord']:.6f}")
    _emit(lines, args.report)
    if args.plot_data:
        rows = ["cell\terror\tbits_per_coord\tperm_overhead"]
        for name in pipeline.ABLATION_CELLS:
            cell = cells[name]
            rows.append(
                f"{name}\t{cell['error']:.12g}\t"
                f"{cell['quant_bits_per_coord']:.6f}\t"
                f"{cell['perm_overhead_bits_per_coord']:.6f}"
            )
        with open(args.plot_data, "w") as fh:
            fh.write("\n".join(rows) + "\n")
    return 0


def cmd_budget(args):
    if args.format == "lora":
        bits = budget_mod.budget_lora(args.rows, args.cols, args.rank, args.matrices)
        per = bits / (args.rows * args.cols * args.matrices)
        _emit([f"budget.total_bits={bits}", f"budget.bits_per_coord={per:.4f}"], args.report)
        return 0
    if args.format == "vq-only":
        bits = budget_mod.budget_vq_only(
            args.rows, args.cols, args.bits, args.dim, args.matrices
        )
        per = bits / (args.rows * args.cols * args.matrices)
        _emit([f"budget.total_bits={bits}", f"budget.bits_per_coord={per:.4f}"], args.report)
        return 0
    embed_bits = None if args.embed_bits == "vq" else int(args.embed_bits)
    report = budget_mod.budget_hybrid(
        args.rows,
        args.cols,
        args.matrices,
        c=args.decoder_params,
        b_phi=args.b_phi,
        r=args.rank,
        e_shape=args.latent,
        n_patches=args.patches,
        b=args.bits,
        d=args.dim,
        embed_bits=embed_bits,
        scale_values=args.scale_values,
        scale_block=args.block_size,
        scale_group=args.group_size,
        n_perm_strips=args.perm_strips,
        perm_q=args.cols,
        dora=args.dora,
        n_decoder_stages=args.decoder_stages,
    )
    _emit([report.format_text(), ""] + report.records(), args.report)
    return 0


def cmd_train_decoder(args):
    w = generators.read_matrix(args.input)
    cfg = _cfg_from_args(args)
    cfg.use_decoder = True
    cfg.permute = False
    res = pipeline.compress(w, cfg)
    data = container.serialize(res.qm)
    with open(args.output, "wb") as fh:
        fh.write(data)
    lines = _config_records(cfg)
    lines.append(f"train_decoder.objective={res.objective:.12g}")
    lines.append(f"train_decoder.param_count={res.qm.decoder.param_count}")
    lines.extend(res.budget.records())
    _emit(lines, args.report)
    return 0


def _section_hashes(qm):
    data = container._sections(qm)
    return {
        tag: hashlib.sha256(blob).hexdigest()[:16]
        for tag, blob in data.items()
        if tag in ("CODE", "CBOK", "PERM", "DECW", "SCLT")
    }


def cmd_toy_finetune(args):
    blocks = toy.make_toy_chain(args.dims, n_samples=args.samples, seed=args.seed)
    cfg = _cfg_from_args(args)
    lines = _config_records(cfg)
    lines.append(f"toy.dims={','.join(map(str, args.dims))}")

    qms = []
    adapters = []
    for j, block in enumerate(blocks):
        res = pipeline.compress(block.weight, cfg)
        qms.append(res.qm)
        adapters.append(toy.adapters_from_container(res.qm))
    frozen_before = [_section_hashes(qm) for qm in qms]

    for j, (block, a) in enumerate(zip(blocks, adapters)):
        losses = toy.finetune_block(block, a, steps=args.block_steps, lr=args.lr_block)
        lines.append(f"toy.block{j}.initial_loss={losses[0]:.12g}")
        lines.append(f"toy.block{j}.final_loss={losses[-1]:.12g}")

    if args.e2e_steps > 0:
        losses = toy.finetune_chain(blocks, adapters, steps=args.e2e_steps, lr=args.lr_e2e)
        lines.append(f"toy.chain.initial_loss={losses[0]:.12g}")
        lines.append(f"toy.chain.final_loss={losses[-1]:.12g}")

    for qm, a in zip(qms, adapters):
        toy.store_adapters(qm, a)
    frozen_after = [_section_hashes(qm) for qm in qms]
    lines.append(f"toy.frozen_sections_unchanged={frozen_before == frozen_after}")

    if args.outdir:
        import os

        os.makedirs(args.outdir, exist_ok=True)
        for j, qm in enumerate(qms):
            with open(os.path.join(args.outdir, f"block{j}.rlqm"), "wb") as fh:
                fh.write(container.serialize(qm))
        lines.append(f"toy.outdir={args.outdir}")
    _emit(lines, args.report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matvq", description="matrix compression toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic matrix file")
    g.add_argument("output")
    g.add_argument("--kind", choices=["gaussian", "planted", "outliers"], default="gaussian")
    g.add_argument("--rows", type=int, default=512)
    g.add_argument("--cols", type=int, default=512)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--prototypes", type=int, default=8)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--scale-spread", type=float, default=4.0)
    g.add_argument("--outlier-count", type=int, default=100)
    g.add_argument("--amplitude", type=float, default=10.0)
    g.add_argument("--dtype", choices=["<f4", "<f8"], default="<f8")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("compress", help="compress a matrix file to a container")
    c.add_argument("input")
    c.add_argument("output")
    _add_pipeline_flags(c)
    c.add_argument("--report")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="dequantize a container to a matrix file")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--dtype", choices=["<f4", "<f8"], default="<f8")
    d.set_defaults(func=cmd_decompress)

    e = sub.add_parser("eval", help="SQ/VQ x perm ablation table")
    e.add_argument("input")
    _add_pipeline_flags(e)
    e.add_argument("--report")
    e.add_argument("--plot-data")
    e.set_defaults(func=cmd_eval)

    bu = sub.add_parser("budget", help="bit-budget report for a format")
    bu.add_argument("--format", choices=["lora", "vq-only", "hybrid"], default="hybrid")
    bu.add_argument("--rows", type=int, required=True)
    bu.add_argument("--cols", type=int, required=True)
    bu.add_argument("--matrices", type=int, default=1)
    bu.add_argument("--rank", type=int, default=0)
    bu.add_argument("--bits", type=int, default=3)
    bu.add_argument("--dim", type=int, default=2)
    bu.add_argument("--decoder-params", type=int, default=0)
    bu.add_argument("--b-phi", type=int, default=6)
    bu.add_argument("--latent", type=_ints, default=(0, 0, 0))
    bu.add_argument("--patches", type=int, default=1)
    bu.add_argument("--embed-bits", default="16", help="bits per latent value, or 'vq'")
    bu.add_argument("--scale-values", type=int, default=0)
    bu.add_argument("--block-size", type=int, default=64)
    bu.add_argument("--group-size", type=int, default=256)
    bu.add_argument("--perm-strips", type=int, default=0)
    bu.add_argument("--dora", action="store_true")
    bu.add_argument("--decoder-stages", type=int, default=0)
    bu.add_argument("--report")
    bu.set_defaults(func=cmd_budget)

    t = sub.add_parser("train-decoder", help="fit the decoder path on a matrix")
    t.add_argument("input")
    t.add_argument("output")
    _add_pipeline_flags(t)
    t.add_argument("--report")
    t.set_defaults(func=cmd_train_decoder)

    tf = sub.add_parser("toy-finetune", help="block-wise + end-to-end toy fine-tuning")
    tf.add_argument("--dims", type=_ints, default=(24, 16, 12))
    tf.add_argument("--samples", type=int, default=32)
    tf.add_argument("--block-steps", "-K", type=int, default=50)
    tf.add_argument("--e2e-steps", "-T", type=int, default=20)
    tf.add_argument("--lr-block", type=float, default=1e-4)
    tf.add_argument("--lr-e2e", type=float, default=1e-5)
    tf.add_argument("--outdir")
    _add_pipeline_flags(tf)
    tf.add_argument("--report")
    tf.set_defaults(func=cmd_toy_finetune)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MatvqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
