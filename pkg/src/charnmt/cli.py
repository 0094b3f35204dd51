"""Command-line entry point covering the whole pipeline.

Subcommands: learn-bpe, build-vocab, train, translate, evaluate, align.
Every run is deterministic given the same inputs, seeds and flags; output
files are written to a temporary name and renamed into place so failures
never leave partial files behind.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .decode import alignment_blocks, format_alignment_block, translate_corpus
from .errors import CharnmtError, ConfigError, ConsistencyError
from .metrics import bleu, bleu_by_source_length, length_bleu_tsv
from .model import sequence_log_prob
from .textpipe import (
    EOS_ID,
    MergeTable,
    build_vocab,
    learn_bpe,
    load_parallel,
    segment_line,
)
from .trainer import load_trained_model, train


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _replace_into(path, write) -> None:
    """Run `write(tmp_path)` then atomically rename the result into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)


def cmd_learn_bpe(args) -> int:
    table = learn_bpe(_read_lines(args.input), args.merges)
    _replace_into(args.output, table.save)
    print(f"learned {len(table.rules)} merges -> {args.output}")
    return 0


def cmd_build_vocab(args) -> int:
    unit = "character" if args.unit == "char" else args.unit
    lines = _read_lines(args.input)
    if unit == "subword" and args.merges is not None:
        table = MergeTable.load(args.merges)
        lines = [" ".join(segment_line(l, "subword", table)) for l in lines]
    vocab = build_vocab(lines, unit, args.max_size)
    _replace_into(args.output, vocab.save)
    print(f"wrote {len(vocab)} symbols -> {args.output}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    cfg.apply_overrides(args.override)
    model_config, train_config, paths, resume = cfg.resolve()
    result = train(model_config, train_config, paths, resume=resume, echo=print)
    print(f"trained {result.steps} steps; latest checkpoint at {result.latest_dir}")
    if result.best_dir is not None:
        print(f"best dev NLL {result.best_dev_nll:.6f}; "
              f"best checkpoint at {result.best_dir}")
    return 0


def _load_ensemble(primary, extras):
    first = load_trained_model(primary)
    loaded = [first]
    for path in extras:
        member = load_trained_model(path)
        if member.src_vocab.symbols != first.src_vocab.symbols \
                or member.tgt_vocab.symbols != first.tgt_vocab.symbols:
            raise ConsistencyError(
                f"ensemble member {path} uses different vocabularies than {primary}"
            )
        if member.train_config.target_unit != first.train_config.target_unit:
            raise ConsistencyError(
                f"ensemble member {path} decodes a different target unit"
            )
        loaded.append(member)
    return first, [m.model for m in loaded]


def cmd_translate(args) -> int:
    first, models = _load_ensemble(args.model, args.ensemble)
    lines = _read_lines(args.input)
    result = translate_corpus(
        models, lines, first.src_vocab, first.tgt_vocab, first.merges,
        first.train_config.target_unit, width=args.beam, max_len=args.max_len,
        length_normalize=args.length_normalize,
    )
    _write_atomic(args.output, "".join(t + "\n" for t in result.texts))
    if args.dump_align is not None:
        _write_atomic(args.dump_align, alignment_blocks(result, first.tgt_vocab))
    print(f"translated {len(lines)} lines -> {args.output}")
    return 0


def _parse_buckets(spec: str) -> list[int]:
    try:
        edges = [int(part) for part in spec.split(",")]
    except ValueError:
        raise ConfigError(f"bucket spec {spec!r} is not comma-separated integers")
    if not edges or any(e <= 0 for e in edges) or edges != sorted(set(edges)):
        raise ConfigError(f"bucket edges {spec!r} must be positive and increasing")
    return edges


def cmd_evaluate(args) -> int:
    hyps = _read_lines(args.hyp)
    refs = _read_lines(args.ref)
    print(bleu(hyps, refs).summary_line())
    if (args.src is None) != (args.buckets is None):
        raise ConfigError("--src and --buckets must be given together")
    if args.src is not None:
        sources = _read_lines(args.src)
        rows = bleu_by_source_length(hyps, refs, sources, _parse_buckets(args.buckets))
        sys.stdout.write(length_bleu_tsv(rows))
    return 0


def cmd_align(args) -> int:
    tm = load_trained_model(args.model)
    pairs = load_parallel(args.src, args.tgt)
    unit = tm.train_config.target_unit
    eos_src = tm.src_vocab.symbols[EOS_ID]
    eos_tgt = tm.tgt_vocab.symbols[EOS_ID]
    blocks = []
    for source, target in pairs:
        src_syms = segment_line(source, "subword", tm.merges)
        tgt_syms = segment_line(target, unit, tm.merges)
        src_ids = np.array(tm.src_vocab.encode(src_syms) + [EOS_ID])
        tgt_ids = np.array(tm.tgt_vocab.encode(tgt_syms) + [EOS_ID])
        _, _, align = sequence_log_prob(tm.model, src_ids, tgt_ids)
        blocks.append(format_alignment_block(
            src_syms + [eos_src], tgt_syms + [eos_tgt], align))
    _write_atomic(args.output, "\n\n".join(blocks) + ("\n" if blocks else ""))
    print(f"aligned {len(pairs)} pairs -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="charnmt",
        description="subword-to-character neural machine translation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn-bpe", help="learn a merge table from raw text")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--merges", required=True, type=int)
    p.add_argument("--output", required=True, type=Path)
    p.set_defaults(func=cmd_learn_bpe)

    p = sub.add_parser("build-vocab", help="build a frequency-ranked vocabulary")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--unit", required=True, choices=("subword", "char"))
    p.add_argument("--max-size", required=True, type=int)
    p.add_argument("--merges", type=Path,
                   help="segment the input with this merge table before counting")
    p.add_argument("--output", required=True, type=Path)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("override", nargs="*", metavar="KEY=VALUE",
                   help="config overrides; the command line wins over the file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate raw text with beam search")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--ensemble", nargs="+", type=Path, default=[],
                   metavar="CKPT", help="additional checkpoints to average")
    p.add_argument("--dump-align", type=Path,
                   help="also write soft-alignment matrices to this file")
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--length-normalize", action="store_true",
                   help="rank finished hypotheses by per-token score")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True, type=Path)
    p.add_argument("--ref", required=True, type=Path)
    p.add_argument("--src", type=Path,
                   help="source file for by-length bucket scores")
    p.add_argument("--buckets", type=str,
                   help="comma-separated source-length edges, e.g. 10,20,30")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("align", help="teacher-forced alignments for parallel text")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--src", required=True, type=Path)
    p.add_argument("--tgt", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.set_defaults(func=cmd_align)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CharnmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
