#!/usr/bin/env python3
"""Write the synthetic corpora to disk as parallel text files.

Produces the eight-pair copy task and a transliteration task (ciphered
characters, reversed word order) with a held-out tail for evaluation.
"""

import argparse
from pathlib import Path

from charnmt.synth import copy_corpus, split_pairs, transliteration_corpus


def write_pairs(pairs, src_path: Path, tgt_path: Path) -> None:
    src_path.write_text("".join(s + "\n" for s, _ in pairs), encoding="utf-8")
    tgt_path.write_text("".join(t + "\n" for _, t in pairs), encoding="utf-8")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--pairs", type=int, default=5000)
    ap.add_argument("--held-out", type=int, default=500)
    ap.add_argument("--seed", type=int, default=13)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    copy_dir = args.out / "copy"
    copy_dir.mkdir(exist_ok=True)
    write_pairs(copy_corpus(), copy_dir / "full.src", copy_dir / "full.tgt")

    translit_dir = args.out / "translit"
    translit_dir.mkdir(exist_ok=True)
    pairs = transliteration_corpus(args.pairs, seed=args.seed)
    train, dev = split_pairs(pairs, args.held_out)
    write_pairs(train, translit_dir / "train.src", translit_dir / "train.tgt")
    write_pairs(dev, translit_dir / "dev.src", translit_dir / "dev.tgt")
    print(f"copy: {len(copy_corpus())} pairs -> {copy_dir}")
    print(f"transliteration: {len(train)} train / {len(dev)} dev -> {translit_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
