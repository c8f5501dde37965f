#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Write the synthetic separable corpus used by the end-to-end tests.

OFF tweets contain exactly one marker word; NOT tweets contain none. Every
tweet is already in cleaned form (lowercase words), and its parse is a
left-to-right chain whose last token is the root.
"""
import random
import sys
from pathlib import Path

NEUTRAL = """the a this that game today weather coffee team city music movie
book friend people time night morning school work phone road train park
dinner lunch song news show season match walk class week weekend family
story picture video post""".split()
FILLER = "is was looks seems feels really very so just quite and but with for".split()
MARKERS = "idiot stupid moron trash loser pathetic dumb clown".split()


def tweet(rng, offensive):
    n = rng.randint(5, 12)
    words = [rng.choice(NEUTRAL if k % 2 == 0 else FILLER) for k in range(n)]
    if offensive:
        words[rng.randrange(n)] = rng.choice(MARKERS)
    return words


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240601)
    rows, blocks = [], []
    for k in range(200):
        offensive = k % 2 == 1
        words = tweet(rng, offensive)
        tid = f"toy{k + 1:03d}"
        label = "OFF" if offensive else "NOT"
        sub_b = "TIN" if offensive else "NULL"
        sub_c = "IND" if offensive else "NULL"
        rows.append(f"{tid}\t{' '.join(words)}\t{label}\t{sub_b}\t{sub_c}")
        lines = [f"# sent_id = {tid}", f"# text = {' '.join(words)}"]
        for i, w in enumerate(words, start=1):
            head = 0 if i == len(words) else i + 1
            rel = "root" if head == 0 else "dep"
            lines.append(f"{i}\t{w}\t{w}\tX\tX\t_\t{head}\t{rel}\t_\t_")
        blocks.append("\n".join(lines))
    (out / "olid_toy.tsv").write_text(
        "id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c\n" + "\n".join(rows) + "\n")
    (out / "olid_toy.conllu").write_text("\n\n".join(blocks) + "\n\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/toy")
