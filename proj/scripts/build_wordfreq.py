#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerate data/wordfreq.tsv from the `wordsegment` unigram counts.

Usage: pip download wordsegment --no-deps, unzip the wheel, then
    build_wordfreq.py path/to/wordsegment/unigrams.txt > data/wordfreq.tsv
"""
import sys

TOP_N = 30000

# One- and two-letter entries are restricted to real words; the raw
# unigram list is full of initials and abbreviations that make the
# segmenter shred unknown tokens into letter soup.
SHORT_WORDS = """a i ad ah am an as at aw be by do eh go ha he hi hm if in is it
me my no of oh ok on or ox so to uh um up us we ya ye yo""".split()

# Frequent Twitter tokens that should never be segmented.
TWITTER_SUPPLEMENT = """antifa banislam covfefe dm idk lmao lmfao lol maga omg potus
rt smh tbh wtf ya""".split()
SUPPLEMENT_COUNT = 1000000


def main(path):
    counts = {}
    with open(path, encoding="utf-8") as fh:
        for rank, line in enumerate(fh):
            word, count = line.rstrip("\n").split("\t")
            if not word.isalpha() or not word.isascii():
                continue
            if len(word) <= 2:
                if word in SHORT_WORDS:
                    counts[word] = int(count)
                continue
            if rank < TOP_N:
                counts[word] = int(count)
    for word in TWITTER_SUPPLEMENT:
        counts.setdefault(word, SUPPLEMENT_COUNT)
    out = sys.stdout
    out.write("# word\tcount\n")
    for word, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        out.write(f"{word}\t{count}\n")


if __name__ == "__main__":
    main(sys.argv[1])
