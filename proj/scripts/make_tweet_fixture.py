#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Write a 1,000-line file of synthetic noisy tweets for preprocessing tests.

Lines mix usernames, URLs, hashtags (including concatenated compounds),
emoticons and emoji, elongated words, punctuation runs and mixed case.
"""
import random
import sys
from pathlib import Path

WORDS = """i you we they this that is was not so very really just what when why
how love hate great bad good best worst people team game today tonight right
now never always vote news media fake true free country world police school
thanks please lol omg wow yes no stop go win lose happy sad angry funny""".split()
HANDLES = ["@india", "@USER", "@john_doe", "@a1", "@News24", "@x"]
URLS = ["https://t.co/xyz", "http://example.com/a?b=c", "www.example.com",
        "HTTPS://Bit.ly/3kQ", "https://t.co/AbC123."]
HASHTAGS = ["#banislam", "#putuporshutup", "#MAGA", "#loveit", "#gameday",
            "#BlackLivesMatter", "#fakenews", "#tbt", "#2020", "#happybirthday"]
EMOJI = [":)", ":(", ":D", ";)", ":P", "<3", "\U0001F602", "❤️",
         "\U0001F621", "\U0001F44D", "\U0001F525", "\U0001F64F", ":-)", "XD"]
COMPOUNDS = ["putuporshutup", "makeamericagreatagain", "loveit", "notmypresident",
             "gohome", "whatever"]


def elongate(rng, w):
    k = rng.randrange(len(w))
    return w[:k] + w[k] * rng.randint(3, 7) + w[k + 1:]


def piece(rng):
    r = rng.random()
    if r < 0.10:
        return rng.choice(HANDLES)
    if r < 0.17:
        return rng.choice(URLS)
    if r < 0.27:
        return rng.choice(HASHTAGS)
    if r < 0.37:
        return rng.choice(EMOJI)
    if r < 0.42:
        return rng.choice(COMPOUNDS)
    w = rng.choice(WORDS)
    if rng.random() < 0.15:
        w = elongate(rng, w)
    if rng.random() < 0.2:
        w = w.upper() if rng.random() < 0.5 else w.capitalize()
    if rng.random() < 0.1:
        w += rng.choice(["!!!!", "??", "...", "!!!???", ","])
    return w


def main(path):
    rng = random.Random(424242)
    lines = []
    for _ in range(1000):
        n = rng.randint(3, 16)
        lines.append(" ".join(piece(rng) for _ in range(n)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/tweets_1k.txt")
