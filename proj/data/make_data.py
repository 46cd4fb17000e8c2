#!/usr/bin/env python3
"""Regenerates the bundled toy corpus and sentiment set.

Both files are synthetic and deterministic (fixed seed), so the checked-in
copies can be rebuilt byte for byte.
"""
import pathlib
import random

HERE = pathlib.Path(__file__).resolve().parent

SUBJECTS = ["the cat", "the dog", "a bird", "the fox", "my friend", "the child"]
VERBS = ["sat on", "looked at", "ran to", "slept near", "walked past"]
OBJECTS = ["the mat", "the tree", "the house", "the river", "the old wall"]
TAILS = ["today.", "again.", "in the morning.", "after lunch.", "at night."]

POSITIVE = ["great", "wonderful", "lovely", "excellent", "delightful", "superb", "fun", "charming"]
NEGATIVE = ["terrible", "awful", "boring", "dreadful", "dull", "horrible", "bad", "painful"]
THINGS = ["movie", "book", "meal", "show", "trip", "game", "song", "play", "hotel", "class"]
GOOD_TAILS = ["we loved it.", "everyone smiled.", "we want more."]
BAD_TAILS = ["we hated it.", "everyone left.", "never again."]
FRAMES = [
    "the {thing} was {word}.",
    "what a {word} {thing}.",
    "i found the {thing} {word}.",
    "this {thing} is {word}, really.",
    "honestly a {word} {thing}.",
]


def corpus(rng, target_bytes=100_000):
    lines, size = [], 0
    while size < target_bytes:
        if rng.random() < 0.5:
            line = " ".join(
                [rng.choice(SUBJECTS), rng.choice(VERBS), rng.choice(OBJECTS), rng.choice(TAILS)])
        else:
            good = rng.random() < 0.5
            word = rng.choice(POSITIVE if good else NEGATIVE)
            tail = rng.choice(GOOD_TAILS if good else BAD_TAILS)
            line = f"the {rng.choice(THINGS)} was {word}, {tail}"
        lines.append(line)
        size += len(line) + 1
    return "\n".join(lines) + "\n"


def sentiment(rng, count=200):
    rows, seen = [], set()
    while len(rows) < count:
        label = "positive" if len(rows) % 2 == 0 else "negative"
        word = rng.choice(POSITIVE if label == "positive" else NEGATIVE)
        tail = rng.choice(GOOD_TAILS if label == "positive" else BAD_TAILS)
        text = rng.choice(FRAMES).format(thing=rng.choice(THINGS), word=word) + " " + tail
        if text in seen:
            continue
        seen.add(text)
        rows.append(f"{text}\t{label}")
    return "\n".join(rows) + "\n"


def main():
    rng = random.Random(20211)
    (HERE / "corpus.txt").write_text(corpus(rng))
    (HERE / "sentiment.tsv").write_text(sentiment(rng))


if __name__ == "__main__":
    main()
