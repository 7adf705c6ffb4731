"""Toy data pipeline used as an extraction fixture."""

import json
from collections import Counter


def load_rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def make_counter(field):
    def count(rows):
        counter = Counter()
        for row in rows:
            value = row.get(field)
            if value is not None:
                counter[value] += 1
        return counter

    return count


class Pipeline:
    def __init__(self, steps):
        self.steps = list(steps)

    def run(self, rows):
        for step in self.steps:
            rows = step(rows)
        return rows

    async def run_async(self, rows):
        return self.run(rows)


TOP_LEVEL_CONSTANT = {"braces": "{}", "def": "def"}
