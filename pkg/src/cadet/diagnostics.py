"""Process-wide counters for numeric safety rails (clamps, fallbacks)."""

from collections import Counter

counters: Counter = Counter()


def bump(name: str, amount: int = 1):
    if amount:
        counters[name] += int(amount)


def reset():
    counters.clear()
