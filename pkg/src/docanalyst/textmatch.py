"""Deterministic support checks used by the rule judge and verification probes.

Numbers compare by the judging convention: integer digits plus the first
decimal place (a missing decimal counts as .0). Entities are ALL-CAPS tokens
(tickers, firm names). A fact is supported by a text when every entity token
and every number in the fact appears there.
"""

from __future__ import annotations

import re

NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")
CAPS_RE = re.compile(r"\b[A-Z][A-Z0-9]{1,9}\b")


def extract_numbers(text: str) -> list[str]:
    return NUMBER_RE.findall(text)


def numeric_key(num: str) -> tuple[int, int]:
    """(integer digits, first decimal place); "106.47" -> (106, 4)."""
    whole, _, frac = num.partition(".")
    return int(whole), int(frac[0]) if frac else 0


def numbers_match(a: str, b: str) -> bool:
    return numeric_key(a) == numeric_key(b)


def caps_tokens(text: str) -> set[str]:
    return set(CAPS_RE.findall(text))


def supports(info: str, fact: str) -> bool:
    """True iff the info text covers all key tokens of the fact."""
    if not caps_tokens(fact) <= caps_tokens(info):
        return False
    info_numbers = extract_numbers(info)
    return all(
        any(numbers_match(gold, found) for found in info_numbers)
        for gold in extract_numbers(fact)
    )


def value_supported(text: str, value: str) -> bool:
    """One gold value present in the text: numeric rule for numbers, substring otherwise."""
    value = value.strip()
    if NUMBER_RE.fullmatch(value):
        return any(numbers_match(value, found) for found in extract_numbers(text))
    return value in text
