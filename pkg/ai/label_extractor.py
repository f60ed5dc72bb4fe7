"""
Keyword recognition over generated text: map a completion onto one class name.
"""

import re
from typing import Sequence

from core.dataset_store import UNPARSED

LABEL_LINE = re.compile(r"label\s*:\s*(.*)", re.IGNORECASE)
PAYLOAD_STRIP = " \t\"'`*_.,;:!?()[]{}<>"


def _normalize(payload: str) -> str:
    return payload.strip().strip(PAYLOAD_STRIP).strip().casefold()


def extract_label(text: str, classes: Sequence[str]) -> str:
    """
    Three rules, first match wins:

    1. bottom-up, the first line containing ``label: <payload>`` whose trimmed payload
       equals a class name (case-insensitive)
    2. the class name whose last whole-token occurrence comes latest in the text
    3. UNPARSED
    """
    if not text:
        return UNPARSED
    by_key = {c.casefold(): c for c in classes}

    for line in reversed(text.splitlines()):
        match = LABEL_LINE.search(line)
        if match:
            key = _normalize(match.group(1))
            if key in by_key:
                return by_key[key]

    best_label, best_end = UNPARSED, -1
    # Longer names first so "walk fast" beats "walk" at the same end offset
    for name in sorted(classes, key=len, reverse=True):
        pattern = re.compile(rf"(?<!\w){re.escape(name)}(?!\w)", re.IGNORECASE)
        ends = [m.end() for m in pattern.finditer(text)]
        if ends and ends[-1] > best_end:
            best_label, best_end = name, ends[-1]
    return best_label
