"""Shared tokenizer used by the featurizers, the ESA index and the relation encoder."""

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens in order of appearance."""
    return _TOKEN_RE.findall(text.lower())
