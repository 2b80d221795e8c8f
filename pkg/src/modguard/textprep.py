"""Rule-based cleaning of raw social-media text before embedding.

The pipeline applies a fixed rule order: strip HTML entities, remove URLs,
remove @-mentions, remove retweet markers, remove timestamp tokens, strip
hashtag signs (keeping the word), collapse whitespace. Deleting matches can
splice the surrounding characters into a new match for an earlier rule, so
the whole pipeline reruns until the text stops changing; every rule only
deletes or normalizes, which makes that loop terminate and the function
idempotent.
"""

import re

_HTML_ENTITY = re.compile(r"&[A-Za-z][A-Za-z0-9]*;|&#[0-9]+;|&#[xX][0-9a-fA-F]+;")
_URL = re.compile(r"https?://\S*|\bwww\.\S+|\bt\.co/\S+", re.IGNORECASE)
_MENTION = re.compile(r"@\w+")
# After @word mentions are gone, drop any '@' run still opening a token.
_STRAY_AT = re.compile(r"(?<!\S)@+")
_RT_MARKER = re.compile(r"\bRT\b\s*:?")
_TIMESTAMP = re.compile(r"\b\d{1,2}:\d{2}(:\d{2})?\b")
_HASHTAG_SIGN = re.compile(r"#+(?=\w)")
_WHITESPACE_RUN = re.compile(r"\s+")


def _pass(text: str) -> str:
    text = _HTML_ENTITY.sub("", text)
    text = _URL.sub("", text)
    text = _MENTION.sub("", text)
    text = _STRAY_AT.sub("", text)
    text = _RT_MARKER.sub("", text)
    text = _TIMESTAMP.sub("", text)
    text = _HASHTAG_SIGN.sub("", text)
    return _WHITESPACE_RUN.sub(" ", text).strip()


def clean_text(raw: str) -> str:
    """Clean one raw text. Total: degenerate input yields the empty string."""
    current = raw
    while True:
        cleaned = _pass(current)
        if cleaned == current:
            return cleaned
        current = cleaned
