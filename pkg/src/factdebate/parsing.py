"""Structured-output parsing for judge verdicts and domain inference."""

from __future__ import annotations

import re

from factdebate.core import Label, UnparseableLabel, Verdict, parse_label


class UnparseableDomain(ValueError):
    """Domain-inference output carried no DOMAIN: line."""


# Tolerate markdown emphasis around the tags and missing brackets; the label
# grammar itself stays closed (handled by parse_label).
_REASON_RE = re.compile(r"[*_]*\[?\s*REASON\s*\]?[*_]*\s*:\s*[*_]*\s*", re.IGNORECASE)
_VERDICT_RE = re.compile(r"[*_]*\[?\s*VERDICT\s*\]?[*_]*\s*:\s*[*_]*\s*", re.IGNORECASE)
_DOMAIN_RE = re.compile(r"^.*?DOMAIN\s*:\s*(?P<domain>.+)$", re.IGNORECASE | re.MULTILINE)


def parse_verdict(text: str) -> Verdict:
    """Extract "[REASON]: ... [VERDICT]: <label>" from judge output.

    The reason is the text between the tags (empty when no reason tag is
    present); the label is parsed from the first non-empty line after the
    last verdict tag. Raises UnparseableLabel when no verdict can be read.
    """
    verdict_matches = list(_VERDICT_RE.finditer(text))
    if not verdict_matches:
        raise UnparseableLabel(f"no verdict tag in {text[:120]!r}")
    verdict_match = verdict_matches[-1]
    remainder = text[verdict_match.end() :]
    label_line = next((line for line in remainder.splitlines() if line.strip()), remainder)
    label = parse_label(label_line)
    reason = ""
    reason_match = _REASON_RE.search(text)
    if reason_match and reason_match.end() <= verdict_match.start():
        reason = text[reason_match.end() : verdict_match.start()].strip()
        # Drop a dangling markdown emphasis opener left before the verdict tag.
        reason = reason.rstrip("*_ \t\n")
    return Verdict(reason=reason, label=label, raw_text=text)


def parse_domain(text: str) -> str:
    """Domain name from a "DOMAIN: <domain>" line, lowercased.

    Takes the first matching line and keeps the whole remainder of the line
    so multi-word domains ("public health") survive.
    """
    match = _DOMAIN_RE.search(text)
    if not match:
        raise UnparseableDomain(f"no DOMAIN line in {text[:120]!r}")
    domain = match.group("domain").strip().strip("*_`\"'.,;: ").lower()
    if not domain:
        raise UnparseableDomain(f"empty domain in {text[:120]!r}")
    return domain


def label_fallback_probs(label: Label, probe_tokens: tuple[str, str, str], epsilon: float = 1e-6) -> dict[str, float]:
    """Degenerate label-probe distribution for backends without logprobs.

    probe_tokens is ordered (TRUE, HALF-TRUE, FALSE); the parsed label's
    token receives 1 - epsilon and the others share epsilon, mirroring the
    decision-token fallback so margin math is unchanged in form.
    """
    from factdebate.core import LABEL_ORDER

    index = LABEL_ORDER.index(label)
    share = epsilon / 2
    return {
        token: (1.0 - epsilon if position == index else share)
        for position, token in enumerate(probe_tokens)
    }
