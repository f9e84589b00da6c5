"""Single boundary for model access.

Every other module reaches a language model through this one: scripted
response tables for offline runs and tests, OpenAI-style HTTP chat providers
for live runs, a disk-backed response cache, bounded retries with exponential
backoff, and token accounting. Probe-token probabilities come from provider
log-probabilities when available, otherwise from a text-parsing fallback that
yields a degenerate distribution.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping

import httpx

from factdebate.core import TokenUsage, canonical_json

logger = logging.getLogger(__name__)

# Degenerate-distribution mass left for unchosen tokens by fallback_probe.
FALLBACK_EPSILON = 1e-6

# Log-probability assigned to a probe token the provider never surfaced.
_MISSING_LOGPROB = -50.0


class GatewayError(Exception):
    """Base for all gateway failures."""


class TransportError(GatewayError):
    """Transient transport failure that persisted through all retries."""


class ProviderRefusal(GatewayError):
    """Non-retryable provider response (bad request, auth, malformed body)."""


class ScriptMiss(GatewayError):
    """Scripted backend has no entry for this request."""


class EmptyProbeSet(GatewayError):
    """softmax_over was handed an empty logit map."""


class UnparseableDecision(GatewayError):
    """No probe token could be parsed out of the generated text."""


class BackendKind(str, Enum):
    HTTP_PROVIDER = "http"
    SCRIPTED = "scripted"
    # Local deterministic feature-hash embedder; embeddings only.
    HASH = "hash"


@dataclass(frozen=True)
class BackendSpec:
    kind: BackendKind
    model_name: str = ""
    endpoint: str = ""
    credential_env: str = "FACTDEBATE_API_KEY"
    script_path: str = ""

    def __post_init__(self) -> None:
        if self.kind is BackendKind.HTTP_PROVIDER and not self.endpoint:
            raise ValueError("HTTP backend requires an endpoint URL")
        if self.kind is BackendKind.SCRIPTED and not self.script_path:
            raise ValueError("scripted backend requires a script path")

    @property
    def provider_id(self) -> str:
        return f"{self.kind.value}:{self.model_name}"


@dataclass(frozen=True)
class GenerationRequest:
    system_prompt: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_completion_tokens: int = 512
    probe_tokens: tuple[str, ...] | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.probe_tokens is not None:
            probes = tuple(self.probe_tokens)
            if not probes or len(set(probes)) != len(probes):
                raise ValueError("probe_tokens must be non-empty and distinct")
            object.__setattr__(self, "probe_tokens", probes)


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_usage: TokenUsage
    probe_probs: dict[str, float] | None
    provider_id: str
    cached: bool = False


def softmax_over(logits: Mapping[str, float]) -> dict[str, float]:
    """Softmax-normalize a token -> logit map.

    Shift-invariant and numerically safe; output sums to 1 within 1e-9.
    """
    if not logits:
        raise EmptyProbeSet("no logits to normalize")
    for token, value in logits.items():
        if not math.isfinite(value):
            raise ValueError(f"non-finite logit for {token!r}: {value}")
    peak = max(logits.values())
    exps = {token: math.exp(value - peak) for token, value in logits.items()}
    denom = sum(exps.values())
    return {token: value / denom for token, value in exps.items()}


def fallback_probe(result_text: str, probe_tokens: list[str] | tuple[str, ...]) -> dict[str, float]:
    """Derive a degenerate probe distribution from generated text.

    Used when the backend exposes no token probabilities: the decision token
    is parsed from the text (preferring the one following a "DECISION:" tag)
    and gets mass 1 - epsilon; the remaining tokens share epsilon. Downstream
    margin math is unchanged in form.
    """
    probes = tuple(probe_tokens)
    if not probes:
        raise EmptyProbeSet("no probe tokens")
    haystack = result_text.upper()
    start = 0
    anchor = re.search(r"DECISION\s*:", haystack)
    if anchor:
        start = anchor.end()
    best: tuple[int, str] | None = None
    for token in probes:
        match = re.search(rf"\b{re.escape(token.upper())}\b", haystack[start:])
        if match and (best is None or match.start() < best[0]):
            best = (match.start(), token)
    if best is None and anchor:
        # Nothing after the tag; scan the whole text.
        for token in probes:
            match = re.search(rf"\b{re.escape(token.upper())}\b", haystack)
            if match and (best is None or match.start() < best[0]):
                best = (match.start(), token)
    if best is None:
        raise UnparseableDecision(f"no probe token in {result_text!r}")
    chosen = best[1]
    if len(probes) == 1:
        return {chosen: 1.0}
    share = FALLBACK_EPSILON / (len(probes) - 1)
    return {token: 1.0 - FALLBACK_EPSILON if token == chosen else share for token in probes}


def request_fingerprint(request: GenerationRequest, model_name: str) -> str:
    """Stable key for caching and scripted lookup."""
    payload = {
        "model": model_name,
        "system": request.system_prompt,
        "messages": [list(m) for m in request.messages],
        "temperature": request.temperature,
        "max_completion_tokens": request.max_completion_tokens,
        "probe_tokens": list(request.probe_tokens) if request.probe_tokens else None,
        "seed": request.seed,
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _estimate_tokens(text: str) -> int:
    return len(text.split())


def _request_text(request: GenerationRequest) -> str:
    return "\n".join([request.system_prompt, *(text for _, text in request.messages)])


class ResponseCache:
    """Disk cache of generations, stored as append-only JSONL records.

    Safe for concurrent readers; writes are serialized by a lock.
    """

    FILENAME = "generations.jsonl"

    def __init__(self, directory: str | Path) -> None:
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._path = self._dir / self.FILENAME
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, Any]] = {}
        if self._path.exists():
            with self._path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._entries[record["key"]] = record

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> dict[str, Any] | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, record: dict[str, Any]) -> None:
        row = {"key": key, **record}
        with self._lock:
            self._entries[key] = row
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(canonical_json(row) + "\n")


class _ScriptedTable:
    """Response table for a scripted backend.

    Entries are matched by exact request fingerprint first, then by ordered
    substring match ("match" may be a string or a list that must all occur in
    the concatenated system + message text). First matching entry wins.
    """

    def __init__(self, path: str | Path) -> None:
        self.by_fingerprint: dict[str, dict[str, Any]] = {}
        self.matchers: list[tuple[tuple[str, ...], dict[str, Any]]] = []
        with Path(path).open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, 1):
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if "text" not in entry:
                    raise ValueError(f"scripted entry without text at line {lineno}")
                if "fingerprint" in entry:
                    self.by_fingerprint[entry["fingerprint"]] = entry
                elif "match" in entry:
                    needles = entry["match"]
                    if isinstance(needles, str):
                        needles = [needles]
                    self.matchers.append((tuple(needles), entry))
                else:
                    raise ValueError(f"scripted entry needs fingerprint or match at line {lineno}")

    def lookup(self, fingerprint: str, request_text: str) -> dict[str, Any] | None:
        entry = self.by_fingerprint.get(fingerprint)
        if entry is not None:
            return entry
        for needles, candidate in self.matchers:
            if all(needle in request_text for needle in needles):
                return candidate
        return None


class LLMGateway:
    """Gateway instance holding cache, retry policy, and concurrency limits."""

    def __init__(
        self,
        cache_dir: str | Path | None = None,
        *,
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        timeout: float = 60.0,
        max_inflight: int = 8,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.cache = ResponseCache(cache_dir) if cache_dir is not None else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self._sleep = sleep
        self._inflight = threading.Semaphore(max_inflight)
        self._client = httpx.Client(transport=transport, timeout=timeout)
        self._scripts: dict[tuple[str, float], _ScriptedTable] = {}
        self._scripts_lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "LLMGateway":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    # -- generation ---------------------------------------------------------

    def generate(self, request: GenerationRequest, backend: BackendSpec) -> GenerationResult:
        if backend.kind is BackendKind.SCRIPTED:
            return self._generate_scripted(request, backend)
        if backend.kind is BackendKind.HTTP_PROVIDER:
            return self._generate_http(request, backend)
        raise ValueError(f"backend kind {backend.kind} cannot generate text")

    def _script_for(self, path: str) -> _ScriptedTable:
        mtime = os.path.getmtime(path)
        key = (path, mtime)
        with self._scripts_lock:
            table = self._scripts.get(key)
            if table is None:
                table = _ScriptedTable(path)
                self._scripts[key] = table
            return table

    def _generate_scripted(self, request: GenerationRequest, backend: BackendSpec) -> GenerationResult:
        table = self._script_for(backend.script_path)
        fingerprint = request_fingerprint(request, backend.model_name)
        entry = table.lookup(fingerprint, _request_text(request))
        if entry is None:
            raise ScriptMiss(f"no scripted entry for request {fingerprint[:12]}")
        text = entry["text"]
        usage = TokenUsage(
            prompt=int(entry.get("prompt_tokens", _estimate_tokens(_request_text(request)))),
            completion=int(entry.get("completion_tokens", _estimate_tokens(text))),
        )
        probe_probs = self._resolve_probes(request, entry.get("probs"), text)
        return GenerationResult(
            text=text,
            token_usage=usage,
            probe_probs=probe_probs,
            provider_id=backend.provider_id,
            cached=False,
        )

    def _resolve_probes(
        self,
        request: GenerationRequest,
        given: Mapping[str, float] | None,
        text: str,
    ) -> dict[str, float] | None:
        if request.probe_tokens is None:
            return None
        probes = request.probe_tokens
        if given is not None:
            if set(given) != set(probes):
                raise ScriptMiss(
                    f"scripted probs keys {sorted(given)} do not cover probe set {sorted(probes)}"
                )
            total = sum(given.values())
            if total <= 0:
                raise ValueError("scripted probe probabilities must sum to a positive value")
            return {token: given[token] / total for token in probes}
        try:
            return fallback_probe(text, probes)
        except UnparseableDecision:
            logger.warning("no probe token parseable from generation; returning no probe_probs")
            return None

    # -- HTTP provider ------------------------------------------------------

    def _generate_http(self, request: GenerationRequest, backend: BackendSpec) -> GenerationResult:
        key = request_fingerprint(request, backend.model_name)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return GenerationResult(
                    text=hit["text"],
                    token_usage=TokenUsage(hit["prompt_tokens"], hit["completion_tokens"]),
                    probe_probs=hit.get("probe_probs"),
                    provider_id=hit.get("provider_id", backend.provider_id),
                    cached=True,
                )
        payload = self._http_payload(request, backend)
        headers = {"Content-Type": "application/json"}
        credential = os.environ.get(backend.credential_env, "")
        if credential:
            headers["Authorization"] = f"Bearer {credential}"
        body = self._post_with_retries(backend.endpoint, payload, headers)
        result = self._parse_http_response(body, request, backend)
        if self.cache is not None:
            self.cache.put(
                key,
                {
                    "text": result.text,
                    "prompt_tokens": result.token_usage.prompt,
                    "completion_tokens": result.token_usage.completion,
                    "probe_probs": result.probe_probs,
                    "provider_id": result.provider_id,
                },
            )
        return result

    def _http_payload(self, request: GenerationRequest, backend: BackendSpec) -> dict[str, Any]:
        messages: list[dict[str, str]] = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        for tag, text in request.messages:
            if tag not in ("user", "assistant"):
                raise ValueError(f"unsupported speaker tag {tag!r}")
            messages.append({"role": tag, "content": text})
        payload: dict[str, Any] = {
            "model": backend.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_completion_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.probe_tokens:
            payload["logprobs"] = True
            payload["top_logprobs"] = 20
        return payload

    def post_json(self, url: str, payload: dict[str, Any], headers: Mapping[str, str]) -> dict[str, Any]:
        """POST with this gateway's retry policy; exposed for embedding calls."""
        return self._post_with_retries(url, payload, headers)

    def _post_with_retries(
        self, url: str, payload: dict[str, Any], headers: Mapping[str, str]
    ) -> dict[str, Any]:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = min(self.backoff_base * (2 ** (attempt - 1)), self.backoff_cap)
                self._sleep(delay)
            try:
                with self._inflight:
                    response = self._client.post(url, json=payload, headers=dict(headers))
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("transport failure (attempt %d/%d): %s", attempt + 1, self.max_attempts, exc)
                continue
            if response.status_code == 429 or 500 <= response.status_code < 600:
                last_error = TransportError(f"status {response.status_code}")
                logger.warning(
                    "retryable status %d (attempt %d/%d)", response.status_code, attempt + 1, self.max_attempts
                )
                continue
            if response.status_code >= 400:
                raise ProviderRefusal(f"status {response.status_code}: {response.text[:200]}")
            try:
                return response.json()
            except ValueError as exc:
                raise ProviderRefusal(f"malformed JSON body: {exc}") from exc
        raise TransportError(f"gave up after {self.max_attempts} attempts") from last_error

    def _parse_http_response(
        self, body: Mapping[str, Any], request: GenerationRequest, backend: BackendSpec
    ) -> GenerationResult:
        try:
            choice = body["choices"][0]
            message = choice.get("message") or {}
            text = message.get("content")
            if text is None:
                text = choice.get("text", "")
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderRefusal(f"response missing choices: {exc}") from exc
        usage = body.get("usage") or {}
        token_usage = TokenUsage(
            prompt=int(usage.get("prompt_tokens", _estimate_tokens(_request_text(request)))),
            completion=int(usage.get("completion_tokens", _estimate_tokens(text))),
        )
        probe_probs: dict[str, float] | None = None
        if request.probe_tokens:
            probe_probs = self._probes_from_logprobs(choice, request.probe_tokens)
            if probe_probs is None:
                try:
                    probe_probs = fallback_probe(text, request.probe_tokens)
                except UnparseableDecision:
                    logger.warning("probe tokens absent from logprobs and text; no probe_probs")
                    probe_probs = None
        return GenerationResult(
            text=text,
            token_usage=token_usage,
            probe_probs=probe_probs,
            provider_id=backend.provider_id,
            cached=False,
        )

    @staticmethod
    def _probes_from_logprobs(
        choice: Mapping[str, Any], probe_tokens: tuple[str, ...]
    ) -> dict[str, float] | None:
        content = (choice.get("logprobs") or {}).get("content")
        if not content:
            return None
        wanted = {token.strip().upper(): token for token in probe_tokens}
        for position in content:
            candidates = position.get("top_logprobs") or []
            by_norm: dict[str, float] = {}
            for candidate in candidates:
                norm = str(candidate.get("token", "")).strip().upper()
                if norm in wanted:
                    prev = by_norm.get(norm)
                    value = float(candidate["logprob"])
                    by_norm[norm] = value if prev is None else max(prev, value)
            if by_norm:
                logits = {
                    original: by_norm.get(norm, _MISSING_LOGPROB)
                    for norm, original in wanted.items()
                }
                return softmax_over(logits)
        return None


def generate(
    request: GenerationRequest,
    backend: BackendSpec,
    *,
    gateway: LLMGateway | None = None,
) -> GenerationResult:
    """One-shot convenience wrapper around LLMGateway.generate."""
    if gateway is not None:
        return gateway.generate(request, backend)
    with LLMGateway() as one_shot:
        return one_shot.generate(request, backend)
