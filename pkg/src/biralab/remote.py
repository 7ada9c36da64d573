"""HTTP adapter for generation services that accept per-token logit biases.

Request body (JSON, POST to the endpoint)::

    {"prompt": str, "system": str, "temperature": float, "top_p": float,
     "max_tokens": int, "seed": int, "logit_bias": {"<token id>": float},
     "logprobs": bool}

Accepted responses are either ``{"text": str, "tokens": [int]?,
"logprobs": [float]?}`` or the chat-completions shape
``{"choices": [{"message": {"content": str}, "logprobs": {"content":
[{"token": str, "logprob": float}]}}]}``.

The watermark key never leaves the process: requests carry only the prompt,
sampling parameters and the attacker's bias map.
"""
from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .lm import SamplingConfig

log = logging.getLogger(__name__)

TRANSIENT_STATUS = {408, 425, 429, 500, 502, 503, 504}


class RemoteError(RuntimeError):
    pass


class RemoteNetworkError(RemoteError):
    """The service stayed unreachable or kept failing after all retries."""


class MalformedResponseError(RemoteError):
    pass


class BiasMapOverflowError(RemoteError):
    """The bias map exceeds the provider's size cap; raised before any request."""


def default_paraphrase_prompt() -> str:
    return resources.files("biralab").joinpath("assets/paraphrase_prompt.txt").read_text(encoding="utf-8")


@dataclass
class RemoteConfig:
    endpoint: str
    auth_token: Optional[str] = None
    max_bias_entries: int = 300
    max_tokens: int = 1500
    timeout: float = 60.0
    max_attempts: int = 4
    backoff: float = 0.5
    system_prompt: Optional[str] = None


@dataclass
class RemoteResponse:
    text: str
    tokens: Optional[list] = None
    logprobs: Optional[list] = None
    raw: dict = field(default_factory=dict)


def build_request(prompt: str, bias: Mapping[int, float], cfg: SamplingConfig, rcfg: RemoteConfig) -> dict:
    if len(bias) > rcfg.max_bias_entries:
        raise BiasMapOverflowError(f"bias map has {len(bias)} entries, cap is {rcfg.max_bias_entries}")
    body = {
        "prompt": prompt,
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
        "max_tokens": rcfg.max_tokens,
        "seed": cfg.seed,
        "logprobs": True,
    }
    if rcfg.system_prompt is not None:
        body["system"] = rcfg.system_prompt
    if bias:
        body["logit_bias"] = {str(int(k)): float(v) for k, v in sorted(bias.items())}
    return body


def parse_response(payload) -> RemoteResponse:
    if isinstance(payload, (bytes, str)):
        try:
            payload = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise MalformedResponseError(f"response is not JSON: {exc.msg}") from None
    if not isinstance(payload, dict):
        raise MalformedResponseError("response must be a JSON object")
    if "text" in payload:
        text = payload["text"]
        tokens = payload.get("tokens")
        logprobs = payload.get("logprobs")
    elif payload.get("choices"):
        choice = payload["choices"][0]
        try:
            text = choice["message"]["content"]
        except (KeyError, TypeError):
            raise MalformedResponseError("choice lacks message.content") from None
        tokens = None
        content = (choice.get("logprobs") or {}).get("content")
        logprobs = [c["logprob"] for c in content] if content else None
    else:
        raise MalformedResponseError("response has neither 'text' nor 'choices'")
    if not isinstance(text, str):
        raise MalformedResponseError("generated text must be a string")
    if tokens is not None and not (isinstance(tokens, list) and all(isinstance(t, int) for t in tokens)):
        raise MalformedResponseError("'tokens' must be a list of integers")
    if logprobs is not None and not (isinstance(logprobs, list)
                                     and all(isinstance(v, (int, float)) for v in logprobs)):
        raise MalformedResponseError("'logprobs' must be a list of numbers")
    return RemoteResponse(text=text, tokens=tokens, logprobs=logprobs, raw=payload)


def _post(url: str, body: dict, rcfg: RemoteConfig) -> bytes:
    headers = {"Content-Type": "application/json"}
    if rcfg.auth_token:
        headers["Authorization"] = f"Bearer {rcfg.auth_token}"
    req = urllib.request.Request(url, data=json.dumps(body).encode("utf-8"), headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=rcfg.timeout) as resp:
        return resp.read()


def remote_generate(rcfg: RemoteConfig, prompt: str, bias: Mapping[int, float], cfg: SamplingConfig,
                    sleep: Callable[[float], None] = time.sleep) -> RemoteResponse:
    """Send one generation request, retrying transient failures with exponential backoff."""
    body = build_request(prompt, bias, cfg, rcfg)
    last: Optional[Exception] = None
    for attempt in range(rcfg.max_attempts):
        try:
            raw = _post(rcfg.endpoint, body, rcfg)
        except urllib.error.HTTPError as exc:
            if exc.code not in TRANSIENT_STATUS:
                raise RemoteError(f"HTTP {exc.code} from {rcfg.endpoint}") from exc
            last = exc
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            last = exc
        else:
            return parse_response(raw)
        if attempt + 1 < rcfg.max_attempts:
            delay = rcfg.backoff * 2**attempt
            log.warning("transient failure (%s); retrying in %.2fs", last, delay)
            sleep(delay)
    raise RemoteNetworkError(f"{rcfg.endpoint} failed after {rcfg.max_attempts} attempts: {last}")


def remote_generate_many(rcfg: RemoteConfig, jobs: Iterable[tuple[str, Mapping[int, float]]],
                         cfg: SamplingConfig, max_workers: int = 4) -> list[RemoteResponse]:
    """Bounded-concurrency batch; results keep input order."""
    jobs = list(jobs)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda j: remote_generate(rcfg, j[0], j[1], cfg), jobs))


@dataclass
class BridgeResult:
    target_ids: list
    unmapped: int


def retokenize_bridge(ids: Iterable[int], proxy_surface: Mapping[int, str],
                      target_vocab: Mapping[str, Sequence[int]]) -> BridgeResult:
    """Carry proxy-tokenizer ids over to target-tokenizer ids through surface strings.

    A surface string may expand to several target ids; the union is returned
    sorted and deduplicated. Ids whose string (or the string itself) has no
    mapping are skipped and counted.
    """
    out: set[int] = set()
    unmapped = 0
    for i in sorted(set(int(x) for x in ids)):
        s = proxy_surface.get(i)
        if s is None or s not in target_vocab:
            unmapped += 1
            continue
        out.update(int(t) for t in target_vocab[s])
    if unmapped:
        log.warning("%d proxy tokens had no target mapping", unmapped)
    return BridgeResult(target_ids=sorted(out), unmapped=unmapped)


def bias_map(target_ids: Iterable[int], beta: float) -> dict[int, float]:
    return {int(t): float(beta) for t in target_ids}


class RemoteRewriter:
    """Bias-inversion rewriting through a remote service.

    Surprisal comes from a local ``proxy_model`` because most services expose
    no prompt log-probabilities.
    """

    def __init__(self, rcfg: RemoteConfig, proxy_surface: Mapping[int, str],
                 target_vocab: Mapping[str, Sequence[int]], prompt_template: Optional[str] = None):
        self.rcfg = rcfg
        self.proxy_surface = proxy_surface
        self.target_vocab = target_vocab
        self.prompt_template = prompt_template or default_paraphrase_prompt()

    def rewrite(self, text: str, proxy_ids: Iterable[int], beta: float, cfg: SamplingConfig) -> RemoteResponse:
        bridged = retokenize_bridge(proxy_ids, self.proxy_surface, self.target_vocab)
        prompt = f"{self.prompt_template.rstrip()}\n\n{text}"
        return remote_generate(self.rcfg, prompt, bias_map(bridged.target_ids, beta), cfg)
