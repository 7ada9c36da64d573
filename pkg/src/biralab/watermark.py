"""Green-list watermarks (KGW single left hash, Unigram) and z-test detection."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .lm import InvalidInputError, LanguageModel, SamplingConfig, check_tokens, generate
from .rng import SplitMix64, mix

KGW = "kgw"
UNIGRAM = "unigram"


@dataclass(frozen=True)
class WatermarkScheme:
    kind: str = KGW
    key: int = 15485863
    p0: float = 0.5
    gamma: float = 2.0
    tau: float = 4.0

    def __post_init__(self):
        if self.kind not in (KGW, UNIGRAM):
            raise InvalidInputError(f"unknown watermark kind {self.kind!r}")
        if not 0 < self.p0 < 1:
            raise InvalidInputError("p0 must lie in (0, 1)")
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        if not 0 <= self.key < 2**64:
            raise InvalidInputError("key must be a 64-bit unsigned integer")

    @property
    def context_width(self) -> int:
        return 1 if self.kind == KGW else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "WatermarkScheme":
        return cls(**{k: d[k] for k in ("kind", "key", "p0", "gamma", "tau") if k in d})


def green_size(p0: float, vocab_size: int) -> int:
    return int(math.floor(p0 * vocab_size))


@lru_cache(maxsize=65536)
def _green_mask(seed: int, vocab_size: int, size: int) -> np.ndarray:
    mask = np.zeros(vocab_size, dtype=bool)
    mask[kernels.permutation(seed, vocab_size)[:size]] = True
    mask.setflags(write=False)
    return mask


def green_mask(scheme: WatermarkScheme, vocab_size: int, context: Sequence[int] = ()) -> np.ndarray:
    """Boolean membership vector of the green set for ``context``.

    KGW seeds the permutation with the last context token; Unigram with 0.
    """
    if scheme.kind == KGW:
        if len(context) == 0:
            raise InvalidInputError("KGW green set needs a non-empty context")
        ctx = int(context[-1])
        if not 0 <= ctx < vocab_size:
            raise InvalidInputError(f"context token {ctx} outside vocabulary")
    else:
        ctx = 0
    return _green_mask(mix(scheme.key, ctx), vocab_size, green_size(scheme.p0, vocab_size))


def green_set(scheme: WatermarkScheme, vocab_size: int, context: Sequence[int] = ()) -> frozenset:
    return frozenset(np.flatnonzero(green_mask(scheme, vocab_size, context)).tolist())


def watermarked_logits(scheme: WatermarkScheme, l, context: Sequence[int]) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    return np.where(green_mask(scheme, l.size, context), l + scheme.gamma, l)


def generate_watermarked(model: LanguageModel, scheme: WatermarkScheme, prompt: Sequence[int],
                         n_tokens: int, cfg: SamplingConfig, rng: Optional[SplitMix64] = None) -> list[int]:
    """Sample ``n_tokens`` tokens with the green-list bias applied at every step.

    A KGW step with no context (empty prompt, first token) is left unbiased.
    """
    if n_tokens < 1:
        raise InvalidInputError("n_tokens must be >= 1")

    def bias(l, context):
        if scheme.kind == KGW and not context:
            return l
        return watermarked_logits(scheme, l, context)

    return generate(model, prompt, n_tokens, cfg, rng=rng, logit_processor=bias)


@dataclass(frozen=True)
class DetectionReport:
    N: int
    green_count: int
    p_hat: float
    z: float
    tau: float
    p_tau: float
    decision: bool


def p_tau(p0: float, tau: float, N: int) -> float:
    """Green-rate threshold equivalent to the z threshold ``tau``."""
    if N < 1 or not 0 < p0 < 1:
        raise InvalidInputError("need N >= 1 and 0 < p0 < 1")
    return p0 + tau * math.sqrt(p0 * (1 - p0) / N)


def z_from_count(green_count: int, N: int, p0: float) -> float:
    return (green_count / N - p0) / math.sqrt(p0 * (1 - p0) / N)


def z_at_least(green_count: int, N: int, p0: float, tau: float) -> bool:
    """Exact ``z >= tau`` on the count lattice, in rational arithmetic.

    Squares both sides of ``count - p0*N >= tau*sqrt(p0(1-p0)N)`` so no
    square root is ever rounded.
    """
    p, t = Fraction(p0), Fraction(tau)
    lhs = green_count - p * N
    rhs_sq = t * t * p * (1 - p) * N
    if t >= 0:
        return lhs >= 0 and lhs * lhs >= rhs_sq
    return lhs >= 0 or lhs * lhs <= rhs_sq


def threshold_count(p0: float, tau: float, N: int) -> int:
    """Smallest green count that is detected; ``N + 1`` if none is."""
    guess = max(0, min(N, math.ceil(N * p_tau(p0, tau, N))))
    while guess > 0 and z_at_least(guess - 1, N, p0, tau):
        guess -= 1
    while guess <= N and not z_at_least(guess, N, p0, tau):
        guess += 1
    return guess


def scored_positions(scheme: WatermarkScheme, text: Sequence[int], prompt: Sequence[int] = ()):
    """Yield ``(token, context)`` pairs for every position that is scored.

    KGW skips position 0 when there is no prompt to hash.
    """
    full = list(prompt) + list(text)
    offset = len(prompt)
    for n, tok in enumerate(text):
        ctx_end = offset + n
        if scheme.kind == KGW and ctx_end == 0:
            continue
        yield tok, full[max(0, ctx_end - 1):ctx_end]


def count_green(scheme: WatermarkScheme, vocab_size: int, text: Sequence[int],
                prompt: Sequence[int] = ()) -> tuple[int, int]:
    green = total = 0
    for tok, ctx in scored_positions(scheme, text, prompt):
        total += 1
        green += bool(green_mask(scheme, vocab_size, ctx)[tok])
    return green, total


def report_from_count(green_count: int, N: int, p0: float, tau: float) -> DetectionReport:
    if N < 1:
        raise InvalidInputError("cannot score an empty text")
    return DetectionReport(
        N=N,
        green_count=green_count,
        p_hat=green_count / N,
        z=z_from_count(green_count, N, p0),
        tau=tau,
        p_tau=p_tau(p0, tau, N),
        decision=z_at_least(green_count, N, p0, tau),
    )


def z_score(text: Sequence[int], scheme: WatermarkScheme, vocab_size: int,
            prompt: Sequence[int] = (), tau: Optional[float] = None) -> DetectionReport:
    check_tokens(text, vocab_size)
    check_tokens(prompt, vocab_size)
    green, N = count_green(scheme, vocab_size, text, prompt)
    return report_from_count(green, N, scheme.p0, scheme.tau if tau is None else tau)


def detect(text: Sequence[int], scheme: WatermarkScheme, vocab_size: int,
           tau: Optional[float] = None, prompt: Sequence[int] = ()) -> bool:
    return z_score(text, scheme, vocab_size, prompt=prompt, tau=tau).decision
