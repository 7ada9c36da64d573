"""Language-model substrate: vocabulary, logit models, sampling, surprisal.

Every model exposes ``vocab_size``, ``eos_id`` (or ``None``) and
``logits(prefix) -> ndarray``. Nothing downstream depends on anything else, so
the synthetic Markov model, table models used in tests and remote adapters are
interchangeable.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from . import kernels
from .rng import SplitMix64, mix


class InvalidInputError(ValueError):
    """Raised on malformed tokens, logits or parameters."""


@dataclass(frozen=True)
class Vocabulary:
    size: int
    surface: Optional[Mapping[int, str]] = None

    def __post_init__(self):
        if self.size < 2:
            raise InvalidInputError(f"vocabulary size must be >= 2, got {self.size}")

    def decode(self, ids: Sequence[int]) -> str:
        if not self.surface:
            return " ".join(str(i) for i in ids)
        return " ".join(self.surface.get(i, f"<{i}>") for i in ids)


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.7
    top_p: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidInputError(f"temperature must be > 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise InvalidInputError(f"top_p must lie in (0, 1], got {self.top_p}")


class LanguageModel(Protocol):
    vocab_size: int
    eos_id: Optional[int]

    def logits(self, prefix: Sequence[int]) -> np.ndarray: ...


def check_tokens(ids: Sequence[int], vocab_size: int) -> None:
    for i in ids:
        if not 0 <= int(i) < vocab_size:
            raise InvalidInputError(f"token id {i} outside vocabulary [0, {vocab_size})")


class TableModel:
    """Order-1 model backed by an explicit logit table.

    Row ``V`` of ``table`` (if present) is used for the empty prefix; otherwise
    the empty prefix falls back to row 0.
    """

    def __init__(self, table, eos_id: Optional[int] = None):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim == 1:
            table = table[None, :]
        if not np.all(np.isfinite(table)):
            raise InvalidInputError("logit table must be finite")
        self.table = table
        self.table.setflags(write=False)
        self.vocab_size = table.shape[1]
        self.eos_id = eos_id

    def _row(self, prefix: Sequence[int]) -> int:
        if len(prefix) == 0:
            return self.vocab_size if self.table.shape[0] > self.vocab_size else 0
        last = int(prefix[-1])
        if not 0 <= last < self.vocab_size:
            raise InvalidInputError(f"token id {last} outside vocabulary [0, {self.vocab_size})")
        return last if self.table.shape[0] > 1 else 0

    def logits(self, prefix: Sequence[int]) -> np.ndarray:
        return self.table[self._row(prefix)]


class UniformModel(TableModel):
    def __init__(self, vocab_size: int):
        Vocabulary(vocab_size)
        super().__init__(np.zeros(vocab_size))


@dataclass(frozen=True)
class MarkovModelSpec:
    """Parameters of the synthetic order-1 Markov model.

    ``concentration`` plays the role of a symmetric Dirichlet parameter: rows
    have weights ``E_i ** (1 / concentration)`` for i.i.d. unit exponentials
    ``E_i``, which is exactly Dirichlet(1) at 1.0 and tends to uniform rows as
    it grows.
    """

    vocab_size: int = 256
    seed: int = 0
    concentration: float = 1.0
    order: int = 1

    def __post_init__(self):
        Vocabulary(self.vocab_size)
        if self.order != 1:
            raise InvalidInputError("only order-1 Markov models are supported")
        if not self.concentration > 0:
            raise InvalidInputError("concentration must be positive")

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "seed": self.seed,
                "concentration": self.concentration, "order": self.order}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MarkovModelSpec":
        return cls(**{k: d[k] for k in ("vocab_size", "seed", "concentration", "order") if k in d})

    def build(self) -> "MarkovModel":
        return MarkovModel(self)


def markov_row(spec: MarkovModelSpec, prev: int) -> np.ndarray:
    """Probability row for predecessor ``prev`` (``prev == V`` is the start state)."""
    rng = SplitMix64(mix(spec.seed, prev))
    u = np.array([rng.random() for _ in range(spec.vocab_size)])
    w = (-np.log1p(-u)) ** (1.0 / spec.concentration)
    return w / w.sum()


class MarkovModel(TableModel):
    def __init__(self, spec: MarkovModelSpec):
        self.spec = spec
        rows = np.stack([markov_row(spec, a) for a in range(spec.vocab_size + 1)])
        with np.errstate(divide="ignore"):
            table = np.log(rows)
        # a row weight that underflows to 0 still needs a finite logit
        table = np.maximum(table, -700.0)
        super().__init__(table)
        self.probs = rows


class CopyParaphraser:
    """Desk-scale stand-in for an LLM paraphraser.

    Generation is conditioned on ``source`` as a prefix. At output step ``t``
    the base logits are shifted by ``copy_bias`` on ``source[t]``, so rewrites
    share vocabulary and word order with the source to a tunable degree, which
    is what lets a watermark survive plain paraphrasing.
    """

    def __init__(self, base: LanguageModel, source: Sequence[int], copy_bias: float = 4.0):
        self.base = base
        self.source = [int(t) for t in source]
        self.copy_bias = float(copy_bias)
        self.vocab_size = base.vocab_size
        self.eos_id = base.eos_id

    def logits(self, prefix: Sequence[int]) -> np.ndarray:
        out = self.base.logits(prefix)
        t = len(prefix) - len(self.source)
        if 0 <= t < len(self.source) and self.copy_bias:
            out = out.copy()
            out[self.source[t]] += self.copy_bias
        return out


def logits(model: LanguageModel, prefix: Sequence[int]) -> np.ndarray:
    check_tokens(prefix, model.vocab_size)
    out = np.asarray(model.logits(prefix), dtype=np.float64)
    if out.shape != (model.vocab_size,) or not np.all(np.isfinite(out)):
        raise InvalidInputError("model returned malformed logits")
    return out


def _check_logits(l) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    if l.ndim != 1 or l.size == 0 or not np.all(np.isfinite(l)):
        raise InvalidInputError("logits must be a non-empty finite vector")
    return l


def softmax(l, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise InvalidInputError("temperature must be > 0")
    return kernels.softmax(_check_logits(l), temperature)


def nucleus_probs(l, cfg: SamplingConfig) -> np.ndarray:
    """Sampling distribution after temperature and top-p truncation."""
    return kernels.nucleus_probs(_check_logits(l), cfg.temperature, cfg.top_p)


def sample_next(l, cfg: SamplingConfig, rng: SplitMix64) -> int:
    return kernels.sample_nucleus(_check_logits(l), cfg.temperature, cfg.top_p, rng.random())


def generate(model: LanguageModel, prompt: Sequence[int], n_tokens: int, cfg: SamplingConfig,
             rng: Optional[SplitMix64] = None, logit_processor=None) -> list[int]:
    """Autoregressive sampling of up to ``n_tokens`` new tokens.

    ``logit_processor(logits, context)`` may rewrite the logits at each step;
    ``context`` is the full prefix (prompt plus generated tokens).
    """
    if rng is None:
        rng = SplitMix64(cfg.seed)
    check_tokens(prompt, model.vocab_size)
    context = [int(t) for t in prompt]
    out: list[int] = []
    for _ in range(n_tokens):
        l = model.logits(context)
        if logit_processor is not None:
            l = logit_processor(l, context)
        tok = kernels.sample_nucleus(np.ascontiguousarray(l, dtype=np.float64),
                                     cfg.temperature, cfg.top_p, rng.random())
        out.append(tok)
        context.append(tok)
        if model.eos_id is not None and tok == model.eos_id:
            break
    return out


def _log_softmax_at(l: np.ndarray, tok: int) -> float:
    m = l.max()
    return float(l[tok] - m - math.log(np.exp(l - m).sum()))


def self_information(model: LanguageModel, text: Sequence[int], prompt: Sequence[int] = ()) -> list[float]:
    """Surprisal ``-ln P(text[n] | prompt + text[:n])`` for every position, in nats."""
    if len(text) == 0:
        raise InvalidInputError("self-information needs a non-empty text")
    check_tokens(text, model.vocab_size)
    check_tokens(prompt, model.vocab_size)
    context = [int(t) for t in prompt]
    values = []
    for tok in text:
        l = logits(model, context)
        # clamp the -0.0 / tiny negative rounding of a certain token
        values.append(max(0.0, -_log_softmax_at(l, int(tok))))
        context.append(int(tok))
    if any(math.isinf(v) for v in values):
        warnings.warn("zero model probability: infinite surprisal", RuntimeWarning, stacklevel=2)
    return values


def perplexity(model: LanguageModel, text: Sequence[int], prompt: Sequence[int] = ()) -> float:
    info = self_information(model, text, prompt)
    mean = sum(info) / len(info)
    return math.inf if math.isinf(mean) else math.exp(mean)
