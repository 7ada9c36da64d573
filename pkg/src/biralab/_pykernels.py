"""Pure numpy implementations of the per-step decoding kernels.

Every function here has a compiled twin in ``_ckernels`` with the same
contract. Tokens are ranked by (weight desc, id asc); the nucleus is the
shortest ranked prefix whose cumulative weight reaches ``top_p`` of the total.
"""
import numpy as np

from .rng import SplitMix64


def softmax(logits, temperature=1.0):
    z = np.exp((logits - logits.max()) / temperature)
    return z / z.sum()


def _nucleus(logits, temperature, top_p):
    w = np.exp((logits - logits.max()) / temperature)
    order = np.lexsort((np.arange(w.size), -w))
    cum = np.cumsum(w[order])
    last = int(np.searchsorted(cum, top_p * cum[-1], side="left"))
    return order, w, cum, min(last, w.size - 1)


def nucleus_probs(logits, temperature, top_p):
    order, w, cum, last = _nucleus(logits, temperature, top_p)
    out = np.zeros(w.size)
    keep = order[: last + 1]
    out[keep] = w[keep] / cum[last]
    return out


def sample_nucleus(logits, temperature, top_p, u):
    order, _, cum, last = _nucleus(logits, temperature, top_p)
    j = int(np.searchsorted(cum[: last + 1], u * cum[last], side="right"))
    return int(order[min(j, last)])


def permutation(seed, n):
    rng = SplitMix64(seed)
    out = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out
