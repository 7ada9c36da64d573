import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biralab import _pykernels, kernels
from biralab.rng import SplitMix64, mix, splitmix64

try:
    from biralab import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")

logit_vectors = st.lists(st.floats(-30, 30, allow_nan=False), min_size=2, max_size=64).map(np.array)


def test_splitmix64_reference_vector():
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(3)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423]
    assert splitmix64(1234567) == 6457827717110365317


def test_random_in_unit_interval():
    rng = SplitMix64(3)
    u = [rng.random() for _ in range(10_000)]
    assert min(u) >= 0 and max(u) < 1
    assert abs(np.mean(u) - 0.5) < 0.02


def test_mix_separates_contexts():
    assert mix(42, 7) != mix(42, 8)
    assert mix(42, 7) == mix(42, 7)


@pytest.mark.parametrize("impl", [_pykernels, pytest.param(_ckernels, marks=needs_ext)])
def test_permutation_is_permutation(impl):
    p = impl.permutation(99, 257)
    assert sorted(p.tolist()) == list(range(257))


@needs_ext
def test_permutation_backends_identical():
    for seed in (0, 1, 2**63 + 5, 2**64 - 1):
        assert np.array_equal(_ckernels.permutation(seed, 300), _pykernels.permutation(seed, 300))


@needs_ext
@settings(max_examples=300, deadline=None)
@given(logit_vectors, st.floats(0.05, 3.0), st.floats(0.01, 1.0), st.floats(0, 1, exclude_max=True))
def test_backends_agree(l, temperature, top_p, u):
    np.testing.assert_allclose(_ckernels.nucleus_probs(l, temperature, top_p),
                               _pykernels.nucleus_probs(l, temperature, top_p), rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(_ckernels.softmax(l, temperature), _pykernels.softmax(l, temperature),
                               rtol=1e-12, atol=1e-300)
    assert _ckernels.sample_nucleus(l, temperature, top_p, u) == _pykernels.sample_nucleus(l, temperature, top_p, u)


@settings(max_examples=200, deadline=None)
@given(logit_vectors, st.floats(0.05, 3.0), st.floats(0.01, 1.0))
def test_nucleus_is_smallest_ranked_prefix(l, temperature, top_p):
    probs = kernels.nucleus_probs(l, temperature, top_p)
    full = kernels.softmax(l, temperature)
    keep = np.flatnonzero(probs > 0)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    # kept tokens outrank every dropped token
    dropped = np.setdiff1d(np.arange(l.size), keep)
    if dropped.size and keep.size:
        assert full[keep].min() >= full[dropped].max()
    assert full[keep].sum() >= top_p - 1e-9
    np.testing.assert_allclose(probs[keep], full[keep] / full[keep].sum(), rtol=1e-9)


def test_tie_break_by_id():
    # four equal tokens, top_p=0.5 keeps the two lowest ids
    probs = kernels.nucleus_probs(np.zeros(4), 1.0, 0.5)
    assert probs.tolist() == [0.5, 0.5, 0.0, 0.0]


def _generate_in_subprocess(pure: bool) -> dict:
    import json
    import os
    import subprocess
    import sys
    env = dict(os.environ)
    env.pop("BIRALAB_PURE_PYTHON", None)
    if pure:
        env["BIRALAB_PURE_PYTHON"] = "1"
    code = ("import json; from biralab import kernels, lm, watermark as wm;"
            "m = lm.MarkovModelSpec(seed=3).build();"
            "t = wm.generate_watermarked(m, wm.WatermarkScheme(), [1], 300, lm.SamplingConfig(seed=2));"
            "print(json.dumps({'backend': kernels.BACKEND, 'text': t}))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_fallback_selected_by_environment():
    assert _generate_in_subprocess(pure=True)["backend"] == "python"


@needs_ext
def test_fallback_generates_same_tokens():
    fast, slow = _generate_in_subprocess(False), _generate_in_subprocess(True)
    assert fast["backend"] == "cython"
    assert fast["text"] == slow["text"]
