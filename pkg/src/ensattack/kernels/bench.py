"""Convolution kernel benchmark: compiled backend vs the numpy reference.

Run as ``python3 -m ensattack.kernels.bench``. Imports both implementations
directly (ignoring the ENSATTACK_PURE_PYTHON switch), checks they agree to
float32 round-off on every benchmarked shape, then reports best-of-repeat
timings and the speedup.
"""

import time

import numpy as np

from . import reference
from ..prng import stream

try:
    from . import _conv as compiled
except ImportError:
    compiled = None

# (cin, h, w, cout, k, stride): the zoo's conv shapes plus one larger case
SHAPES = [
    (1, 12, 12, 8, 3, 1),
    (1, 12, 12, 10, 5, 2),
    (6, 10, 10, 10, 3, 2),
    (3, 32, 32, 16, 3, 1),
]


def _case(cin, h, w, cout, k, stride, seed=0):
    s = stream(seed, f"bench/{cin}/{h}/{w}/{cout}/{k}/{stride}")
    x = s.uniform((cin, h, w), -1.0, 1.0).astype(np.float32)
    wt = s.uniform((cout, cin, k, k), -1.0, 1.0).astype(np.float32)
    b = s.uniform((cout,), -1.0, 1.0).astype(np.float32)
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    dy = s.uniform((cout, oh, ow), -1.0, 1.0).astype(np.float32)
    return x, wt, b, dy


def _flat(result) -> np.ndarray:
    parts = result if isinstance(result, tuple) else (result,)
    return np.concatenate([np.ravel(np.asarray(p, dtype=np.float64)) for p in parts])


def _agree(a, b, label):
    scale = max(float(np.abs(a).max()), 1.0)
    err = float(np.abs(a - b).max()) / scale
    if err > 1e-5:
        raise AssertionError(f"{label}: backends disagree (rel err {err:.2e})")
    return err


def _best_of(fn, repeats=5, min_loops=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(min_loops):
            fn()
        best = min(best, (time.perf_counter() - t0) / min_loops)
    return best


def run(shapes=SHAPES, out=print):
    if compiled is None:
        out("compiled backend unavailable; nothing to compare")
        return []
    rows = []
    out(f"{'shape':<24} {'op':<12} {'numpy':>10} {'cython':>10} {'speedup':>8} {'rel err':>9}")
    for cin, h, w, cout, k, stride in shapes:
        x, wt, b, dy = _case(cin, h, w, cout, k, stride)
        label = f"{cin}x{h}x{w} k{k} s{stride} c{cout}"
        ops = [
            ("forward", lambda m: m.conv2d_forward(x, wt, b, stride)),
            ("grad_input", lambda m: m.conv2d_grad_input(dy, wt, stride, h, w)),
            ("grad_params", lambda m: m.conv2d_grad_params(dy, x, k, k, stride)),
        ]
        for name, op in ops:
            err = _agree(_flat(op(reference)), _flat(op(compiled)), f"{label} {name}")
            t_ref = _best_of(lambda: op(reference))
            t_com = _best_of(lambda: op(compiled))
            rows.append((label, name, t_ref, t_com, err))
            out(f"{label:<24} {name:<12} {t_ref * 1e6:>8.1f}us {t_com * 1e6:>8.1f}us "
                f"{t_ref / t_com:>7.2f}x {err:>9.2e}")
    return rows


if __name__ == "__main__":
    run()
