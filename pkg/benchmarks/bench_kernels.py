"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the result does not depend on
THEMEGEN_PURE_PYTHON.  Outputs are compared before timing.
"""
import argparse
import timeit

import numpy as np

from themegen._kernels import _pykernels
from themegen.codec import encode_piece
from themegen.synth import SynthSpec, synth_piece
from themegen.vocab import PIANO

try:
    from themegen._kernels import _ckernels
except ImportError:
    _ckernels = None


def _grammar_case():
    piece, _ = synth_piece(SynthSpec(occurrences=8, filler_bars=(4, 4), rng_seed=3))
    ids = np.asarray(encode_piece(piece))
    args = (PIANO.kind[ids], PIANO.track[ids], PIANO.value[ids], True)
    return f"grammar scan ({len(ids)} tokens)", "grammar_violation", args


def _cross_case(n=20000, seed=0):
    rng = np.random.default_rng(seed)
    mask = (rng.random(n) < 0.4).astype(np.int8)
    starts = ((rng.random(n) < 0.02) & (mask == 1)).astype(np.int8)
    return f"cross positions ({n} tokens)", "theme_cross_positions", (mask, starts)


def _dbscan_case(n=200, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 8))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    return f"dbscan ({n} points)", "dbscan_labels", (dist, float(np.quantile(dist, 0.05)), 2)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, name, call_args in (_grammar_case(), _cross_case(), _dbscan_case()):
        py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
        a, b = py(*call_args), cy(*call_args)
        if not np.array_equal(np.asarray(a), np.asarray(b)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: py(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: cy(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:32s} {t_py:10.2f} {t_cy:10.3f} {t_py / t_cy:7.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
