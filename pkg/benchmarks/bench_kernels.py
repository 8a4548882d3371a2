"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--n 200000] [--p 200] [--repeat 5]

Prints one line per kernel with the best-of-``repeat`` wall time of each
backend and the speedup. The compiled column is skipped when the extension is
not built.
"""
import argparse
import timeit

import numpy as np

from noisyglm.glm_core import NoiseModel
from noisyglm.kernels import get_backend


def _cases(n, p, seed):
    rng = np.random.default_rng(seed)
    nm = NoiseModel(0.1, 0.05)
    t = rng.normal(scale=3.0, size=n)
    z = (rng.random(n) < 0.5).astype(float)
    tz = (z - nm.b) / nm.a
    X = rng.normal(size=(4 * p, p))
    G = X.T @ X / X.shape[0]
    c = rng.normal(size=p) * 0.3
    return {
        "h_terms": lambda k: k.h_terms(t, nm.a, nm.b, nm.rho1),
        "lik_terms": lambda k: k.lik_terms(t, z, nm.a, nm.b, nm.rho1),
        "sur_terms": lambda k: k.sur_terms(t, tz),
        "lasso_cd_gram": lambda k: k.lasso_cd_gram(G, c, 0.05, np.zeros(p), 1000, 1e-10),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="points for the elementwise kernels")
    ap.add_argument("--p", type=int, default=200, help="dimension for coordinate descent")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = {"python": get_backend("python")}
    try:
        backends["cython"] = get_backend("cython")
    except ImportError:
        pass

    print(f"{'kernel':<15}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, call in _cases(args.n, args.p, args.seed).items():
        times = {}
        for label, mod in backends.items():
            call(mod)  # warm-up
            times[label] = min(timeit.repeat(lambda: call(mod), number=1, repeat=args.repeat))
        cy = times.get("cython")
        cy_txt = f"{cy:12.5f}" if cy is not None else f"{'n/a':>12}"
        sp_txt = f"{times['python'] / cy:10.1f}x" if cy else f"{'':>10}"
        print(f"{name:<15}{times['python']:12.5f}{cy_txt}{sp_txt}")


if __name__ == "__main__":
    main()
