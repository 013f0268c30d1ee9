"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py --n 5000 --c 10 --repeat 20
"""

import argparse
import timeit

import numpy as np

from popll import _kernels_py, kernels
from popll.nn import log_softmax, softmax


def make_inputs(n, c, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, c)) * 3
    mask = rng.random((n, c)) < 0.4
    mask[np.arange(n), rng.integers(0, c, n)] = True
    w = _kernels_py.normalize_weights(rng.random((n, c)), mask)
    return z, softmax(z), log_softmax(z), mask, w


def cases(impl, z, p, lp, mask, w):
    yield "purify", lambda: impl.purify(p, mask, 0.3)
    yield "normalize_weights", lambda: impl.normalize_weights(p, mask)
    yield "restricted_argmax", lambda: impl.restricted_argmax(p, mask)
    for code, name in ((0, "weighted_ce"), (1, "cc"), (2, "lws"), (3, "clpl")):
        yield f"loss_grad[{name}]", lambda code=code: impl.loss_grad(code, z, lp, p, mask, w, 1.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--c", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    inputs = make_inputs(args.n, args.c, args.seed)
    names = sorted(kernels.BACKENDS)
    if "cython" not in names:
        print("compiled extension not built; timing the numpy backend only")
    results = {b: {k: min(timeit.repeat(f, number=1, repeat=args.repeat))
                   for k, f in cases(kernels.BACKENDS[b], *inputs)} for b in names}

    print(f"n={args.n} c={args.c}, best of {args.repeat} (ms)")
    print(f"{'kernel':<22}" + "".join(f"{b:>10}" for b in names) + ("   speedup" if len(names) > 1 else ""))
    for k in results[names[0]]:
        row = f"{k:<22}" + "".join(f"{1e3 * results[b][k]:>10.3f}" for b in names)
        if "cython" in results:
            row += f"{results['python'][k] / results['cython'][k]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
