"""Time the kernel-sum backends against each other.

    python3 benchmarks/bench_kde.py --sizes 2000,20000,100000

For every sample size the script fits one score model on standard normal
residuals and times ``score_at_sample`` (the LPT hot path) and a batch of
off-sample density queries on each available backend. Results are checked
for agreement before timings are reported.
"""
import argparse
import time

import numpy as np

from lptscan import available_backends
from lptscan.transforms import fit_score_model, kde_density, score_at_sample


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="2000,20000,100000")
    parser.add_argument("--queries", type=int, default=1000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--skip-python-above", type=int, default=200_000,
                        help="do not time the pure-Python backend beyond this n")
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'n':>8} {'op':<16} " + " ".join(f"{b:>12}" for b in backends) + "  speedup")
    for n in (int(s) for s in args.sizes.split(",")):
        r = rng.standard_normal(n)
        model = fit_score_model(r)
        x = rng.uniform(r.min(), r.max(), args.queries)
        ops = {
            "score_at_sample": lambda b: score_at_sample(model, backend=b),
            "density_queries": lambda b: kde_density(model, x, backend=b),
        }
        for name, op in ops.items():
            timings, outputs = {}, {}
            for b in backends:
                if b == "python" and n > args.skip_python_above:
                    continue
                timings[b], outputs[b] = best_of(lambda: op(b), args.repeat)
            if len(outputs) == 2:
                a, c = outputs.values()
                err = np.max(np.abs(a - c) / np.maximum(np.abs(c), 1e-300))
                assert err < 1e-9, f"backends disagree at n={n} ({name}): {err:.2e}"
            cells = " ".join(
                f"{timings[b]:>11.4f}s" if b in timings else f"{'-':>12}" for b in backends
            )
            speedup = ""
            if "cython" in timings and "python" in timings:
                speedup = f"  {timings['python'] / timings['cython']:.1f}x"
            print(f"{n:>8} {name:<16} {cells}{speedup}")


if __name__ == "__main__":
    main()
