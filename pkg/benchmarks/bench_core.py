"""Compiled core against the numpy fallback.

Times single local fits, a full curve and a cross-validation sweep on a
simulated lattice with each backend, and checks that both give the same
numbers. Run with ``python3 benchmarks/bench_core.py [--json out.json]``.
"""

import argparse
import json
import sys
import time

import numpy as np

from sqfc import _backend
from sqfc.bandwidth import CvConfig, select_bandwidth
from sqfc.localfit import FitConfig, default_grid, fit_at, fit_curve
from sqfc.loss import HuberType, Quantile, Squared
from sqfc.simulate import DgpConfig, generate


def _best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(shape, repeat):
    ds, _ = generate(DgpConfig(shape=shape, seed=7))
    grid = default_grid(ds, 40)
    yield "fit_at quantile", repeat, lambda: fit_at(ds, [0.5], FitConfig(Quantile(0.5), h=0.2)).beta_hat
    yield "fit_at huber", repeat, lambda: fit_at(ds, [0.5], FitConfig(HuberType(1.345), h=0.2)).beta_hat
    yield "fit_at squared", repeat, lambda: fit_at(ds, [0.5], FitConfig(Squared(), h=0.2)).beta_hat
    yield "curve quantile (40 pts)", max(1, repeat // 10), \
        lambda: fit_curve(ds, grid, FitConfig(Quantile(0.25), h=0.2), threads=1).beta
    cv = CvConfig((0.15, 0.2, 0.3), loss=Quantile(0.5))
    yield "cv quantile (3 h)", 1, lambda: np.array(select_bandwidth(ds, cv, threads=1).scores)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--shape", default="30x30")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    shape = tuple(int(t) for t in args.shape.split("x"))
    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available", file=sys.stderr)
    rows = []
    print(f"lattice {shape[0]}x{shape[1]}, backends: {', '.join(backends)}")
    print(f"{'case':<26}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for name, repeat, fn in cases(shape, args.repeat):
        times, outs = {}, {}
        for b in backends:
            with _backend.use_backend(b):
                times[b], outs[b] = _best_of(fn, repeat)
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        diff = float(np.nanmax(np.abs(outs["python"] - outs["compiled"]))) if "compiled" in outs else 0.0
        rows.append({"case": name, "seconds": times, "speedup": speedup, "max_abs_diff": diff})
        print(f"{name:<26}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
              + f"{speedup:>9.1f}x{diff:>12.1e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"shape": shape, "rows": rows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
