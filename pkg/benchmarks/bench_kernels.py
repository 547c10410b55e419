"""Compare the compiled path kernel with the numpy fallback.

Both kernels get the same pre-drawn increments and tables, so the timing
covers only the time stepping.  Example::

    python3 benchmarks/bench_kernels.py --paths 20000 --steps 500 --factors 2
"""
import argparse
import time

import numpy as np

from rsgame import _kernel_py
from rsgame.equilibrium import strategy_pair
from rsgame.kernels import KERNELS
from rsgame.model import MarketModel, RateSchedule
from rsgame.riccati import solve_coefficients
from rsgame.simulation import MEASURES, _tables, brownian_increments


def build_model(n: int, m: int, seed: int) -> MarketModel:
    rng = np.random.default_rng(seed)
    d = n + m
    return MarketModel(
        a=rng.normal(0.05, 0.02, m), A=0.3 * rng.standard_normal((m, n)),
        b=0.1 * rng.standard_normal(n), B=0.2 * rng.standard_normal((n, n)) - np.eye(n),
        Sigma=0.3 * rng.standard_normal((m, d)), Lambda=0.3 * rng.standard_normal((n, d)),
        rate=RateSchedule.constant(0.02), theta=1.0, T=1.0, v=1.0, x0=np.zeros(n),
    )


def time_kernel(fn, args, repeats: int) -> tuple[float, np.ndarray]:
    best = np.inf
    for _ in range(repeats):
        P, n = args[0].shape[0], args[2].shape[0]
        XT, acc = np.empty((P, n)), np.empty((P, _kernel_py.N_ACC))
        start = time.perf_counter()
        fn(*args, XT, acc, None)
        best = min(best, time.perf_counter() - start)
    return best, acc


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--factors", type=int, default=2)
    ap.add_argument("--assets", type=int, default=2)
    ap.add_argument("--measure", choices=sorted(MEASURES), default="full")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    model = build_model(args.factors, args.assets, seed=1)
    n = args.factors
    coeffs = solve_coefficients(model, 500, terminal=(0.3 * np.eye(n), np.full(n, 0.1)))
    pair = strategy_pair(coeffs, model)
    times = np.linspace(0.0, model.T, args.steps + 1)
    rates = model.rate.mean_rates(times)
    tab = _tables(model, times, rates, pair.market, pair.investor, coeffs)
    dW = brownian_increments(7, np.arange(args.paths), args.steps, model.d, times[1])
    kargs = (dW, np.diff(times), model.x0, rates, tab["eta"], tab["xi"], tab["h0"], tab["H1"],
             tab["Qt"], tab["qt"], tab["dQt"], tab["dqt"], tab["dkt"], tab["halftr"],
             model.a, model.A, model.b, model.B, model.Sigma, model.Lambda, model.theta,
             MEASURES[args.measure])

    print(f"paths={args.paths} steps={args.steps} n={args.factors} m={args.assets} measure={args.measure}")
    results = {}
    for name, fn in sorted(KERNELS.items()):
        secs, acc = time_kernel(fn, kargs, args.repeats)
        results[name] = (secs, acc)
        rate = args.paths * args.steps / secs / 1e6
        print(f"{name:>9}: {secs:8.3f} s  ({rate:6.2f} M path-steps/s)")
    if len(results) == 2:
        (tc, ac), (tp, ap_) = results["compiled"], results["python"]
        print(f"  speedup: {tp / tc:.1f}x   max |accumulator difference|: {np.abs(ac - ap_).max():.2e}")
    else:
        print("  compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
