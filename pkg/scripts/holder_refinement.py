"""Hölder sup-ratios of solved example refractors along a sequence of target counts.

Prints the map and gradient sup-ratios for each N and the drift between
consecutive entries, plus the measure-condition ratios of the finest solve.
"""
import argparse
import time

from refractor_lab.analysis import (
    estimate_holder_gradient,
    estimate_holder_map,
    measure_condition_check,
    solved_example,
)
from refractor_lab.hypotheses import build_example_scene


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=2, choices=(2, 3))
    p.add_argument("--targets", type=int, nargs="+", default=[64, 256, 1024])
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    scene = build_example_scene(0.5, 2.0, None, 1.0, args.n)
    prev = None
    for N in args.targets:
        t0 = time.perf_counter()
        d, u = solved_example(scene, N)
        m = estimate_holder_map(u, d, budget=args.budget, seed=args.seed)
        g = estimate_holder_gradient(u, d, budget=args.budget, seed=args.seed)
        cur = (m.fitted_ratio_sup, g.fitted_ratio_sup)
        line = f"N={N:5d}  map {cur[0]:.4g}  gradient {cur[1]:.4g}  fit exponents {m.best_fit_exponent:.3f} " \
               f"{g.best_fit_exponent:.3f}  ({time.perf_counter() - t0:.1f}s)"
        if prev:
            line += "  drift " + " ".join(f"{abs(a - b) / max(abs(a), abs(b)):.3f}" for a, b in zip(prev, cur))
        print(line)
        prev = cur
    mc = measure_condition_check(u, d, seed=args.seed)
    for s, r, ok in zip(mc.sigmas, mc.ratios, mc.resolved):
        print(f"sigma {s:.4g}  ratio {r:.4g}  {'resolved' if ok else 'below cell size'}")
    print(f"a priori bound at resolved scales {mc.bound:.4g}")


if __name__ == "__main__":
    main()
