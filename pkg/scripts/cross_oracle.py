"""Quadrature energies against the Monte Carlo histogram on solved example refractors."""
import argparse

import numpy as np

from refractor_lab.hypotheses import build_example_scene
from refractor_lab.raytrace import irradiance_histogram
from refractor_lab.refractor_solver import SolverConfig, solve, tracing_energy
from refractor_lab.scene import discretize_target, with_weights


def compare(scene, res, rays, seed, threads):
    total = scene.source_energy()
    E = tracing_energy(res.refractor, scene, res.quadrature)
    h = irradiance_histogram(res.refractor, scene, rays, seed=seed, threads=threads)
    sigma = np.sqrt(h.stderr**2 + (E.per_target_error / total) ** 2)
    z = np.abs(h.fractions - E.G / total) / sigma
    print(f"n={scene.n} N={res.refractor.size}: assigned {h.assigned_fraction:.6f}, boundary {h.boundary}, "
          f"TIR {h.tir}, max z {z.max():.2f}")
    for i, (q, m, s) in enumerate(zip(E.G / total, h.fractions, sigma)):
        print(f"  target {i:3d}  quadrature {q:.6f}  monte carlo {m:.6f}  combined sigma {s:.1e}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rays", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()

    d2 = with_weights(discretize_target(build_example_scene(n=2), 4), [0.1, 0.2, 0.3, 0.4])
    compare(d2, solve(d2, SolverConfig(method="sweep")), args.rays, args.seed, args.threads)
    d3 = discretize_target(build_example_scene(n=3), 16, layout="ring")
    compare(d3, solve(d3, SolverConfig(method="hybrid", polish_tol=1e-12)), args.rays, args.seed, args.threads)


if __name__ == "__main__":
    main()
