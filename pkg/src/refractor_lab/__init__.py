"""Near-field refractor design with Cartesian ovals, and numerical checks of its regularity theory."""
from .analysis import (
    LEMMAS,
    HolderReport,
    LemmaReport,
    MeasureConditionReport,
    estimate_holder_gradient,
    estimate_holder_map,
    measure_condition_check,
    run_lemma_suite,
    verify_lemmas,
)
from .geom_core import OvalParams, grad_h_x, h_value, oval_radius, rho
from .hypotheses import build_example_scene, check_all, check_HA, check_HB, check_HC, check_HD
from .raytrace import TIR, irradiance_histogram, refract, trace
from .refractor_solver import DiscreteRefractor, SolverConfig, solve, tracing_energy
from .scene import Cap, Density, DiscretePoints, PlanarDisk, Scene, discretize_target

__version__ = "0.1.0"
