"""Experiments: convergence to the Delaunay model, embeddedness of the end, frame growth."""

from .convergence import ConvergenceReport, convergence_experiment, PerturbedEnd, build_perturbed_end
from .embedding import EmbeddingReport, embeddedness_check, annulus_mesh
from .growth import frame_growth_check
from .intersect import self_intersections

__all__ = [
    "ConvergenceReport", "convergence_experiment", "PerturbedEnd", "build_perturbed_end",
    "EmbeddingReport", "embeddedness_check", "annulus_mesh", "frame_growth_check",
    "self_intersections",
]
