"""domlab: a numerical laboratory for dominated splittings, SRB-like measures,
entropy estimates, and Hadamard graph transforms on torus diffeomorphisms."""

__version__ = "0.1.0"

from .cocycle import (DominationFit, LyapunovReport, SplittingField,
                      domination_fit, lyapunov_spectrum, oseledets_splitting,
                      psi, psi_n)
from .dynamics import DiffeoSpec, apply, apply_inverse, jacobian, make_map
from .entropy import (GridPartition, ItineraryDistribution, PesinGapReport,
                      entropy_rate, itinerary_distribution, make_partition,
                      oscillation_check, partition_entropy, pesin_gap,
                      rate_bound_check, shannon_inequalities_check)
from .graphs import (ChartFrame, DispersionValue, HadamardGraph, dispersion,
                     graph_transform, iterate_transform, jacobian_ratio_check,
                     leaf_volume, make_graph, rebase_graph, tangent_leaf)
from .measures import (EmpiricalMeasure, Lebesgue, TestFunctionFamily,
                       WeakStarDistanceValue, approx_basin_fraction,
                       empirical_measure, pomega_cluster, srb_like_score,
                       weak_star_distance)

__all__ = [name for name in dir() if not name.startswith("_")]
