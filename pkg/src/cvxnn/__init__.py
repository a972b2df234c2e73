"""Globally optimal training of two-layer piecewise-linear networks via convex programs."""

from .arrangements import (PatternSet, count_bound, enumerate_exact,
                           estimate_solid_angles, realizability_check,
                           sample_convolutional, sample_gaussian,
                           sample_size_threshold, zonotope_vertex)
from .baseline import TrainConfig, multi_restart, train_linear_cnn, train_nonconvex
from .core import (ActivationSpec, DataMatrix, LabelData, PooledLoss,
                   SquaredLoss, apply_activation, svd_decompose)
from .datasets import load_dataset
from .extensions import (LowRankPlan, PatchSet, circular_cnn_train,
                         cnn_gap_reduce, linear_cnn_train, lowrank_train,
                         spike_free_train, vector_output_train)
from .mapping import (NetworkParams, convex_to_network, network_to_convex,
                      nonconvex_objective, rescale_balanced, stationarity_check)
from .program import (ConvexProgram, GroupWeights, build_interpolation_program,
                      build_program, objective)
from .solvers import (SolverConfig, solve_admm, solve_circular_fourier,
                      solve_nuclear, solve_penalized,
                      solve_penalized_continuation)

__version__ = "0.1.0"
