"""Inverse scattering with internal sources via RKHS amplitude regression."""

__version__ = "0.1.0"

from .forward import (ScatteringData, add_noise, born_amplitude, coupled_dipole_solve,
                      full_wave_amplitude)
from .greens import greens, hankel_h0_first_kind, singular_cell_integral
from .harness import ExperimentConfig, render_slice, run_pipeline, sweep
from .inversion import (RKHSReconstructor, ReconstructedField, assemble_slices,
                        baseline_linear_inversion, chi_squared, delta_error, reconstruct,
                        reconstruct_fd_oracle)
from .io import read_array, write_array
from .rkhs import (RepresenterModel, SobolevKernelRegressor, SobolevKernelSpec, gram_matrix,
                   kernel_eval, kernel_laplacian, representer_fit, surrogate_eval,
                   surrogate_laplacian)
from .scene import (DetectorSet, SourceSet, SusceptibilityField, VoxelGrid, l_shape_detectors,
                    make_grid, place_sources_random, three_ball_phantom)

__all__ = [
    "ScatteringData", "add_noise", "born_amplitude", "coupled_dipole_solve",
    "full_wave_amplitude", "greens", "hankel_h0_first_kind", "singular_cell_integral",
    "ExperimentConfig", "render_slice", "run_pipeline", "sweep",
    "RKHSReconstructor", "ReconstructedField", "assemble_slices", "baseline_linear_inversion",
    "chi_squared", "delta_error", "reconstruct", "reconstruct_fd_oracle",
    "read_array", "write_array",
    "RepresenterModel", "SobolevKernelRegressor", "SobolevKernelSpec", "gram_matrix",
    "kernel_eval", "kernel_laplacian", "representer_fit", "surrogate_eval", "surrogate_laplacian",
    "DetectorSet", "SourceSet", "SusceptibilityField", "VoxelGrid", "l_shape_detectors",
    "make_grid", "place_sources_random", "three_ball_phantom",
]
