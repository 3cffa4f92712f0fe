"""Python access to the vamp core library and command line."""

from ._vamp import dataset_sizes, harmonic_mean, kl_diag_gaussians, run_cli

__all__ = ["dataset_sizes", "harmonic_mean", "kl_diag_gaussians", "run_cli"]
