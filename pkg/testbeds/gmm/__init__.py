"""
Gaussian-mixture VP diffusion testbed plugin for LogiGuide.
"""

from .diffusion import GMMDiffusion, gmm_atomic_inputs, gmm_formula_oracle, grid_means

__all__ = ['GMMDiffusion', 'gmm_atomic_inputs', 'gmm_formula_oracle', 'grid_means']
