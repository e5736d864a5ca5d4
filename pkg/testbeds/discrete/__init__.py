"""
Finite-state discrete diffusion testbed plugin for LogiGuide.
"""

from .diffusion import DiscreteDiffusion, discrete_atomic_inputs, discrete_formula_oracle

__all__ = ['DiscreteDiffusion', 'discrete_atomic_inputs', 'discrete_formula_oracle']
