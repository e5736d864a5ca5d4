"""
Analytic diffusion testbeds for LogiGuide.
"""

from testbeds.discrete import DiscreteDiffusion
from testbeds.gmm import GMMDiffusion

TESTBEDS = {
    'gmm': GMMDiffusion,
    'discrete': DiscreteDiffusion,
}


def get_testbed(name, model, config=None):
    """
    Build a testbed by name.

    Args:
        name (str): 'gmm' or 'discrete'
        model: CategoricalModel or TaxonomyModel
        config (dict): Testbed configuration

    Returns:
        BaseTestbed: Testbed instance
    """
    if name not in TESTBEDS:
        raise ValueError(f"Unknown testbed '{name}' (available: {', '.join(TESTBEDS)})")
    return TESTBEDS[name](model, config)
