"""
Base testbed class for LogiGuide testbed plugins.
Defines the interface all analytic diffusion testbeds must implement.
"""

import logging
from abc import ABC, abstractmethod

import numpy as np

from core.errors import ModelError
from core.model import enumerate_worlds

logger = logging.getLogger(__name__)


class BaseTestbed(ABC):
    """
    Base class for all testbed plugins.

    A testbed wraps a distribution model with a diffusion process whose
    atomic quantities and formula posteriors are known exactly. Each
    testbed must implement atomic_inputs(), formula_oracle() and label().
    """

    def __init__(self, name, model, config=None):
        """
        Initialize the testbed.

        Args:
            name (str): Testbed name (e.g., 'gmm', 'discrete')
            model: CategoricalModel or TaxonomyModel
            config (dict): Testbed configuration (the model file's "testbed" object)
        """
        self.name = name
        self.model = model
        self.config = dict(config or {})
        self.logger = logging.getLogger(f"logiguide.{name}")
        self.worlds = enumerate_worlds(model, cap=self.config.get('world_cap', 1_000_000))

    @property
    def seed(self):
        """Construction seed (random weights)"""
        return int(self.config.get('seed', 0))

    @property
    def n_worlds(self):
        return len(self.worlds)

    @abstractmethod
    def atomic_inputs(self, t, x):
        """
        Exact per-atom quantities at time t and state x.

        Returns:
            AtomicInputs or DiscreteAtomicInputs
        """
        pass

    @abstractmethod
    def formula_oracle(self, f, t, x):
        """
        Brute-force reference for a formula, by summing over worlds.

        Returns:
            tuple: (posterior, score or transition row)
        """
        pass

    @abstractmethod
    def label(self, samples):
        """
        Map terminal samples to worlds.

        Returns:
            list: One World per sample
        """
        pass

    def resolve_weights(self):
        """
        Terminal weights from the "weights" setting: "uniform", "random"
        (Dirichlet(1), seeded) or explicit values. Categorical models take
        one list per group (a list of lists, or a dict keyed by group name)
        and factorize across groups; taxonomies take one weight per world
        (a list in world order, or a dict keyed by node name).

        Returns:
            tuple: (per-group log weights or None, per-world log weights)

        Raises:
            ModelError: Wrong length or non-positive weights
        """
        setting = self.config.get('weights', 'uniform')
        rng = np.random.default_rng(self.seed)

        def normalize(values, n, what):
            values = np.asarray(values, dtype=float)
            if values.shape != (n,) or np.any(values <= 0) or not np.all(np.isfinite(values)):
                raise ModelError(f"{what} needs {n} positive weights, got {values.tolist()}")
            return np.log(values / values.sum())

        def pick(n, explicit, what):
            if setting == 'random':
                return normalize(rng.dirichlet(np.ones(n)), n, what)
            if setting == 'uniform' or explicit is None or explicit == 'uniform':
                # groups left out of an explicit mapping stay uniform
                return np.full(n, -np.log(n))
            return normalize(explicit, n, what)

        if isinstance(setting, str) and setting not in ('uniform', 'random'):
            raise ModelError(f"Unknown weights setting '{setting}'")

        if self.model.kind == 'categorical':
            group_log_weights = []
            for m, group in enumerate(self.model.groups):
                explicit = None
                if isinstance(setting, dict):
                    explicit = setting.get(group.name)
                elif isinstance(setting, list):
                    explicit = setting[m] if m < len(setting) else None
                group_log_weights.append(pick(len(group.atoms), explicit, f"Group '{group.name}'"))
            world_log_weights = np.array([
                sum(group_log_weights[m][v] for m, v in enumerate(w.values)) for w in self.worlds
            ])
            return group_log_weights, world_log_weights

        explicit = setting
        if isinstance(setting, dict):
            explicit = [setting.get(w.label, 0.0) for w in self.worlds]
        return None, pick(self.n_worlds, explicit, "Taxonomy")

    def describe(self):
        """
        Summary for run manifests.

        Returns:
            dict: Testbed name, model kind and construction parameters
        """
        return {
            'testbed': self.name,
            'model': self.model.name,
            'kind': self.model.kind,
            'worlds': self.n_worlds,
            'config': self.config,
        }
