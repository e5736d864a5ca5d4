"""
Finite-state discrete diffusion testbed.

States are the feasible worlds of the model. The forward process applies a
uniform-flip kernel Q = (1 - beta) I + beta U for ``steps`` steps: per
coordinate for categorical models (Q is the Kronecker product of the group
kernels, which keeps atoms of different groups conditionally independent
given the current state), on whole worlds for taxonomies.

Reverse kernels at step k (x_k -> x_{k-1}):

    tau_k(y | x)      = p_{k-1}(y) Q[y, x] / p_k(x)
    tau_k(y | c, x)   = p^c_{k-1}(y) Q[y, x] / p^c_k(x)
    p(c | x_k)        = p_0(c) p^c_k(x) / p_k(x)

with p^c the forward marginals started from p_0 restricted to c.
"""

import logging
from functools import reduce

import numpy as np

from core.base_testbed import BaseTestbed
from core.calculus import DiscreteAtomicInputs
from core.errors import CapExceededError, ModelError, UnsatisfiableFormulaError
from core.formula import evaluate_world

logger = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 4096


def flip_kernel(n, rate):
    """Row-stochastic (1 - rate) I + rate / n on ``n`` states."""
    return (1.0 - rate) * np.eye(n) + rate / n * np.ones((n, n))


class DiscreteDiffusion(BaseTestbed):
    """Discrete-state diffusion whose reverse kernels are computed exactly."""

    def __init__(self, model, config=None):
        super().__init__('discrete', model, config)
        self.steps = int(self.config.get('steps', 5))
        self.flip_rate = float(self.config.get('flip_rate', 0.15))
        if self.steps < 1:
            raise ModelError(f"Discrete testbed needs at least one step, got {self.steps}")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ModelError(f"flip_rate must lie in [0, 1], got {self.flip_rate}")
        cap = int(self.config.get('state_cap', DEFAULT_STATE_CAP))
        if self.n_worlds > cap:
            raise CapExceededError(f"{self.n_worlds} states exceed the discrete testbed cap of {cap}")

        _, log_weights = self.resolve_weights()
        self.p0 = np.exp(log_weights)
        self.p0 /= self.p0.sum()
        self.truth = self.worlds.truth_matrix()

        if model.kind == 'categorical':
            kernels = [flip_kernel(len(g.atoms), self.flip_rate) for g in model.groups]
            self.kernel = reduce(np.kron, kernels)
        else:
            self.kernel = flip_kernel(self.n_worlds, self.flip_rate)

        self.marginals = self._propagate(self.p0)
        n_atoms = len(model.registry)
        self.atom_priors = np.array([self.p0[self.truth[:, a]].sum() for a in range(n_atoms)])
        self.atom_marginals = [
            self._propagate(np.where(self.truth[:, a], self.p0, 0.0) / self.atom_priors[a])
            for a in range(n_atoms)
        ]
        self.logger.info(f"Discrete testbed: {self.n_worlds} states, {self.steps} steps, "
                         f"flip rate {self.flip_rate}")

    @property
    def n_states(self):
        return self.n_worlds

    def _propagate(self, p):
        """Forward marginals p_0 .. p_K as a (K + 1, S) array."""
        out = [p]
        for _ in range(self.steps):
            out.append(out[-1] @ self.kernel)
        return np.array(out)

    def _check(self, step, state):
        if not 1 <= step <= self.steps:
            raise ValueError(f"step must lie in 1..{self.steps}, got {step}")
        if not 0 <= state < self.n_states:
            raise ValueError(f"state must lie in 0..{self.n_states - 1}, got {state}")

    def _reverse_row(self, marginals, step, state):
        column = self.kernel[:, state]
        mass = marginals[step, state]
        if mass <= 0.0:
            return None
        return marginals[step - 1] * column / mass

    def atomic_inputs(self, step, state):
        """Exact reverse kernels and atom posteriors at (step, state)."""
        self._check(step, state)
        uncond = self._reverse_row(self.marginals, step, state)
        if uncond is None:
            raise ModelError(f"State {state} has zero probability at step {step}")
        rows = []
        posteriors = []
        for a, marginals in enumerate(self.atom_marginals):
            row = self._reverse_row(marginals, step, state)
            posteriors.append(self.atom_priors[a] * marginals[step, state] / self.marginals[step, state])
            # zero-posterior atoms get the unconditional row as a placeholder
            rows.append(uncond if row is None else row)
        return DiscreteAtomicInputs(uncond, np.array(rows), np.array(posteriors))

    def formula_oracle(self, f, step, state):
        """
        p(phi | x_k) and p(x_{k-1} | phi, x_k) from the joint table
        p(x_0, x_{k-1}, x_k), summed over the satisfying x_0.

        Raises:
            UnsatisfiableFormulaError: Formula has zero prior probability, or
                zero posterior at (step, state)
            ModelError: State is unreachable at this step
        """
        self._check(step, state)
        mask = np.array([evaluate_world(f, w) for w in self.worlds], dtype=bool)
        if self.p0[mask].sum() <= 0.0:
            raise UnsatisfiableFormulaError("Formula has zero probability under the terminal distribution")
        carry = np.linalg.matrix_power(self.kernel, step - 1)
        joint = self.p0[:, None] * carry * self.kernel[:, state][None, :]
        total = joint.sum()
        if total <= 0.0:
            raise ModelError(f"State {state} has zero probability at step {step}")
        satisfying = joint[mask].sum(axis=0)
        if satisfying.sum() <= 0.0:
            raise UnsatisfiableFormulaError(
                f"Formula has zero posterior at step {step}, state {state}", step=step, state=state)
        return satisfying.sum() / total, satisfying / satisfying.sum()

    def terminal_distribution(self, f=None):
        """p_0, or p_0(. | f) when a formula is given."""
        if f is None:
            return self.p0.copy()
        mask = np.array([evaluate_world(f, w) for w in self.worlds], dtype=bool)
        restricted = np.where(mask, self.p0, 0.0)
        if restricted.sum() <= 0.0:
            raise UnsatisfiableFormulaError("Formula has zero probability under the terminal distribution")
        return restricted / restricted.sum()

    def label(self, samples):
        return [self.worlds[int(s)] for s in np.asarray(samples).ravel()]


def discrete_atomic_inputs(dd: DiscreteDiffusion, t_step, x) -> DiscreteAtomicInputs:
    return dd.atomic_inputs(t_step, x)


def discrete_formula_oracle(dd: DiscreteDiffusion, f, t_step, x):
    return dd.formula_oracle(f, t_step, x)
