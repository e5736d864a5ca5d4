"""
Gaussian-mixture diffusion testbed.

Categorical models get a block-product mixture: group m owns a block of
``block_dim`` coordinates and each of its values a block mean; a world's
component is the concatenation of its values' block means, with weight the
product of per-group weights. Under the VP forward process every block
stays an independent mixture, so atoms of different groups are exactly
conditionally independent given x_t.

Taxonomy models get one component per world in a single block.
"""

import logging

import numpy as np
from scipy.special import logsumexp

from core.base_testbed import BaseTestbed
from core.calculus import AtomicInputs
from core.errors import ModelError, UnsatisfiableFormulaError
from core.formula import evaluate_world
from core.schedule import VPSchedule

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


def grid_means(n, dim, spacing):
    """``n`` points on a centered square grid in ``dim`` dimensions."""
    side = max(1, int(np.ceil(n ** (1.0 / dim) - 1e-9)))
    index = np.array(np.unravel_index(np.arange(n), (side,) * dim), dtype=float).T
    return spacing * (index - (side - 1) / 2.0)


def _masked_logsumexp(logits, mask):
    with np.errstate(divide='ignore'):
        return logsumexp(np.where(mask, logits, -np.inf), axis=-1)


class GMMDiffusion(BaseTestbed):
    """Analytic VP diffusion over a Gaussian mixture with one component per world."""

    def __init__(self, model, config=None, schedule=None):
        super().__init__('gmm', model, config)
        self.schedule = schedule or VPSchedule.from_config(self.config)
        self.block_dim = int(self.config.get('block_dim', 2))
        self.spacing = float(self.config.get('spacing', 1.0))
        self.variance = float(self.config.get('variance', 0.25))
        if self.block_dim < 1 or self.variance <= 0:
            raise ModelError("block_dim must be >= 1 and variance positive")

        self.group_log_weights, self.world_log_weights = self.resolve_weights()
        self.truth = self.worlds.truth_matrix()

        if model.kind == 'categorical':
            explicit = self.config.get('means')
            self.blocks = []
            self.group_means = []
            for m, group in enumerate(model.groups):
                start = m * self.block_dim
                self.blocks.append(slice(start, start + self.block_dim))
                if explicit is not None:
                    means = np.asarray(explicit[m], dtype=float).reshape(len(group.atoms), self.block_dim)
                else:
                    means = grid_means(len(group.atoms), self.block_dim, self.spacing)
                self.group_means.append(means)
            self.dim = self.block_dim * len(model.groups)
            self.world_means = np.array([
                np.concatenate([self.group_means[m][v] for m, v in enumerate(w.values)])
                for w in self.worlds
            ])
        else:
            self.blocks = [slice(0, self.block_dim)]
            self.dim = self.block_dim
            explicit = self.config.get('means')
            if explicit is not None:
                self.world_means = np.asarray(explicit, dtype=float).reshape(self.n_worlds, self.dim)
            else:
                self.world_means = grid_means(self.n_worlds, self.dim, self.spacing)

        self.logger.info(f"GMM testbed: {self.n_worlds} components in {self.dim} dimensions")

    @property
    def T(self):
        return self.schedule.T

    def _marginal(self, t):
        """(alpha_t, per-coordinate variance of every noised component)"""
        a = float(self.schedule.alpha(t))
        return a, a * a * self.variance + float(self.schedule.noise_variance(t))

    def _check(self, t, x):
        if not 0.0 < t <= self.T:
            raise ValueError(f"t must lie in (0, {self.T}], got {t}")
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"State must have trailing dimension {self.dim}, got shape {x.shape}")
        return x

    def _gaussian_terms(self, means, log_weights, t, x):
        """Component log-joint (..., K) and its gradient in x (..., K, k)."""
        a, v = self._marginal(t)
        diff = x[..., None, :] - a * means
        k = means.shape[-1]
        logits = log_weights - 0.5 * np.sum(diff ** 2, axis=-1) / v - 0.5 * k * (_LOG_2PI + np.log(v))
        return logits, -diff / v

    def world_terms(self, t, x):
        return self._gaussian_terms(self.world_means, self.world_log_weights, t, x)

    # -- atomic quantities ------------------------------------------------

    def atomic_inputs(self, t, x):
        """
        Exact posteriors and score differences of every atom at (t, x).

        Categorical atoms only touch their own group's block. Taxonomy
        atoms sum over the worlds in their event.
        """
        x = self._check(t, x)
        batch = x.shape[:-1]
        n_atoms = len(self.model.registry)
        log_post = np.empty(batch + (n_atoms,))
        log_comp = np.empty(batch + (n_atoms,))
        scores = np.zeros(batch + (n_atoms, self.dim))
        uncond = np.zeros(batch + (self.dim,))

        if self.model.kind == 'categorical':
            for m, group in enumerate(self.model.groups):
                block = self.blocks[m]
                logits, grads = self._gaussian_terms(
                    self.group_means[m], self.group_log_weights[m], t, x[..., block])
                total = logsumexp(logits, axis=-1)
                resp = np.exp(logits - total[..., None])
                mix = np.einsum('...k,...kb->...b', resp, grads)
                uncond[..., block] = mix
                for k, atom in enumerate(group.atoms):
                    others = np.arange(len(group.atoms)) != k
                    log_post[..., atom] = logits[..., k] - total
                    log_comp[..., atom] = _masked_logsumexp(logits, others) - total
                    scores[..., atom, block] = grads[..., k, :] - mix
        else:
            logits, grads = self.world_terms(t, x)
            total = logsumexp(logits, axis=-1)
            resp = np.exp(logits - total[..., None])
            mix = np.einsum('...w,...wd->...d', resp, grads)
            uncond[...] = mix
            for atom in range(n_atoms):
                event = self.truth[:, atom]
                inside = _masked_logsumexp(logits, event)
                log_post[..., atom] = inside - total
                log_comp[..., atom] = _masked_logsumexp(logits, ~event) - total
                cond = np.exp(np.where(event, logits, -np.inf) - inside[..., None])
                scores[..., atom, :] = np.einsum('...w,...wd->...d', cond, grads) - mix

        return AtomicInputs(
            posteriors=np.exp(log_post), scores=scores, uncond_score=uncond, t=t,
            log_posteriors=log_post, log_complements=log_comp)

    def score(self, t, x):
        """Unconditional score grad log p_t(x), summed over all worlds."""
        x = self._check(t, x)
        logits, grads = self.world_terms(t, x)
        resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        return np.einsum('...w,...wd->...d', resp, grads)

    def class_score(self, t, x, atom):
        """Conditional score grad log p_t(x | atom)."""
        x = self._check(t, x)
        logits, grads = self.world_terms(t, x)
        event = self.truth[:, atom]
        inside = _masked_logsumexp(logits, event)
        cond = np.exp(np.where(event, logits, -np.inf) - inside[..., None])
        return np.einsum('...w,...wd->...d', cond, grads)

    def log_density(self, t, x):
        x = np.asarray(x, dtype=float)
        logits, _ = self.world_terms(t, x)
        return logsumexp(logits, axis=-1)

    def atom_prior(self, atom):
        """p_0(atom)"""
        return float(np.exp(_masked_logsumexp(self.world_log_weights, self.truth[:, atom])))

    # -- oracle -----------------------------------------------------------

    def formula_oracle(self, f, t, x):
        """
        Posterior and logical score of ``f`` by summing over every world.

        Raises:
            UnsatisfiableFormulaError: No world satisfies ``f``
        """
        x = self._check(t, x)
        mask = np.array([evaluate_world(f, w) for w in self.worlds], dtype=bool)
        if not mask.any():
            raise UnsatisfiableFormulaError("Oracle score undefined: formula has no satisfying world")
        logits, grads = self.world_terms(t, x)
        total = logsumexp(logits, axis=-1)
        inside = _masked_logsumexp(logits, mask)
        resp = np.exp(logits - total[..., None])
        cond = np.exp(np.where(mask, logits, -np.inf) - inside[..., None])
        score = np.einsum('...w,...wd->...d', cond - resp, grads)
        return np.exp(inside - total), score

    # -- terminal samples ---------------------------------------------------

    def sample_terminal(self, n, rng):
        """Draw ``n`` clean samples; returns (samples, world indices)."""
        probs = np.exp(self.world_log_weights)
        index = rng.choice(self.n_worlds, size=n, p=probs / probs.sum())
        noise = rng.standard_normal((n, self.dim)) * np.sqrt(self.variance)
        return self.world_means[index] + noise, index

    def label_indices(self, samples):
        """MAP world index of each clean sample under the t = 0 mixture."""
        samples = np.asarray(samples, dtype=float)
        logits, _ = self._gaussian_terms(self.world_means, self.world_log_weights, 0.0, samples)
        return np.argmax(logits, axis=-1)

    def label(self, samples):
        return [self.worlds[int(i)] for i in self.label_indices(samples)]


def gmm_atomic_inputs(g: GMMDiffusion, t, x) -> AtomicInputs:
    return g.atomic_inputs(t, x)


def gmm_formula_oracle(g: GMMDiffusion, f, t, x):
    return g.formula_oracle(f, t, x)
