"""
Guided sampling module for LogiGuide.

Continuous sampling integrates the guided reverse VP SDE with
Euler-Maruyama; discrete sampling runs ancestral steps through composed
transition kernels. Also home to the pieces a sampler needs when only
conditional scores are available: repulsive atomic guidance, a posterior
estimator built from denoising errors, and the unconditional score
recovered from conditional ones.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.special import softmax

from core.calculus import (
    AtomicInputs, EvalSettings, atomic_coefficients, eval_circuit, eval_transition
)
from core.circuit import CircuitNode
from core.errors import DivergenceError, EstimatorError, InconsistentInputsError, ModelError, TransitionError

logger = logging.getLogger(__name__)

POSTERIOR_SOURCES = ('exact', 'estimated')
GUIDANCE_SCALINGS = ('formula', 'atom')


@dataclass(frozen=True)
class SamplerConfig:
    """
    Sampler settings.

    ``w`` scales the logical score; with ``guidance_scaling="atom"`` it is
    applied to every atomic score before composition instead. ``repulsive``
    replaces each atomic score with its repulsive form, ``w_not`` weighting
    the push away from the most probable competing value.
    """
    steps: int = 500
    t_min: float = 1e-3
    T: float = 1.0
    w: float = 1.0
    w_not: float = 1.0
    repulsive: bool = False
    posterior_source: str = 'exact'
    guidance_scaling: str = 'formula'
    or_weighting: str = 'exact'
    epsilon: float = 1e-6
    score_cap: Optional[float] = 3.0
    exact: bool = False
    estimator_draws: int = 64
    estimator_lag: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 < self.t_min < self.T:
            raise ValueError(f"Need 0 < t_min < T, got t_min={self.t_min}, T={self.T}")
        for name in ('w', 'w_not'):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")
        if self.posterior_source not in POSTERIOR_SOURCES:
            raise ValueError(f"posterior_source must be one of {POSTERIOR_SOURCES}")
        if self.guidance_scaling not in GUIDANCE_SCALINGS:
            raise ValueError(f"guidance_scaling must be one of {GUIDANCE_SCALINGS}")
        if self.estimator_draws < 1:
            raise ValueError("estimator_draws must be >= 1")
        if not self.estimator_lag > 0:
            raise ValueError(f"estimator_lag must be positive, got {self.estimator_lag}")

    @classmethod
    def from_config(cls, config: dict, **overrides) -> 'SamplerConfig':
        """Build from the ``sampler`` and ``calculus`` sections of the global config."""
        config = config or {}
        sampler = config.get('sampler', {})
        calculus = config.get('calculus', {})
        values = {k: sampler[k] for k in (
            'steps', 't_min', 'w', 'w_not', 'guidance_scaling', 'estimator_draws', 'estimator_lag'
        ) if k in sampler}
        if 'epsilon' in calculus:
            values['epsilon'] = calculus['epsilon']
        if 'score_cap' in calculus:
            values['score_cap'] = calculus['score_cap']
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def eval_settings(self) -> EvalSettings:
        return EvalSettings(epsilon=self.epsilon, score_cap=self.score_cap,
                            or_weighting=self.or_weighting, exact=self.exact)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SampleBatch:
    """Generated samples with the settings that produced them."""
    samples: np.ndarray
    config: SamplerConfig
    seed: int
    worlds: List = field(default_factory=list)
    flags: frozenset = frozenset()

    def __len__(self):
        return len(self.samples)


def thread_count() -> int:
    """Worker threads, capped by LOGIGUIDE_THREADS."""
    value = os.environ.get('LOGIGUIDE_THREADS')
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning(f"Ignoring invalid LOGIGUIDE_THREADS={value!r}")
    return os.cpu_count() or 1


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Per-sample random stream, independent of batching."""
    return np.random.default_rng([seed, index])


# ---------------------------------------------------------------------------
# Score-level helpers
# ---------------------------------------------------------------------------

def _group_atoms(model, target):
    if model.kind != 'categorical':
        raise ModelError("Repulsive guidance needs categorical groups")
    group = model.groups[model.group_of(target)]
    others = [a for a in group.atoms if a != target]
    if not others:
        raise ModelError(f"Atom '{model.registry.name(target)}' is alone in its group; nothing to repel")
    return np.array(sorted(others))


def repulsive_atomic_score(inputs: AtomicInputs, target: int, model, cfg: SamplerConfig) -> np.ndarray:
    """
    Guide towards ``target`` and away from its strongest competitor.

    The competitor B is the same-group atom with the largest posterior
    (lowest id on ties); the result is
    ``w s_A - w_not (pi_B / (1 - pi_B)) s_B``, with pi_B clamped to
    ``[eps, 1 - eps]``.
    """
    others = _group_atoms(model, target)
    posts = inputs.posteriors[..., others]
    pick = others[np.argmax(posts, axis=-1)]
    lp = np.take_along_axis(inputs.log_posteriors, np.asarray(pick)[..., None], axis=-1)[..., 0]
    lq = np.take_along_axis(inputs.log_complements, np.asarray(pick)[..., None], axis=-1)[..., 0]
    eps = 0.0 if cfg.exact else cfg.epsilon
    if eps > 0:
        log_eps, log_hi = np.log(eps), np.log1p(-eps)
        low, high = lp < log_eps, lq < log_eps
        lp = np.where(low, log_eps, np.where(high, log_hi, lp))
        lq = np.where(low, log_hi, np.where(high, log_eps, lq))
    ratio = np.exp(lp - lq)
    s_b = np.take_along_axis(inputs.scores, np.asarray(pick)[..., None, None], axis=-2)[..., 0, :]
    return cfg.w * inputs.scores[..., target, :] - cfg.w_not * ratio[..., None] * s_b


def uncond_score_from_conditionals(class_scores: np.ndarray, posteriors: np.ndarray,
                                   tolerance: float = 1e-8) -> np.ndarray:
    """
    grad log p(x) = sum_i p(c_i | x) grad log p(x | c_i) over a partition.

    Args:
        class_scores: (..., k, d) conditional scores
        posteriors: (..., k) class posteriors

    Raises:
        InconsistentInputsError: Posteriors do not sum to 1
    """
    posteriors = np.asarray(posteriors, dtype=float)
    if np.any(np.abs(posteriors.sum(axis=-1) - 1.0) > tolerance):
        raise InconsistentInputsError("Class posteriors must sum to 1")
    return np.einsum('...k,...kd->...d', posteriors, np.asarray(class_scores, dtype=float))


@dataclass
class EstimatedPosteriors:
    """Per-atom posteriors estimated from conditional scores."""
    posteriors: np.ndarray
    log_posteriors: np.ndarray

    @property
    def odds(self) -> np.ndarray:
        """p / (1 - p)"""
        return self.posteriors / (1.0 - self.posteriors)


def posterior_odds(estimate: EstimatedPosteriors) -> np.ndarray:
    return estimate.odds


def _component_variance(g, t, x, atom, block, h=1e-3):
    """Per-coordinate width of the class component at (t, x), from score curvature."""
    j = block.start
    step = np.zeros(g.dim)
    step[j] = h
    slope = (g.class_score(t, x + step, atom)[..., j] - g.class_score(t, x - step, atom)[..., j]) / (2 * h)
    if np.any(slope >= 0):
        raise EstimatorError(f"Conditional score of atom {atom} is not contracting at t={t}")
    return -1.0 / slope


def estimate_posteriors_from_scores(g, t, x, draws: int = 64, lag: float = 0.25,
                                    seed: int = 0, epsilon: float = 1e-6) -> EstimatedPosteriors:
    """
    Class posteriors from denoising errors, using only conditional scores.

    For each group the state is re-noised from t to u = min(t + lag, T),
    ``x_u = r x + s eps`` with r = alpha_u / alpha_t and s^2 = 1 - r^2.
    Every value c predicts the injected noise from its conditional score,
    ``eps_c = -s grad log p_u(x_u | c)``, and the estimate is

        softmax_c( -lam_c * mean_k |eps_k - eps_c(x_u,k)|^2 )

    over ``draws`` independent noise draws shared by all values of the
    group. ``lam_c = v_u^2 / (2 s^2 r^2 v_t)`` puts the error gap on the
    log-likelihood scale, v being the local component width read off the
    score's curvature. Values are treated as equally likely a priori.

    At the end of the schedule there is no room to re-noise and every
    group falls back to the uniform estimate.
    """
    model = g.model
    if model.kind != 'categorical':
        raise EstimatorError("Score-based posterior estimation needs a categorical model")
    if draws < 1:
        raise EstimatorError(f"Need at least one noise draw, got {draws}")
    x = np.asarray(x, dtype=float)
    u = min(t + lag, g.T)
    sched = g.schedule
    r = float(sched.alpha(u)) / float(sched.alpha(t))
    s2 = 1.0 - r * r
    batch = x.shape[:-1]
    log_post = np.empty(batch + (len(model.registry),))

    if s2 < 1e-8:
        logger.debug(f"No room to re-noise at t={t}; using uniform posteriors")
        for group in model.groups:
            log_post[..., list(group.atoms)] = -np.log(len(group.atoms))
        return EstimatedPosteriors(np.exp(log_post), log_post)

    s = np.sqrt(s2)
    rng = np.random.default_rng(seed)
    for m, group in enumerate(model.groups):
        block = g.blocks[m]
        eps = rng.standard_normal((draws,) + batch + (g.dim,))
        x_u = r * x + s * eps
        logits = []
        for atom in group.atoms:
            v_t = _component_variance(g, t, x, atom, block)
            v_u = r * r * v_t + s2
            lam = v_u ** 2 / (2.0 * s2 * r * r * v_t)
            eps_hat = -s * g.class_score(u, x_u, atom)[..., block]
            error = np.mean(np.sum((eps[..., block] - eps_hat) ** 2, axis=-1), axis=0)
            logits.append(-lam * error)
        probs = softmax(np.stack(logits, axis=-1), axis=-1)
        probs = np.clip(probs, epsilon, 1.0 - epsilon)
        for k, atom in enumerate(group.atoms):
            log_post[..., atom] = np.log(probs[..., k])

    return EstimatedPosteriors(np.exp(log_post), log_post)


def estimated_atomic_inputs(g, t, x, cfg: SamplerConfig, seed: int) -> AtomicInputs:
    """
    Atomic inputs rebuilt from conditional scores and estimated posteriors.

    The unconditional score is the posterior-weighted sum of the first
    group's conditional scores.
    """
    estimate = estimate_posteriors_from_scores(
        g, t, x, draws=cfg.estimator_draws, lag=cfg.estimator_lag, seed=seed, epsilon=cfg.epsilon)
    n_atoms = len(g.model.registry)
    class_scores = np.stack([g.class_score(t, x, a) for a in range(n_atoms)], axis=-2)
    first = list(g.model.groups[0].atoms)
    weights = estimate.posteriors[..., first]
    weights = weights / weights.sum(axis=-1, keepdims=True)
    uncond = uncond_score_from_conditionals(class_scores[..., first, :], weights)
    return AtomicInputs(
        posteriors=estimate.posteriors,
        scores=class_scores - uncond[..., None, :],
        uncond_score=uncond, t=t,
        log_posteriors=estimate.log_posteriors,
        log_complements=np.log1p(-estimate.posteriors))


# ---------------------------------------------------------------------------
# Continuous sampling
# ---------------------------------------------------------------------------

def guided_score(g, c: Optional[CircuitNode], t, x, cfg: SamplerConfig, step_seed=0):
    """Composite score s_0 + w s_phi at a batch of states; also returns flags."""
    if cfg.posterior_source == 'exact':
        inputs = g.atomic_inputs(t, x)
    else:
        inputs = estimated_atomic_inputs(g, t, x, cfg, step_seed)
    uncond = inputs.uncond_score
    if c is None or cfg.w == 0.0:
        return uncond, frozenset()

    if cfg.repulsive:
        scores = np.stack([
            repulsive_atomic_score(inputs, a, g.model, replace(cfg, w=1.0))
            if len(g.model.groups[g.model.group_of(a)].atoms) > 1 else inputs.scores[..., a, :]
            for a in range(inputs.n_atoms)
        ], axis=-2)
        inputs = inputs.with_scores(scores)

    settings = cfg.eval_settings()
    if cfg.guidance_scaling == 'atom':
        out = eval_circuit(c, inputs.with_scores(cfg.w * inputs.scores), settings)
        return uncond + out.score, out.flags
    out = eval_circuit(c, inputs, settings)
    return uncond + cfg.w * out.score, out.flags


def _integrate(g, c, cfg, x, noise):
    grid = np.linspace(cfg.T, cfg.t_min, cfg.steps + 1)
    flags = set()
    for k in range(cfg.steps):
        t, h = grid[k], grid[k] - grid[k + 1]
        beta = float(g.schedule.beta(t))
        score, step_flags = guided_score(g, c, t, x, cfg, step_seed=[cfg.seed, k])
        flags |= step_flags
        x = x + h * (0.5 * beta * x + beta * score) + np.sqrt(beta * h) * noise[:, k, :]
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"Non-finite state after step {k}", step=k)
    return x, flags


def sample_continuous(g, c: Optional[CircuitNode], cfg: SamplerConfig, n: int) -> SampleBatch:
    """
    Draw ``n`` guided samples from the GMM testbed.

    Every sample owns the stream ``default_rng([seed, i])`` and draws its
    start point and whole noise path from it up front, so the split into
    worker chunks never changes the result. ``c=None`` samples
    unconditionally.

    Raises:
        DivergenceError: Non-finite state (carries the step index)
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if cfg.T != g.T:
        cfg = replace(cfg, T=g.T)
    starts = np.empty((n, g.dim))
    noise = np.empty((n, cfg.steps, g.dim))
    for i in range(n):
        rng = sample_rng(cfg.seed, i)
        starts[i] = rng.standard_normal(g.dim)
        noise[i] = rng.standard_normal((cfg.steps, g.dim))

    workers = min(thread_count(), n)
    chunks = np.array_split(np.arange(n), workers)
    logger.info(f"Sampling {n} continuous samples, {cfg.steps} steps, w={cfg.w}, "
                f"{len(chunks)} worker(s)")

    def run(index):
        return _integrate(g, c, cfg, starts[index], noise[index])

    if workers == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))

    samples = np.concatenate([r[0] for r in results])
    flags = frozenset().union(*(r[1] for r in results))
    if flags:
        logger.warning(f"Sampling raised evaluation flags: {sorted(flags)}")
    batch = SampleBatch(samples, cfg, cfg.seed, worlds=g.label(samples), flags=flags)
    logger.info(f"Sampling finished: {n} samples")
    return batch


# ---------------------------------------------------------------------------
# Discrete sampling
# ---------------------------------------------------------------------------

def composed_kernels(dd, c: Optional[CircuitNode], cfg: SamplerConfig):
    """
    Composed reverse kernels for every (step, state).

    Returns:
        tuple: (start distribution over x_K, rows[k-1][x] = tau_k(. | phi, x), flags)
    """
    settings = cfg.eval_settings()
    S, K = dd.n_states, dd.steps
    rows = np.empty((K, S, S))
    start_posteriors = np.empty(S)
    flags = set()
    for k in range(1, K + 1):
        for x in range(S):
            inputs = dd.atomic_inputs(k, x)
            if c is None:
                rows[k - 1, x] = inputs.uncond_row
                start_posteriors[x] = 1.0
                continue
            out = eval_transition(c, inputs, settings)
            flags |= out.flags
            rows[k - 1, x] = out.row
            if k == K:
                start_posteriors[x] = out.posterior
    start = dd.marginals[K] * start_posteriors
    if start.sum() <= 0:
        raise TransitionError("Formula has zero posterior at every starting state")
    return start / start.sum(), rows, frozenset(flags)


def sample_discrete(dd, c: Optional[CircuitNode], cfg: SamplerConfig, n: int) -> SampleBatch:
    """
    Ancestral sampling through composed kernels.

    x_K is drawn from p_K(x) p(phi | x) (the exact guided start), then each
    step draws from the composed row. Streams are per sample, as in
    ``sample_continuous``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    start, rows, flags = composed_kernels(dd, c, cfg)
    logger.info(f"Sampling {n} discrete samples over {dd.n_states} states, {dd.steps} steps")
    states = np.empty(n, dtype=int)
    for i in range(n):
        rng = sample_rng(cfg.seed, i)
        x = int(rng.choice(dd.n_states, p=start))
        for k in range(dd.steps, 0, -1):
            row = rows[k - 1, x]
            x = int(rng.choice(dd.n_states, p=row / row.sum()))
        states[i] = x
    if flags:
        logger.warning(f"Discrete sampling raised flags: {sorted(flags)}")
    return SampleBatch(states, cfg, cfg.seed, worlds=dd.label(states), flags=flags)


def guidance_coefficients(g, c: CircuitNode, t, x, cfg: SamplerConfig):
    """Atomic coefficients of the logical score at (t, x), for diagnostics."""
    return atomic_coefficients(c, g.atomic_inputs(t, x), cfg.eval_settings())
