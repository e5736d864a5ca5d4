"""
Composition calculus module for LogiGuide.

Evaluates a guidance circuit bottom-up on per-atom quantities:

    node     posterior                 score
    ATOM     pi_i                      s_i
    NOT      1 - pi                    -(pi / (1 - pi)) s
    AND-CI   pi_a pi_b                 s_a + s_b
    OR-CI    pi_a + pi_b - pi_a pi_b   (pi_a (1-pi_b) s_a + pi_b (1-pi_a) s_b) / pi
    OR-ME    pi_a + pi_b               (pi_a s_a + pi_b s_b) / pi

Posteriors are carried as the pair (log pi, log(1 - pi)) so that both tails
stay accurate. Inputs may carry any leading batch shape: posteriors
``(..., n_atoms)``, scores ``(..., n_atoms, d)``.

The discrete counterpart composes one-step transition rows instead of scores.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np

from core.circuit import (
    AndCINode, AtomNode, CircuitNode, NotNode, OrCINode, OrMENode, circuit_atoms
)
from core.errors import (
    InconsistentInputsError, SingularityError, TransitionError, UnknownAtomError
)
from core.formula import postorder

logger = logging.getLogger(__name__)

FLAG_CLAMPED = 'clamped'
FLAG_SCORE_CAPPED = 'score_capped'
FLAG_INCONSISTENT = 'inconsistent_me'
FLAG_REPAIRED = 'repaired'

OR_WEIGHTINGS = ('exact', 'constant')

_LN2 = np.log(2.0)


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        return np.where(x > -_LN2, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _logsubexp(a, b):
    """log(exp(a) - exp(b)); -inf where b >= a."""
    with np.errstate(invalid='ignore'):
        return np.where(a > b, a + _log1mexp(np.minimum(b - a, 0.0)), -np.inf)


@dataclass(frozen=True)
class EvalSettings:
    """
    Numerical policy for circuit evaluation.

    ``exact=True`` disables posterior clamping and the score cap and turns
    clamp/repair situations into errors; oracle comparisons run this way.
    """
    epsilon: float = 1e-6
    score_cap: Optional[float] = 3.0
    me_tolerance: float = 1e-9
    transition_tolerance: float = 1e-12
    or_weighting: str = 'exact'
    exact: bool = False

    def __post_init__(self):
        if self.or_weighting not in OR_WEIGHTINGS:
            raise ValueError(f"or_weighting must be one of {OR_WEIGHTINGS}, got {self.or_weighting!r}")
        if not 0.0 <= self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in [0, 0.5), got {self.epsilon}")

    @classmethod
    def exact_mode(cls, **overrides) -> 'EvalSettings':
        return cls(exact=True, **overrides)

    @classmethod
    def from_config(cls, config: dict, **overrides) -> 'EvalSettings':
        """Build from the ``calculus`` section of the global config."""
        section = (config or {}).get('calculus', {})
        values = {
            'epsilon': section.get('epsilon', cls.epsilon),
            'score_cap': section.get('score_cap', cls.score_cap),
            'me_tolerance': section.get('me_tolerance', cls.me_tolerance),
            'transition_tolerance': section.get('transition_tolerance', cls.transition_tolerance),
        }
        values.update(overrides)
        return cls(**values)

    @property
    def eps(self) -> float:
        return 0.0 if self.exact else self.epsilon

    @property
    def cap(self) -> Optional[float]:
        return None if self.exact else self.score_cap


DEFAULT_SETTINGS = EvalSettings()


# ---------------------------------------------------------------------------
# Continuous inputs and outputs
# ---------------------------------------------------------------------------

@dataclass
class AtomicInputs:
    """
    Per-atom quantities at one (or a batch of) diffusion states.

    ``scores[..., i, :]`` is the score difference
    grad log p_t(x | c_i) - grad log p_t(x). Log posteriors and log
    complements may be supplied directly when the source knows them more
    accurately than ``log(pi)`` / ``log1p(-pi)``.
    """
    posteriors: np.ndarray
    scores: np.ndarray
    uncond_score: Optional[np.ndarray] = None
    t: Optional[float] = None
    log_posteriors: Optional[np.ndarray] = None
    log_complements: Optional[np.ndarray] = None

    def __post_init__(self):
        self.posteriors = np.asarray(self.posteriors, dtype=float)
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim < 1 or self.scores.shape[:-1] != self.posteriors.shape:
            raise InconsistentInputsError(
                f"Score shape {self.scores.shape} does not match posterior shape {self.posteriors.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise InconsistentInputsError("Atomic scores contain non-finite entries")
        if np.any(~np.isfinite(self.posteriors)) or np.any((self.posteriors < 0) | (self.posteriors > 1)):
            raise InconsistentInputsError("Atomic posteriors must lie in [0, 1]")
        with np.errstate(divide='ignore'):
            if self.log_posteriors is None:
                self.log_posteriors = np.log(self.posteriors)
            if self.log_complements is None:
                self.log_complements = np.log1p(-self.posteriors)
        self.log_posteriors = np.asarray(self.log_posteriors, dtype=float)
        self.log_complements = np.asarray(self.log_complements, dtype=float)

    @property
    def n_atoms(self) -> int:
        return self.posteriors.shape[-1]

    @property
    def dim(self) -> int:
        return self.scores.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.posteriors.shape[:-1]

    def with_scores(self, scores: np.ndarray) -> 'AtomicInputs':
        return replace(self, scores=scores)


@dataclass
class GuidanceOutput:
    """Posterior and logical score of a formula at the evaluated state(s)."""
    posterior: np.ndarray
    score: np.ndarray
    log_posterior: np.ndarray
    flags: FrozenSet[str] = frozenset()


@dataclass
class CoefficientVector:
    """Coefficients alpha_i with score = sum_i alpha_i s_i, atoms in circuit order."""
    atoms: Tuple[int, ...]
    values: np.ndarray

    def as_dict(self) -> Dict[int, np.ndarray]:
        return {a: self.values[..., k] for k, a in enumerate(self.atoms)}

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        """Recombine atomic score differences ``(..., n_atoms, d)``."""
        picked = np.asarray(scores)[..., list(self.atoms), :]
        return np.einsum('...k,...kd->...d', self.values, picked)


@dataclass
class _Trace:
    lp: np.ndarray
    lq: np.ndarray
    score: np.ndarray
    weights: tuple = ()
    cap_factor: Optional[np.ndarray] = None


def _check_atoms(c: CircuitNode, n_atoms: int):
    atoms = circuit_atoms(c)
    bad = [a for a in atoms if not 0 <= a < n_atoms]
    if bad:
        raise UnknownAtomError(f"Circuit uses atoms {bad} but inputs cover {n_atoms} atoms")
    return atoms


def _forward(c: CircuitNode, inputs: AtomicInputs, settings: EvalSettings):
    atoms = _check_atoms(c, inputs.n_atoms)
    eps = settings.eps
    log_eps = np.log(eps) if eps > 0 else -np.inf
    log_hi = np.log1p(-eps)
    flags = set()

    cap_norm = None
    if settings.cap is not None:
        norms = np.linalg.norm(inputs.scores[..., list(atoms), :], axis=-1)
        cap_norm = settings.cap * norms.max(axis=-1)

    def clamp(lp, lq):
        if eps <= 0:
            return lp, lq
        low = lp < log_eps
        high = lq < log_eps
        if np.any(low) or np.any(high):
            flags.add(FLAG_CLAMPED)
            lp = np.where(low, log_eps, np.where(high, log_hi, lp))
            lq = np.where(low, log_hi, np.where(high, log_eps, lq))
        return lp, lq

    traces = {}
    for node in postorder(c):
        if id(node) in traces:
            continue
        if isinstance(node, AtomNode):
            lp, lq = clamp(inputs.log_posteriors[..., node.atom], inputs.log_complements[..., node.atom])
            traces[id(node)] = _Trace(lp, lq, inputs.scores[..., node.atom, :])
            continue

        if isinstance(node, NotNode):
            ch = traces[id(node.child)]
            if np.any(ch.lq == -np.inf) or np.any(ch.lq < log_eps):
                raise SingularityError("NOT node over a child with posterior 1")
            ratio = np.exp(ch.lp - ch.lq)
            lp, lq = ch.lq, ch.lp
            weights = (-ratio,)
            score = -ratio[..., None] * ch.score
        else:
            a, b = traces[id(node.left)], traces[id(node.right)]
            if isinstance(node, AndCINode):
                lp = a.lp + b.lp
                lq = _log1mexp(lp)
                weights = (1.0, 1.0)
            elif isinstance(node, OrMENode):
                lp = np.logaddexp(a.lp, b.lp)
                over = lp > np.log1p(settings.me_tolerance)
                if np.any(over):
                    if settings.exact:
                        raise InconsistentInputsError(
                            f"OR-ME children posteriors sum to {float(np.max(np.exp(lp))):.12g} > 1")
                    flags.add(FLAG_INCONSISTENT)
                    logger.warning("OR-ME children posteriors sum above 1; clamping")
                lp = np.minimum(lp, 0.0)
                lq = _logsubexp(a.lq, b.lp)
                weights = (np.exp(a.lp - lp), np.exp(b.lp - lp))
            else:
                lq = a.lq + b.lq
                lp = _log1mexp(lq)
                weights = (np.exp(a.lp + b.lq - lp), np.exp(b.lp + a.lq - lp))
            if isinstance(node, (OrMENode, OrCINode)) and settings.or_weighting == 'constant':
                weights = (0.5, 0.5)
            score = (np.asarray(weights[0])[..., None] * a.score
                     + np.asarray(weights[1])[..., None] * b.score)

        if settings.exact and np.any(lp == -np.inf):
            raise SingularityError(f"{node.label} node has posterior 0")
        lp, lq = clamp(lp, lq)

        factor = None
        if cap_norm is not None:
            norm = np.linalg.norm(score, axis=-1)
            with np.errstate(divide='ignore', invalid='ignore'):
                factor = np.where(norm > cap_norm, cap_norm / norm, 1.0)
            if np.any(factor < 1.0):
                flags.add(FLAG_SCORE_CAPPED)
                score = factor[..., None] * score
        traces[id(node)] = _Trace(lp, lq, score, weights, factor)

    return traces, atoms, frozenset(flags)


def eval_circuit(c: CircuitNode, inputs: AtomicInputs,
                 settings: EvalSettings = DEFAULT_SETTINGS) -> GuidanceOutput:
    """
    Posterior and logical score of ``c`` in one post-order pass.

    Raises:
        SingularityError: NOT over a child with posterior 1
        InconsistentInputsError: OR-ME children summing above 1 (exact mode)
    """
    traces, _, flags = _forward(c, inputs, settings)
    root = traces[id(c)]
    if flags:
        logger.debug(f"Evaluation flags: {sorted(flags)}")
    return GuidanceOutput(np.exp(root.lp), root.score, root.lp, flags)


def atomic_coefficients(c: CircuitNode, inputs: AtomicInputs,
                        settings: EvalSettings = DEFAULT_SETTINGS) -> CoefficientVector:
    """
    Express the logical score of ``c`` as a linear combination of the
    atomic score differences.

    Multipliers flow top-down: NOT contributes -pi/(1-pi), AND-CI passes
    its multiplier unchanged, OR nodes pass their posterior weights, and a
    capped node scales everything below it by its cap factor. An atom at
    several leaves gets the sum of its leaf multipliers.
    """
    traces, atoms, _ = _forward(c, inputs, settings)
    index = {a: k for k, a in enumerate(atoms)}
    batch = inputs.batch_shape
    values = np.zeros(batch + (len(atoms),))
    stack = [(c, np.ones(batch))]
    while stack:
        node, multiplier = stack.pop()
        trace = traces[id(node)]
        if trace.cap_factor is not None:
            multiplier = multiplier * trace.cap_factor
        if isinstance(node, AtomNode):
            values[..., index[node.atom]] += multiplier
            continue
        for child, weight in zip(node.children(), trace.weights):
            stack.append((child, multiplier * weight))
    return CoefficientVector(atoms, values)


# ---------------------------------------------------------------------------
# Discrete transitions
# ---------------------------------------------------------------------------

@dataclass
class DiscreteAtomicInputs:
    """
    One-step reverse kernels at a discrete state.

    ``uncond_row[y]`` is tau(y | x), ``cond_rows[i, y]`` is tau(y | c_i, x)
    and ``posteriors[i]`` is p(c_i | x).
    """
    uncond_row: np.ndarray
    cond_rows: np.ndarray
    posteriors: np.ndarray
    row_tolerance: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        self.uncond_row = np.asarray(self.uncond_row, dtype=float)
        self.cond_rows = np.atleast_2d(np.asarray(self.cond_rows, dtype=float))
        self.posteriors = np.asarray(self.posteriors, dtype=float)
        if self.cond_rows.shape != (self.posteriors.shape[0], self.uncond_row.shape[0]):
            raise TransitionError(
                f"Kernel rows {self.cond_rows.shape} do not match {self.posteriors.shape[0]} atoms "
                f"over {self.uncond_row.shape[0]} states")
        rows = np.vstack([self.uncond_row, self.cond_rows])
        if np.any(rows < -self.row_tolerance) or np.any(np.abs(rows.sum(axis=1) - 1.0) > self.row_tolerance):
            raise TransitionError("Kernel rows must be probability vectors")

    @property
    def n_states(self) -> int:
        return self.uncond_row.shape[0]


@dataclass
class TransitionOutput:
    posterior: float
    row: np.ndarray
    flags: FrozenSet[str] = frozenset()


def _and_kernel(ra, rb, base):
    product = ra * rb
    undefined = (base <= 0) & (product > 0)
    if np.any(undefined):
        raise TransitionError("AND-CI kernel undefined: unconditional kernel is zero where both children are positive")
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(base > 0, product / base, 0.0)


def eval_transition(c: CircuitNode, inputs: DiscreteAtomicInputs,
                    settings: EvalSettings = DEFAULT_SETTINGS) -> TransitionOutput:
    """
    Compose the one-step kernel tau(. | phi, x) for the circuit's formula.

    NOT:    (tau_0 - pi tau) / (1 - pi)
    AND-CI: tau_a tau_b / tau_0
    OR-ME:  (pi_a tau_a + pi_b tau_b) / pi
    OR-CI:  (pi_a tau_a + pi_b tau_b - pi_a pi_b tau_ab) / pi, tau_ab the AND-CI kernel

    Negative mass is clipped and the row renormalized, with the ``repaired``
    flag; in exact mode negative mass beyond the tolerance is an error.

    Raises:
        TransitionError: Undefined AND-CI division, all-zero row, or
            negative mass in exact mode
    """
    _check_atoms(c, inputs.posteriors.shape[0])
    eps = settings.eps
    tol = settings.transition_tolerance
    base = inputs.uncond_row
    flags = set()

    def clamp(p):
        if eps > 0 and not eps <= p <= 1 - eps:
            flags.add(FLAG_CLAMPED)
            return min(max(p, eps), 1 - eps)
        return p

    values = {}
    for node in postorder(c):
        if isinstance(node, AtomNode):
            p, row = clamp(float(inputs.posteriors[node.atom])), inputs.cond_rows[node.atom]
        elif isinstance(node, NotNode):
            pc, rc = values[id(node.child)]
            if pc >= 1.0:
                raise SingularityError("NOT node over a child with posterior 1")
            p = clamp(1.0 - pc)
            row = (base - pc * rc) / (1.0 - pc)
        else:
            (pa, ra), (pb, rb) = values[id(node.left)], values[id(node.right)]
            constant = settings.or_weighting == 'constant'
            if isinstance(node, AndCINode):
                p = pa * pb
                row = _and_kernel(ra, rb, base)
            elif isinstance(node, OrMENode):
                p = pa + pb
                if settings.exact and p <= 0.0:
                    raise SingularityError(f"{node.label} node has posterior 0")
                if p > 1.0 + settings.me_tolerance:
                    if settings.exact:
                        raise InconsistentInputsError(f"OR-ME children posteriors sum to {p:.12g} > 1")
                    flags.add(FLAG_INCONSISTENT)
                wa, wb = (0.5, 0.5) if constant else (pa / p, pb / p)
                row = wa * ra + wb * rb
                p = clamp(min(p, 1.0))
            else:
                p = pa + pb - pa * pb
                if settings.exact and p <= 0.0:
                    raise SingularityError(f"{node.label} node has posterior 0")
                if constant:
                    row = 0.5 * ra + 0.5 * rb
                else:
                    row = (pa * ra + pb * rb - pa * pb * _and_kernel(ra, rb, base)) / p
            if settings.exact and p <= 0.0:
                raise SingularityError(f"{node.label} node has posterior 0")
            p = clamp(p)
        if settings.exact and np.min(row) < -tol:
            raise TransitionError(f"{node.label} kernel has negative mass {float(np.min(row)):.3g}")
        values[id(node)] = (p, row)

    p, row = values[id(c)]
    negative = row < -tol
    row = np.clip(row, 0.0, None)
    total = row.sum()
    if total <= 0.0:
        raise TransitionError("Composed kernel row has no mass")
    if np.any(negative) or abs(total - 1.0) > max(tol, 1e-9):
        if settings.exact:
            raise TransitionError(f"Composed kernel row sums to {total:.12g}")
        flags.add(FLAG_REPAIRED)
        logger.warning("Composed kernel row repaired (clipped and renormalized)")
    return TransitionOutput(p, row / total, frozenset(flags))
