"""
Oracle campaigns for LogiGuide.

Each campaign draws seeded random formulas, compiles them, and compares the
composition calculus against brute-force testbed oracles, keeping the
largest deviation seen.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from core.calculus import EvalSettings, atomic_coefficients, eval_circuit, eval_transition
from core.compiler import compile_formula
from core.errors import SingularityError, UnsatisfiableFormulaError
from core.formula import DEFAULT_NEG_PROB, random_query

logger = logging.getLogger(__name__)

DEFAULT_OPS = (1, 4)


@dataclass
class CampaignSummary:
    """Largest deviations found by one campaign."""
    name: str
    n_formulas: int = 0
    n_probes: int = 0
    max_deviation: Dict[str, float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    skipped: int = 0
    seconds: float = 0.0

    def update(self, key: str, value: float):
        value = float(value)
        if value > self.max_deviation.get(key, 0.0) or key not in self.max_deviation:
            self.max_deviation[key] = value

    @property
    def ok(self) -> bool:
        return not self.failures

    def check_tolerances(self, tolerances: Dict[str, float]):
        """Record a failure for every deviation above its tolerance."""
        for key, limit in (tolerances or {}).items():
            value = self.max_deviation.get(key)
            if value is not None and value > limit:
                self.failures.append(f"max {key} dev {value:.3e} exceeds {limit:.0e}")

    def lines(self) -> List[str]:
        out = [f"[{self.name}] {self.n_formulas} formulas, {self.n_probes} probes, {self.seconds:.1f}s"]
        for key, value in self.max_deviation.items():
            out.append(f"  max {key} dev = {value:.3e}")
        if self.skipped:
            out.append(f"  {self.skipped} probe(s) skipped: singular NOT child or zero formula posterior")
        if self.failures:
            out.append(f"  {len(self.failures)} failure(s)")
            out.extend(f"    - {f}" for f in self.failures[:10])
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def _formulas(model, n_formulas, seed, n_ops, neg_prob):
    rng = np.random.default_rng(seed)
    lo, hi = n_ops
    for i in range(n_formulas):
        ops = int(rng.integers(lo, hi + 1))
        yield i, random_query(model, ops, neg_prob=neg_prob, seed=[seed, i])


def _probes(g, rng, n_probes, n_times) -> List[Tuple[float, np.ndarray]]:
    """Probe states drawn from the forward process at random times."""
    per_time = -(-n_probes // n_times)
    probes = []
    for _ in range(n_times):
        t = float(rng.uniform(0.02, g.T))
        x0, _ = g.sample_terminal(per_time, rng)
        a = float(g.schedule.alpha(t))
        x = a * x0 + np.sqrt(float(g.schedule.noise_variance(t))) * rng.standard_normal(x0.shape)
        probes.append((t, x))
    return probes


def continuous_campaign(g, n_formulas=500, n_probes=100, seed=0, n_ops=DEFAULT_OPS,
                        neg_prob=DEFAULT_NEG_PROB, fd_step=1e-5, fd_probes=5) -> CampaignSummary:
    """
    Compare exact-mode evaluation with the GMM oracle.

    Tracks the relative posterior deviation, the score deviation from the
    analytic oracle score and from central differences of the log oracle
    posterior, and the coefficient reconstruction error.
    """
    summary = CampaignSummary('continuous')
    settings = EvalSettings.exact_mode()
    rng = np.random.default_rng([seed, 1])
    start = time.perf_counter()
    n_times = min(10, n_probes)

    for i, f in _formulas(g.model, n_formulas, seed, n_ops, neg_prob):
        result = compile_formula(f, g.model)
        if not (result.equivalent and result.valid):
            summary.failures.append(f"formula {i}: compiled circuit not equivalent/valid")
            continue
        for t, x in _probes(g, rng, n_probes, n_times):
            inputs = g.atomic_inputs(t, x)
            try:
                out = eval_circuit(result.circuit, inputs, settings)
            except SingularityError:
                summary.skipped += len(x)
                continue
            posterior, score = g.formula_oracle(f, t, x)
            summary.update('posterior', np.max(np.abs(np.expm1(out.log_posterior - np.log(posterior)))))
            summary.update('score', np.max(np.abs(out.score - score)))
            coefficients = atomic_coefficients(result.circuit, inputs, settings)
            summary.update('coefficient', np.max(np.abs(coefficients.reconstruct(inputs.scores) - out.score)))

            xs = x[:fd_probes]
            fd = np.empty(xs.shape)
            for j in range(g.dim):
                step = np.zeros(g.dim)
                step[j] = fd_step
                up, _ = g.formula_oracle(f, t, xs + step)
                down, _ = g.formula_oracle(f, t, xs - step)
                fd[:, j] = (np.log(up) - np.log(down)) / (2 * fd_step)
            summary.update('finite-difference', np.max(np.abs(fd - out.score[:fd_probes])))
            summary.n_probes += len(x)
        summary.n_formulas += 1
        if (i + 1) % 100 == 0:
            logger.info(f"Continuous campaign: {i + 1}/{n_formulas} formulas")

    summary.seconds = time.perf_counter() - start
    logger.info(f"Continuous campaign done in {summary.seconds:.1f}s")
    return summary


def discrete_campaign(dd, n_formulas=200, seed=0, n_ops=DEFAULT_OPS,
                      neg_prob=DEFAULT_NEG_PROB) -> CampaignSummary:
    """Compare composed posteriors and kernels with the enumeration oracle at every (step, state)."""
    summary = CampaignSummary('discrete')
    settings = EvalSettings.exact_mode()
    start = time.perf_counter()
    inputs = {(k, x): dd.atomic_inputs(k, x)
              for k in range(1, dd.steps + 1) for x in range(dd.n_states)}

    for i, f in _formulas(dd.model, n_formulas, seed, n_ops, neg_prob):
        result = compile_formula(f, dd.model)
        if not (result.equivalent and result.valid):
            summary.failures.append(f"formula {i}: compiled circuit not equivalent/valid")
            continue
        for (k, x), atomic in inputs.items():
            try:
                posterior, row = dd.formula_oracle(f, k, x)
            except UnsatisfiableFormulaError:
                summary.skipped += 1
                continue
            try:
                out = eval_transition(result.circuit, atomic, settings)
            except SingularityError:
                summary.skipped += 1
                continue
            summary.update('posterior', abs(out.posterior - posterior))
            summary.update('transition', np.max(np.abs(out.row - row)))
            if out.flags:
                summary.failures.append(f"formula {i}: flags {sorted(out.flags)} at step {k}, state {x}")
            summary.n_probes += 1
        summary.n_formulas += 1

    summary.seconds = time.perf_counter() - start
    logger.info(f"Discrete campaign done in {summary.seconds:.1f}s")
    return summary


def compilation_campaign(model, n_formulas=500, seed=0, n_ops=DEFAULT_OPS,
                         neg_prob=DEFAULT_NEG_PROB) -> CampaignSummary:
    """Every compiled circuit must be equivalent to its formula and structurally valid."""
    summary = CampaignSummary('compilation')
    start = time.perf_counter()
    for i, f in _formulas(model, n_formulas, seed, n_ops, neg_prob):
        result = compile_formula(f, model)
        if not result.equivalent:
            summary.failures.append(f"formula {i}: not equivalent")
        if not result.valid:
            summary.failures.append(f"formula {i}: structural violation")
        summary.n_formulas += 1
    summary.seconds = time.perf_counter() - start
    return summary
