"""
Sample-batch metrics: conformity to a formula and joint entropy of the
labeled attribute combinations.
"""

import logging
from collections import Counter
from typing import Callable, Optional

import numpy as np
from scipy.stats import entropy

from core.formula import Formula, evaluate_world

logger = logging.getLogger(__name__)


def _labeled(batch, labeler: Optional[Callable]):
    if len(batch) == 0:
        raise ValueError("Metrics need a nonempty batch")
    if labeler is not None:
        return labeler(batch.samples)
    if not batch.worlds:
        raise ValueError("Batch carries no labels; pass a labeler")
    return batch.worlds


def conformity_score(batch, f: Formula, labeler: Optional[Callable] = None) -> float:
    """Fraction of samples whose labeled world satisfies ``f``."""
    worlds = _labeled(batch, labeler)
    hits = sum(1 for w in worlds if evaluate_world(f, w))
    return hits / len(worlds)


def joint_entropy(batch, labeler: Optional[Callable] = None) -> float:
    """Shannon entropy in bits of the empirical distribution of labeled worlds."""
    worlds = _labeled(batch, labeler)
    counts = np.array(list(Counter(w.values for w in worlds).values()), dtype=float)
    return float(entropy(counts, base=2))


def label_frequencies(batch, labeler: Optional[Callable] = None) -> dict:
    """World label -> fraction of the batch."""
    worlds = _labeled(batch, labeler)
    counts = Counter(w.label for w in worlds)
    return {label: n / len(worlds) for label, n in sorted(counts.items())}


def summarize(batch, f: Formula, labeler: Optional[Callable] = None) -> dict:
    summary = {
        'n': len(batch),
        'conformity': conformity_score(batch, f, labeler),
        'joint_entropy_bits': joint_entropy(batch, labeler),
    }
    logger.info(f"Batch metrics: conformity={summary['conformity']:.4f}, "
                f"entropy={summary['joint_entropy_bits']:.4f} bits")
    return summary
