"""Zero and rank thresholds shared by the analysis modules."""

from __future__ import annotations

import numpy as np

#: bracket value treated as zero below ``ZERO_REL * (1 + generator scale)``
ZERO_REL = 1e-9
#: singular values above ``RANK_TOL * sigma_max`` count toward the rank
RANK_TOL = 1e-8
#: nesting depth limit for bracket evaluation
MAX_DEPTH = 6


def bracket_zero_threshold(generator_norm) -> np.ndarray:
    return ZERO_REL * (1.0 + np.asarray(generator_norm, dtype=float))


def p_zero_threshold(p_scale: float) -> float:
    """Threshold under which a ``P_ab`` value counts as zero."""
    return ZERO_REL * (1.0 + p_scale)
