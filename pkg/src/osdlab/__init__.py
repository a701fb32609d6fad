"""Universal outlying-sequence detection with a reject option."""

from .detector import Outcome, Verdict, classify_outcome, detect, detect_unknown_t
from .divergence import g_score, kl, score_vector
from .exponents import ExponentReport, exponent_report
from .gaussian import OrthantQuery, l_star, orthant_prob, second_order_threshold
from .montecarlo import estimate_probability, sample_batch
from .probs import (REJECT, Distribution, Hypothesis, ModelSpec, Multi, SequenceBatch,
                    Single, empirical_type)
from .rejectexp import LdProblem, f_tradeoff, grid_oracle_ld, ld_multi, ld_single

__version__ = "0.1.0"
