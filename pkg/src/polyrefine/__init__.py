"""DeepPoly abstract interpretation for ReLU networks with LP-guided refinement
of spurious regions, plus a quantitative robustness bound."""

from .deeppoly import AbstractElement, ForcedFacts, analyze, back_substitute, margin_lower_bound
from .errors import VerifierError
from .lp import LinearProgram, solve, tighten
from .network import Affine, InputBox, Network, ReLU, classify, forward, load_network, save_network
from .oracle import exact_verify, mc_violation_rate
from .quant import quantify, quantify_box, split_box
from .refine import (
    RULED_OUT, UNKNOWN, UNRESOLVED, YES,
    SpuriousRegion, max_verified_radius, refine_region, verify, verify_box,
)

__version__ = "0.1.0"
