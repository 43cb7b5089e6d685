"""Structured sparsity specs on shape:stride layouts, with block OBS pruning."""

from .errors import *  # noqa: F401,F403
from .hardware import check_tensorcore_24, compression_quote, fragment_assignment, mma_fragment_owner
from .hessian import HessianState, damp_and_invert, empirical_hessian, schur_eliminate, schur_prune
from .layout import DomainSpec, ElementSet, GeneralizedDomain, Layout, TabulatedLayout, layout_compose
from .oracle import brute_force_best_mask, exact_compensated_loss
from .patterns import CATALOG, make_pattern
from .pruners import (
    Method,
    OrderMode,
    PruneConfig,
    PruneReport,
    prune,
    prune_obd,
    prune_scope_obs,
    prune_wanda,
    relative_output_error,
    saliency_obd,
    saliency_obs,
    saliency_wanda,
    sparsegpt_like,
)
from .skt import read_skt, write_skt
from .spec import (
    CouplingSpec,
    MaskGrid,
    SparsitySpec,
    block_elements,
    element_to_block,
    hard_threshold,
    validate_spec,
)

__version__ = "0.1.0"
