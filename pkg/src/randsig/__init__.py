"""randsig: graph and sequence learning with learnable randomized signature
layers, plus the synthetic tasks and training loop used to exercise them."""

from .numkernel import RngState, matmul, sample_gaussian, sample_uniform, symmetric_eig
from .sigcore import (
    SampledPath,
    TruncatedSignature,
    lead_lag_embed,
    moments_from_signature,
    randomized_signature_reference,
    signature_term_count,
    truncated_signature,
)
from .graphconv import NO_EDGE, EdgeEmbedding, Graph, centering_matrix, diagonal_shift, edge_embedding, sanitize_adjacency, stack_inputs
from .lspm import RandSigLayerParams, grad_check, init_layer, layer_backward, layer_forward, mav_trace, sig_forward

__all__ = [
    "RngState", "matmul", "sample_gaussian", "sample_uniform", "symmetric_eig",
    "SampledPath", "TruncatedSignature", "signature_term_count", "truncated_signature",
    "lead_lag_embed", "moments_from_signature", "randomized_signature_reference",
    "Graph", "EdgeEmbedding", "NO_EDGE", "centering_matrix", "diagonal_shift",
    "edge_embedding", "sanitize_adjacency", "stack_inputs",
    "RandSigLayerParams", "init_layer", "sig_forward", "layer_forward",
    "layer_backward", "grad_check", "mav_trace",
]
