"""Compile n-gram language models into transformer weights and verify them exactly."""

from .compiler import (
    Construction,
    HistoryIndexer,
    build_and_mlp,
    build_digit_mlp,
    build_output_matrix,
    build_step_gadget,
    compile_lm,
    compile_multihead,
    compile_multilayer,
    compile_singlehead,
    compile_sparse,
)
from .ngram import Alphabet, NGramLM, enumerate_strings, estimate_mle, pad, random_lm
from .numeric import Backend, ExtReal, hardmax, relu, softmax_logdomain, sparsemax
from .transformer import TransformerModel, lm_conditional, lm_string_prob, transformer_forward
from .verify import EquivalenceReport, check_weak_equivalence, verify_model

__all__ = [
    "Alphabet",
    "Backend",
    "Construction",
    "EquivalenceReport",
    "ExtReal",
    "HistoryIndexer",
    "NGramLM",
    "TransformerModel",
    "build_and_mlp",
    "build_digit_mlp",
    "build_output_matrix",
    "build_step_gadget",
    "check_weak_equivalence",
    "compile_lm",
    "compile_multihead",
    "compile_multilayer",
    "compile_singlehead",
    "compile_sparse",
    "enumerate_strings",
    "estimate_mle",
    "hardmax",
    "lm_conditional",
    "lm_string_prob",
    "pad",
    "random_lm",
    "relu",
    "softmax_logdomain",
    "sparsemax",
    "transformer_forward",
    "verify_model",
]
