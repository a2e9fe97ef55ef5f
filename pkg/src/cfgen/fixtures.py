"""Bundled demonstration models.

Four fixtures ship with the package (also serialized under fixtures/ in the
repository): the binary two-variable model with p = 0.3, q = 0.7, a small
three-token table model for exact-vs-sampled comparisons, an asymmetric
single-step model where the closeness-biased and resampling semantics
visibly disagree, and a variant whose counterfactual-side top-k truncation
provokes stability violations.
"""

from __future__ import annotations

from .dist import DistTable
from .nondet import CausalGraph, Cpt, NondetModel, VarSpec
from .tokenlm import ToyLM, Vocab


def example_binary_model(p: float = 0.3, q: float = 0.7) -> NondetModel:
    """X -> Y, both binary, with P(Y=1|X=1) = p and P(Y=1|X=0) = q."""
    x = VarSpec("X", ("0", "1"))
    y = VarSpec("Y", ("0", "1"))
    graph = CausalGraph.of(["X", "Y"], [("X", "Y")])
    cpt = Cpt(
        "Y",
        ("X",),
        {
            ("0",): DistTable({"0": 1.0 - q, "1": q}),
            ("1",): DistTable({"0": 1.0 - p, "1": p}),
        },
    )
    return NondetModel((x, y), graph, {"Y": cpt})


def lm3_model() -> ToyLM:
    """Three tokens, k = 3: small enough to enumerate by hand."""
    vocab = Vocab(("</e>", "a", "b"))
    table = {
        (): DistTable({"</e>": 0.0, "a": 0.6, "b": 0.4}),
        ("a",): DistTable({"</e>": 0.2, "a": 0.5, "b": 0.3}),
        ("b",): DistTable({"</e>": 0.3, "a": 0.3, "b": 0.4}),
        ("a", "a"): DistTable({"</e>": 0.5, "a": 0.25, "b": 0.25}),
        ("a", "b"): DistTable({"</e>": 0.1, "a": 0.6, "b": 0.3}),
        ("b", "a"): DistTable({"</e>": 0.25, "a": 0.25, "b": 0.5}),
        ("b", "b"): DistTable({"</e>": 0.6, "a": 0.2, "b": 0.2}),
    }
    return ToyLM(vocab, 3, "table", table=table)


def asymmetric_lm() -> ToyLM:
    """One generated position; prompts p and q induce mirrored distributions.

    Under prompt flip p -> q the closeness-biased law differs from plain
    resampling (their distance is 0.1375), making the bias visible.
    """
    vocab = Vocab(("</e>", "p", "q", "a", "b", "c"))
    absorb = DistTable.point("</e>")
    table = {
        (): DistTable({"p": 0.5, "q": 0.5}),
        ("p",): DistTable({"a": 0.5, "b": 0.3, "c": 0.2}),
        ("q",): DistTable({"a": 0.2, "b": 0.3, "c": 0.5}),
        ("a",): absorb,
        ("b",): absorb,
        ("c",): absorb,
    }
    return ToyLM(vocab, 2, "table", table=table)


def topk_violation_lm() -> ToyLM:
    """Fixture for the truncation diagnostic.

    With top_k = 1 applied only on the counterfactual side, the reused
    noise deterministically picks token b after prompt q, which is an
    excluded token whenever the factual run produced a (about 18% of runs).
    """
    vocab = Vocab(("</e>", "p", "q", "a", "b", "c"))
    absorb = DistTable.point("</e>")
    table = {
        (): DistTable({"p": 0.5, "q": 0.5}),
        ("p",): DistTable({"</e>": 0.02, "a": 0.18, "b": 0.40, "c": 0.40}),
        ("q",): DistTable({"</e>": 0.02, "a": 0.38, "b": 0.42, "c": 0.18}),
        ("a",): absorb,
        ("b",): absorb,
        ("c",): absorb,
    }
    return ToyLM(vocab, 2, "table", table=table)
