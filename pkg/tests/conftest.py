from __future__ import annotations

from pathlib import Path

import pytest

from cfgen.dist import DistTable
from cfgen.fixtures import asymmetric_lm, example_binary_model, lm3_model, topk_violation_lm
from cfgen.nondet import CausalGraph, Cpt, NondetModel, VarSpec

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def binary_chain() -> NondetModel:
    """X -> Y with P(Y=1|X=1) = 0.3 and P(Y=1|X=0) = 0.7."""
    return example_binary_model()


@pytest.fixture(scope="session")
def three_chain() -> NondetModel:
    """X -> T -> Y with generic rows; fails the simple semantics."""
    x = VarSpec("X", ("0", "1"))
    t = VarSpec("T", ("0", "1"))
    y = VarSpec("Y", ("0", "1"))
    graph = CausalGraph.of(["X", "T", "Y"], [("X", "T"), ("T", "Y")])
    cpt_t = Cpt(
        "T",
        ("X",),
        {
            ("0",): DistTable({"0": 0.75, "1": 0.25}),
            ("1",): DistTable({"0": 0.4, "1": 0.6}),
        },
    )
    cpt_y = Cpt(
        "Y",
        ("T",),
        {
            ("0",): DistTable({"0": 0.9, "1": 0.1}),
            ("1",): DistTable({"0": 0.4, "1": 0.6}),
        },
    )
    return NondetModel((x, t, y), graph, {"T": cpt_t, "Y": cpt_y})


@pytest.fixture(scope="session")
def lm3():
    return lm3_model()


@pytest.fixture(scope="session")
def asym_lm():
    return asymmetric_lm()


@pytest.fixture(scope="session")
def topk_lm():
    return topk_violation_lm()
