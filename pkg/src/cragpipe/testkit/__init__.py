"""Deterministic stub services and synthetic fixtures."""

from .fixtures import make_retrieval_fixture, make_suite, make_synthetic, suite_from_dir
from .stubs import StubCross, StubEmbed, StubKG, StubLLM, StubRule, StubSuite

__all__ = [
    "StubCross",
    "StubEmbed",
    "StubKG",
    "StubLLM",
    "StubRule",
    "StubSuite",
    "make_retrieval_fixture",
    "make_suite",
    "make_synthetic",
    "suite_from_dir",
]
