"""Shared test plumbing: graph builders, numpy oracles, and a per-criterion
summary for the acceptance suite.

Tests named ``test_criterion_<n>_*`` get one PASS/FAIL line each at the end
of the run, with whatever measurement detail the test recorded via the
``criterion_note`` fixture.
"""

import re

import numpy as np
import pytest
import torch

from vulgraph.graph_core import LabeledGraph, build_adjacency


def random_graph(rng: np.random.Generator, n: int, d: int, edge_prob: float = 0.2,
                 label: int = 0, dtype=torch.float32) -> LabeledGraph:
    """Erdos-Renyi graph with standard-normal features."""
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if rng.random() < edge_prob]
    x = torch.from_numpy(rng.standard_normal((n, d))).to(dtype)
    return LabeledGraph(features=x, adjacency=build_adjacency(edges, n).to(dtype),
                        label=label, name=f"rand-{n}-{d}")


def normalize_oracle(a: np.ndarray) -> np.ndarray:
    """Literal D^{-1/2} (A + I) D^{-1/2} in numpy, independent of the package."""
    n = a.shape[0]
    a_hat = a + np.eye(n)
    d = a_hat.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(d)
    return d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]


_outcomes: dict[int, str] = {}
_notes: dict[int, str] = {}

_CRITERION = re.compile(r"test_criterion_(\d+)_")


@pytest.fixture
def criterion_note():
    """Record a measurement detail for the current criterion's summary line."""

    def note(number: int, text: str) -> None:
        _notes[number] = text

    return note


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = _CRITERION.search(report.nodeid)
    if m:
        _outcomes[int(m.group(1))] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_outcomes):
        verdict = "PASS" if _outcomes[num] == "passed" else "FAIL"
        detail = f" — {_notes[num]}" if num in _notes else ""
        terminalreporter.write_line(f"criterion {num}: {verdict}{detail}")
