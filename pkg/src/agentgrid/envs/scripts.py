"""Scripted mock providers that solve the workflow environments.

They stand in for a competent LLM so episodes can be checked end to end.
Rule order matters: the first matching rule answers.
"""

from __future__ import annotations

from ..llm import MockBackend, MockRule

# tree-search scoring and step-back abstraction prompts also embed the sub-task,
# so their rules come first
_SHARED = [
    MockRule(r"Rate each from 0 to 1", ["1: 0.9\n2: 0.4\n3: 0.3\n4: 0.2"]),
    MockRule(r"Step back: what general principle", ["Work through the requirements one at a time."]),
]


def lockbox_solver(sequence=("red", "green", "blue")) -> MockBackend:
    plan = "\n".join(f"{i + 1}. press {c}" for i, c in enumerate(sequence))
    return MockBackend(
        _SHARED
        + [
            MockRule(r"Sub-task: (?P<s>press \w+)", ["$s"]),
            MockRule(r"Sub-task: A lockbox", [f"press {sequence[0]}"]),
            MockRule(r"lockbox", [plan]),
        ],
        default="do nothing",
    )


def toolchain_solver(key: str = "alpha", factor: int = 7) -> MockBackend:
    plan = (
        f"1. look up the secret for {key}\n"
        f"2. multiply the secret by {factor}\n"
        "3. submit the product"
    )
    ranked_lookup = "lookup: 0.9\ncalculator: 0.2\nsearch: 0.1"
    ranked_calc = "lookup: 0.1\ncalculator: 0.9\nsearch: 0.2"
    return MockBackend(
        _SHARED
        + [
            # tool selection
            MockRule(r"(?:roblem|solving): lookup[^\n]*\n.*name: score", [ranked_lookup]),
            MockRule(r"(?:roblem|solving): calculator[^\n]*\n.*name: score", [ranked_calc]),
            MockRule(r"(?:roblem|solving): lookup", ["lookup"]),
            MockRule(r"(?:roblem|solving): calculator", ["calculator"]),
            # reasoning, most specific first
            MockRule(r"Sub-task: look up.*Tool result: \w+ = (?P<v>\d+)", ["report secret is $v"]),
            MockRule(r"Sub-task: look up", [f"TOOL: lookup {key}"]),
            MockRule(r"Sub-task: multiply.*Tool result: (?P<v>\d+)", ["report product is $v"]),
            MockRule(r"Sub-task: multiply.*secret is (?P<s>\d+)", [f"TOOL: calculator $s * {factor}"]),
            MockRule(r"Sub-task: multiply", ["report the secret is unknown"]),
            MockRule(r"Sub-task: submit.*product is (?P<p>\d+)", ["submit $p"]),
            MockRule(r"Sub-task: submit", ["submit 0"]),
            MockRule(r"Sub-task: Compute the access code.*Tool result: \w+ = (?P<v>\d+)",
                     ["report secret is $v"]),
            MockRule(r"Sub-task: Compute the access code", [f"TOOL: lookup {key}"]),
            MockRule(r"access code", [plan]),
        ],
        default="report nothing to add",
    )


def do_nothing() -> MockBackend:
    return MockBackend(default="do nothing")
