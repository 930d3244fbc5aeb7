"""Built-in protocols and the file-based protocol loader.

Catalog names (also accepted by the CLI): ``pairwise-elimination``,
``leave-init``, ``one-way-epidemic``.  Every constructor takes the population
size n, since protocol definitions are in general allowed to depend on it;
the built-ins here use constant state sets and only validate n.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Union

from .core import FOLLOWER, LEADER, Protocol


class ProtocolLoadError(ValueError):
    """A protocol definition document failed validation."""


def _identity_table(num_states: int) -> list[list[tuple[int, int]]]:
    return [[(a, b) for b in range(num_states)] for a in range(num_states)]


def _freeze(table: list[list[tuple[int, int]]]) -> tuple:
    return tuple(tuple(row) for row in table)


def pairwise_elimination(n: int) -> Protocol:
    """Two leaders meeting demote the responder; everything else is inert.

    States: 0 = leader (initial, outputs L), 1 = follower (outputs F).  From
    the all-leader start the leader count can only shrink, and never below 1.
    """
    if n < 1:
        raise ValueError("population size must be >= 1")
    table = _identity_table(2)
    table[0][0] = (0, 1)
    return Protocol(
        num_states=2,
        initial_state=0,
        transitions=_freeze(table),
        outputs=(LEADER, FOLLOWER),
        name="pairwise-elimination",
    )


def leave_init(n: int) -> Protocol:
    """Both participants of any interaction leave the initial state for good.

    States: 0 = init (initial), 1 = done; both output F.  The count of agents
    still in init is non-increasing and drops by the number of participants
    currently in init (0, 1, or 2) at each step.
    """
    if n < 1:
        raise ValueError("population size must be >= 1")
    table = [[(1, 1), (1, 1)], [(1, 1), (1, 1)]]
    return Protocol(
        num_states=2,
        initial_state=0,
        transitions=_freeze(table),
        outputs=(FOLLOWER, FOLLOWER),
        name="leave-init",
    )


def one_way_epidemic(n: int) -> Protocol:
    """Infection spreads whenever either participant is infected.

    States: 0 = susceptible (initial), 1 = infected; both output F.  The rule
    is symmetric in the two roles, so with k infected agents the probability
    that one step infects someone new is 2k(n-k)/(n(n-1)).  Experiments seed
    one infected agent through run_trial's ``initial`` override (the protocol
    itself starts all-susceptible like any other).
    """
    if n < 1:
        raise ValueError("population size must be >= 1")
    table = [[(0, 0), (1, 1)], [(1, 1), (1, 1)]]
    return Protocol(
        num_states=2,
        initial_state=0,
        transitions=_freeze(table),
        outputs=(FOLLOWER, FOLLOWER),
        name="one-way-epidemic",
    )


CATALOG: dict[str, Callable[[int], Protocol]] = {
    "pairwise-elimination": pairwise_elimination,
    "leave-init": leave_init,
    "one-way-epidemic": one_way_epidemic,
}


def make_protocol(name: str, n: int) -> Protocol:
    try:
        return CATALOG[name](n)
    except KeyError:
        known = ", ".join(sorted(CATALOG))
        raise ValueError(f"unknown protocol {name!r} (catalog: {known})") from None


def protocol_from_dict(doc: dict) -> Protocol:
    """Build a protocol from a parsed definition document.

    Expected fields: ``name``, ``states`` (list of state names), ``initial``
    (a state name), ``outputs`` (mapping state name -> output symbol, total),
    ``rules`` (list of ``[a, b, a', b']`` entries by state name).  Ordered
    pairs without a rule default to the identity transition.
    """
    try:
        state_names = list(doc["states"])
        initial = doc["initial"]
        outputs_doc = dict(doc["outputs"])
        rules = list(doc.get("rules", []))
    except (KeyError, TypeError) as exc:
        raise ProtocolLoadError(f"malformed protocol document: missing {exc}") from None

    if len(set(state_names)) != len(state_names):
        raise ProtocolLoadError("duplicate state names")
    index = {name: i for i, name in enumerate(state_names)}

    def state_id(name, where):
        if name not in index:
            raise ProtocolLoadError(f"unknown state name {name!r} in {where}")
        return index[name]

    initial_id = state_id(initial, "initial")

    missing = [name for name in state_names if name not in outputs_doc]
    if missing:
        raise ProtocolLoadError(f"outputs not total: missing {missing}")
    unknown = [name for name in outputs_doc if name not in index]
    if unknown:
        raise ProtocolLoadError(f"unknown state name {unknown[0]!r} in outputs")
    outputs = tuple(str(outputs_doc[name]) for name in state_names)

    table = _identity_table(len(state_names))
    seen: set[tuple[int, int]] = set()
    for rule in rules:
        if len(rule) != 4:
            raise ProtocolLoadError(f"rule {rule!r} must have four entries")
        a, b, a2, b2 = (state_id(name, f"rule {rule!r}") for name in rule)
        if (a, b) in seen:
            raise ProtocolLoadError(
                f"duplicate rule for ordered pair ({rule[0]!r}, {rule[1]!r})"
            )
        seen.add((a, b))
        table[a][b] = (a2, b2)

    return Protocol(
        num_states=len(state_names),
        initial_state=initial_id,
        transitions=_freeze(table),
        outputs=outputs,
        name=str(doc.get("name", "")),
    )


def load_protocol(path: Union[str, Path]) -> Protocol:
    """Load a protocol definition from a JSON file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ProtocolLoadError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ProtocolLoadError(f"{path}: document must be a JSON object")
    return protocol_from_dict(doc)
