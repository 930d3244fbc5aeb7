"""Exhaustive analysis of tiny populations: reachability, safety, hitting times.

Configurations are stored as per-agent state vectors, not multisets, because
the safety criterion is per-agent: a configuration is safe iff exactly one
agent outputs the leader symbol and no agent's output differs in any
configuration reachable from it.  A multiset view could declare a
leader-swapping protocol safe; the per-agent view cannot.

Deciding safety by finite reachability is sound and complete for that
definition: outputs are a function of the configuration alone, and any
schedule prefix reaches some configuration in the reachable set, so "no agent
ever changes output under any schedule" holds iff every reachable
configuration carries the identical per-agent output vector.

Expected hitting times solve the first-step linear system over the reachable
space in exact rational arithmetic; a floating-point fallback with residual
reporting is available for spaces too large for comfortable Fraction work.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .core import LEADER, Interaction, Protocol, output_vector

DEFAULT_BUDGET = 10**7

Config = tuple[int, ...]


class BudgetExceededError(RuntimeError):
    """The potential configuration space exceeds the enumeration budget."""


class NonAbsorbingError(RuntimeError):
    """The target set is not reached with probability 1 from the start."""


@dataclass
class ConfigurationSpace:
    """All configurations reachable from the all-initial one, with structure.

    ``successors[i]`` maps successor index -> number of ordered interactions
    leading there (the multiset of successors over all n(n-1) interactions);
    ``edge_label[i]`` keeps one witness interaction per distinct successor.
    """

    protocol: Protocol
    n: int
    configs: list[Config]
    index: dict[Config, int]
    successors: list[dict[int, int]]
    edge_label: list[dict[int, Interaction]]

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def initial_index(self) -> int:
        return 0

    def reachable_from(self, i: int) -> frozenset[int]:
        """Indices reachable from config ``i`` (including ``i``)."""
        seen = {i}
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for k in self.successors[j]:
                if k not in seen:
                    seen.add(k)
                    frontier.append(k)
        return frozenset(seen)


def enumerate_reachable(
    protocol: Protocol, n: int, budget: Optional[int] = None
) -> ConfigurationSpace:
    """Breadth-first closure from the all-initial configuration.

    Raises :class:`BudgetExceededError` when the potential space ``|Q|**n``
    exceeds the budget (default 10**7 vector configurations).
    """
    if n < 2:
        raise ValueError("population size must be >= 2")
    if budget is None:
        budget = DEFAULT_BUDGET
    potential = protocol.num_states**n
    if potential > budget:
        raise BudgetExceededError(
            f"|Q|^n = {protocol.num_states}^{n} = {potential} exceeds budget {budget}"
        )

    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    table = protocol.transitions

    start: Config = (protocol.initial_state,) * n
    configs: list[Config] = [start]
    index: dict[Config, int] = {start: 0}
    successors: list[dict[int, int]] = [{}]
    edge_label: list[dict[int, Interaction]] = [{}]

    queue = deque([0])
    while queue:
        i = queue.popleft()
        base = configs[i]
        succ: dict[int, int] = {}
        labels: dict[int, Interaction] = {}
        for u, v in pairs:
            a2, b2 = table[base[u]][base[v]]
            if a2 == base[u] and b2 == base[v]:
                nxt = base
            else:
                mutable = list(base)
                mutable[u] = a2
                mutable[v] = b2
                nxt = tuple(mutable)
            j = index.get(nxt)
            if j is None:
                j = len(configs)
                index[nxt] = j
                configs.append(nxt)
                successors.append({})
                edge_label.append({})
                queue.append(j)
            succ[j] = succ.get(j, 0) + 1
            if j not in labels:
                labels[j] = Interaction(u, v)
        successors[i] = succ
        edge_label[i] = labels

    return ConfigurationSpace(
        protocol=protocol,
        n=n,
        configs=configs,
        index=index,
        successors=successors,
        edge_label=edge_label,
    )


@dataclass(frozen=True)
class SafetyVerdict:
    """Classification of one configuration against the safety criterion.

    Unsafe verdicts carry a witness: either the offending leader count, or a
    path of interactions to a reachable configuration where ``witness_agent``
    outputs something different.
    """

    config: Config
    safe: bool
    leader_count: int
    reason: Optional[str] = None
    witness_path: Optional[tuple[Interaction, ...]] = None
    witness_agent: Optional[int] = None
    witness_config: Optional[Config] = None


def _output_change_witness(space: ConfigurationSpace, i: int):
    """BFS for a reachable config whose per-agent outputs differ from ``i``'s."""
    protocol = space.protocol
    base_outputs = output_vector(protocol, space.configs[i])
    parents: dict[int, tuple[int, Interaction]] = {}
    seen = {i}
    queue = deque([i])
    while queue:
        j = queue.popleft()
        outputs = output_vector(protocol, space.configs[j])
        if outputs != base_outputs:
            agent = next(a for a, (x, y) in enumerate(zip(outputs, base_outputs)) if x != y)
            path = []
            k = j
            while k != i:
                k, e = parents[k]
                path.append(e)
            path.reverse()
            return tuple(path), agent, space.configs[j]
        for k in space.successors[j]:
            if k not in seen:
                seen.add(k)
                parents[k] = (j, space.edge_label[j][k])
                queue.append(k)
    return None


def is_safe(space: ConfigurationSpace, config: Config, leader_symbol: str = LEADER) -> SafetyVerdict:
    """Apply the two-clause safety criterion to one configuration.

    Safe iff (a) exactly one agent outputs the leader symbol, and (b) every
    configuration reachable from it has the identical per-agent output
    vector.
    """
    config = tuple(config)
    if config not in space.index:
        raise ValueError("configuration not in the enumerated space")
    i = space.index[config]
    outputs = output_vector(space.protocol, config)
    leader_count = outputs.count(leader_symbol)
    if leader_count != 1:
        return SafetyVerdict(
            config=config,
            safe=False,
            leader_count=leader_count,
            reason=f"leader count = {leader_count}, not 1",
        )
    witness = _output_change_witness(space, i)
    if witness is not None:
        path, agent, bad_config = witness
        return SafetyVerdict(
            config=config,
            safe=False,
            leader_count=leader_count,
            reason=f"agent {agent} changes output on a reachable path",
            witness_path=path,
            witness_agent=agent,
            witness_config=bad_config,
        )
    return SafetyVerdict(config=config, safe=True, leader_count=1)


def safety_verdicts(space: ConfigurationSpace, leader_symbol: str = LEADER) -> list[SafetyVerdict]:
    return [is_safe(space, c, leader_symbol) for c in space.configs]


def safe_indices(space: ConfigurationSpace, leader_symbol: str = LEADER) -> frozenset[int]:
    return frozenset(
        i for i, c in enumerate(space.configs) if is_safe(space, c, leader_symbol).safe
    )


def _solve_fractions(rows: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination with nonzero pivoting, exact arithmetic."""
    m = len(rows)
    aug = [row[:] + [rhs[i]] for i, row in enumerate(rows)]
    for col in range(m):
        pivot = next((r for r in range(col, m) if aug[r][col] != 0), None)
        if pivot is None:
            raise NonAbsorbingError("hitting-time system is singular")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = Fraction(1, 1) / aug[col][col]
        aug[col] = [x * inv for x in aug[col]]
        for r in range(m):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [x - factor * y for x, y in zip(aug[r], aug[col])]
    return [aug[r][m] for r in range(m)]


def _check_absorbing(space: ConfigurationSpace, targets: frozenset[int]) -> None:
    if not targets:
        raise NonAbsorbingError("target set is empty")
    # Backward closure: configs that can reach the target set.
    predecessors: dict[int, list[int]] = {i: [] for i in range(len(space))}
    for i, succ in enumerate(space.successors):
        for j in succ:
            predecessors[j].append(i)
    can_reach = set(targets)
    frontier = list(targets)
    while frontier:
        j = frontier.pop()
        for i in predecessors[j]:
            if i not in can_reach:
                can_reach.add(i)
                frontier.append(i)
    stuck = [i for i in range(len(space)) if i not in can_reach]
    if stuck:
        raise NonAbsorbingError(
            f"target unreachable from configuration {space.configs[stuck[0]]}"
        )


def expected_hitting_steps(
    space: ConfigurationSpace, target: Callable[[Config], bool]
) -> Fraction:
    """Exact expected number of steps from all-initial to the target set.

    Solves h(C) = 0 on targets and
    h(C) = 1 + (1/(n(n-1))) * sum over ordered interactions of h(successor)
    elsewhere, in rational arithmetic.  Raises :class:`NonAbsorbingError` if
    some reachable configuration cannot reach the target.
    """
    targets = frozenset(i for i, c in enumerate(space.configs) if target(c))
    _check_absorbing(space, targets)
    if space.initial_index in targets:
        return Fraction(0)

    transient = [i for i in range(len(space)) if i not in targets]
    pos = {i: r for r, i in enumerate(transient)}
    m = len(transient)
    total = space.n * (space.n - 1)

    rows = [[Fraction(0) for _ in range(m)] for _ in range(m)]
    rhs = [Fraction(total) for _ in range(m)]
    for r, i in enumerate(transient):
        rows[r][r] += Fraction(total)
        for j, count in space.successors[i].items():
            if j not in targets:
                rows[r][pos[j]] -= Fraction(count)
    solution = _solve_fractions(rows, rhs)
    return solution[pos[space.initial_index]]


def expected_hitting_steps_float(
    space: ConfigurationSpace, target: Callable[[Config], bool]
) -> tuple[float, float]:
    """Floating-point fallback solver; returns (value, max residual).

    Same system as :func:`expected_hitting_steps` via numpy; the residual is
    the max absolute row error of the solution, reported so callers can judge
    conditioning instead of trusting silently.
    """
    targets = frozenset(i for i, c in enumerate(space.configs) if target(c))
    _check_absorbing(space, targets)
    if space.initial_index in targets:
        return 0.0, 0.0

    transient = [i for i in range(len(space)) if i not in targets]
    pos = {i: r for r, i in enumerate(transient)}
    m = len(transient)
    total = float(space.n * (space.n - 1))

    matrix = np.zeros((m, m))
    rhs = np.full(m, total)
    for r, i in enumerate(transient):
        matrix[r, r] += total
        for j, count in space.successors[i].items():
            if j not in targets:
                matrix[r, pos[j]] -= count
    solution = np.linalg.solve(matrix, rhs)
    residual = float(np.abs(matrix @ solution - rhs).max())
    return float(solution[pos[space.initial_index]]), residual


def closed_form_pairwise(n: int) -> float:
    """Analytic expected stabilization steps of pairwise elimination:
    n(n-1) * sum_{k=2..n} 1/(k(k-1)), which telescopes to (n-1)**2."""
    if n < 2:
        raise ValueError("population size must be >= 2")
    total = Fraction(n * (n - 1)) * sum(
        (Fraction(1, k * (k - 1)) for k in range(2, n + 1)), Fraction(0)
    )
    return float(total)


def random_walk_outputs_stable(
    space: ConfigurationSpace, config: Config, steps: int, seed: int
) -> bool:
    """Monte Carlo probe: does a random walk from ``config`` ever change any
    agent's output within ``steps`` interactions?  Used to sanity-check safe
    verdicts from the exhaustive side."""
    from .core import apply_interaction_inplace, sample_interaction
    from .rng import Splitmix64

    protocol = space.protocol
    rng = Splitmix64(seed)
    states = list(config)
    base = output_vector(protocol, states)
    for _ in range(steps):
        e = sample_interaction(rng, space.n)
        apply_interaction_inplace(protocol, states, e)
        if output_vector(protocol, states) != base:
            return False
    return True


def replay_path(protocol: Protocol, config: Config, path: Sequence[Interaction]) -> Config:
    """Apply a witness path and return the resulting configuration."""
    from .core import apply_interaction_inplace

    states = list(config)
    for e in path:
        apply_interaction_inplace(protocol, states, e)
    return tuple(states)
