"""Task dependency graphs and loop-invariant enumeration.

A loop invariant is a dependency-closed, proper, non-empty subset of the
PME's tasks: the tasks already complete at the top of every loop iteration.
Each feasible invariant induces one algorithmic variant downstream.
"""

from dataclasses import dataclass

from .errors import LagenError, NoInvariantError


@dataclass(frozen=True)
class TaskGraph:
    nodes: tuple              # task ids in PME order
    edges: frozenset          # (producer id, consumer id)

    def predecessors(self, tid):
        return {a for a, b in self.edges if b == tid}

    def successors(self, tid):
        return {b for a, b in self.edges if a == tid}


def build_task_graph(pme):
    """Read-after-write dependencies between the PME's tasks.

    An update reads the solved blocks in its product; a solver reads its
    (updated) right-hand-side storage and any solved coefficient blocks.
    Updates accumulating into the same storage commute, so they carry no
    mutual edges.
    """
    unknowns = pme.equation.unknowns
    writer = {}
    for t in pme.tasks:
        if t.target is not None:          # solver: writes the solved block
            writer[t.output] = t.id
    edges = set()
    for t in pme.tasks:
        reads = set()
        for a in t.inputs:
            base = pme.env.parent.get(a.name, (None,))[0]
            if base in unknowns and a.name != t.output:
                reads.add(a.name)
        for name in reads:
            if name in writer:
                edges.add((writer[name], t.id))
        if t.target is not None:
            for u in pme.tasks:
                if u.target is None and u.output == t.target:
                    edges.add((u.id, t.id))
    graph = TaskGraph(tuple(t.id for t in pme.tasks), frozenset(edges))
    _assert_acyclic(graph)
    return graph


def _assert_acyclic(graph):
    indeg = {n: 0 for n in graph.nodes}
    for _, b in graph.edges:
        indeg[b] += 1
    queue = [n for n in graph.nodes if indeg[n] == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for m in graph.successors(n):
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if seen != len(graph.nodes):
        raise LagenError("cyclic task dependencies: pattern database or "
                         "canonicalization bug")


@dataclass(frozen=True)
class LoopInvariant:
    pme: object
    computed: frozenset       # task ids complete at the top of the iteration
    traversal: str            # "TL_to_BR" | "BR_to_TL"

    def label(self):
        order = {t.id: i for i, t in enumerate(self.pme.tasks)}
        ids = sorted(self.computed, key=order.__getitem__)
        return "{" + ",".join(ids) + "}"


def _downsets(nodes, preds):
    """All dependency-closed subsets, grown one addable task at a time."""
    found = {frozenset()}
    frontier = [frozenset()]
    while frontier:
        s = frontier.pop()
        for n in nodes:
            if n in s or not preds[n] <= s:
                continue
            t = s | {n}
            if t not in found:
                found.add(t)
                frontier.append(t)
    return found


def _reversal_symmetric(pme):
    """True when relabeling TL<->BR, TR<->BL maps the task set onto itself."""
    swap = {"TL": "BR", "BR": "TL", "TR": "BL", "BL": "TR"}

    def flip(name):
        for a, b in swap.items():
            if name.endswith("_" + a):
                return name[: -len(a)] + b
        return name

    def sig(t, relabel):
        f = flip if relabel else (lambda x: x)
        return (t.kind, f(t.output),
                tuple((f(a.name), a.trans) for a in t.inputs), t.sign)

    original = sorted(sig(t, False) for t in pme.tasks)
    flipped = sorted(sig(t, True) for t in pme.tasks)
    return original == flipped


def enumerate_invariants(pme):
    """Every feasible loop invariant of the PME, deterministically ordered.

    Feasibility is {dependency-closed, proper, non-empty}; the backward
    traversal is emitted only for PMEs symmetric under quadrant reversal.
    Ordered by subset cardinality, then by task-id order.
    """
    graph = build_task_graph(pme)
    preds = {n: graph.predecessors(n) for n in graph.nodes}
    order = {tid: i for i, tid in enumerate(graph.nodes)}
    closed = [s for s in _downsets(graph.nodes, preds)
              if s and len(s) < len(graph.nodes)]
    closed.sort(key=lambda s: (len(s), tuple(sorted(order[t] for t in s))))
    if not closed:
        raise NoInvariantError(
            "task set has no proper non-empty closed subset; "
            "fall back to the unblocked base case")
    traversals = ["TL_to_BR"]
    if _reversal_symmetric(pme):
        traversals.append("BR_to_TL")
    return [LoopInvariant(pme, frozenset(s), d)
            for d in traversals for s in closed]


def brute_force_invariants(pme):
    """Independent oracle: filter all 2^n subsets by the closure predicate.

    Only sensible for small task sets; used by tests against
    `enumerate_invariants`.
    """
    graph = build_task_graph(pme)
    preds = {n: graph.predecessors(n) for n in graph.nodes}
    nodes = list(graph.nodes)
    out = []
    for mask in range(1, 2 ** len(nodes) - 1):
        s = frozenset(n for i, n in enumerate(nodes) if mask >> i & 1)
        if all(preds[n] <= s for n in s):
            out.append(s)
    return out
