import pytest

from lagen.errors import NoInvariantError
from lagen.invariants import (
    LoopInvariant,
    brute_force_invariants,
    build_task_graph,
    enumerate_invariants,
)
from lagen.lang import parse_equation
from lagen.pme import derive_pmes

from cases import CHOLESKY, LYAPUNOV, SYLVESTER


def _pme(source, name="eq"):
    return derive_pmes(parse_equation(source, name=name))[0]


def test_cholesky_graph_is_chain():
    graph = build_task_graph(_pme(CHOLESKY))
    assert set(graph.edges) == {("T1", "T2"), ("T2", "T3"), ("T3", "T4")}


def test_sylvester_graph_is_diamond():
    graph = build_task_graph(_pme(SYLVESTER))
    assert set(graph.edges) == {
        ("T1", "T2"), ("T2", "T3"),          # TR chain
        ("T1", "T4"), ("T4", "T5"),          # BL chain
        ("T3", "T6"), ("T5", "T7"),          # BR updates
        ("T6", "T8"), ("T7", "T8"),
    }


def test_lyapunov_graph():
    graph = build_task_graph(_pme(LYAPUNOV))
    assert set(graph.edges) == {
        ("T1", "T2"), ("T2", "T3"),
        ("T3", "T4"), ("T3", "T5"),
        ("T4", "T6"), ("T5", "T6"),
    }


def test_cholesky_invariants_exact():
    invs = enumerate_invariants(_pme(CHOLESKY))
    assert [sorted(i.computed) for i in invs] == [
        ["T1"], ["T1", "T2"], ["T1", "T2", "T3"]]
    assert all(i.traversal == "TL_to_BR" for i in invs)


def test_sylvester_invariant_count():
    invs = enumerate_invariants(_pme(SYLVESTER))
    assert len(invs) >= 4
    # two independent chains of 3 hanging off T1, sink included only when
    # both chains complete: 4*4 combinations plus the sink state, minus
    # empty and full
    assert len(invs) == 16


def test_lyapunov_invariant_count():
    assert len(enumerate_invariants(_pme(LYAPUNOV))) == 6


@pytest.mark.parametrize("source", [CHOLESKY, SYLVESTER, LYAPUNOV])
def test_matches_brute_force(source):
    pme = _pme(source)
    invs = enumerate_invariants(pme)
    assert {i.computed for i in invs} == set(brute_force_invariants(pme))


@pytest.mark.parametrize("source", [CHOLESKY, SYLVESTER, LYAPUNOV])
def test_closure_and_bound(source):
    pme = _pme(source)
    graph = build_task_graph(pme)
    invs = enumerate_invariants(pme)
    assert len(invs) <= 2 ** len(pme.tasks) - 2
    for inv in invs:
        closure = set()
        stack = list(inv.computed)
        while stack:
            t = stack.pop()
            if t in closure:
                continue
            closure.add(t)
            stack.extend(graph.predecessors(t))
        assert closure == set(inv.computed)


def test_ordering_by_cardinality():
    invs = enumerate_invariants(_pme(SYLVESTER))
    sizes = [len(i.computed) for i in invs]
    assert sizes == sorted(sizes)


def test_copy_equation_emits_backward_traversal():
    # X = A has four independent per-quadrant copies; the PME maps onto
    # itself under quadrant reversal, so both traversals are emitted
    pme = _pme("Equation: X = A\n"
               "A: Matrix(n,n), general, input\n"
               "X: Matrix(n,n), general, output\n")
    graph = build_task_graph(pme)
    assert not graph.edges
    invs = enumerate_invariants(pme)
    assert {i.traversal for i in invs} == {"TL_to_BR", "BR_to_TL"}


def test_single_task_raises():
    from lagen.pme import PME, Task

    eq = parse_equation(CHOLESKY)
    single = PME(eq, {}, (Task(id="T1", kind="CHOL", output="X_TL",
                               inputs=(), cell=(0, 0), target="A_TL"),),
                 derive_pmes(eq)[0].env)
    with pytest.raises(NoInvariantError):
        enumerate_invariants(single)
