import numpy as np
import pytest
from hypothesis import given, strategies as st

from lagen.errors import (
    DeclarationError,
    LaSyntaxError,
    PartitionError,
    ShapeError,
    StructureError,
)
from lagen.lang import (
    Add,
    Mul,
    Ref,
    Structure,
    Transpose,
    check_properties,
    derive_structure,
    format_equation,
    parse_equation,
    partition_operand,
)

from cases import CHOLESKY, LYAPUNOV, SYLVESTER


def test_parse_cholesky():
    eq = parse_equation(CHOLESKY, name="chol")
    assert eq.unknowns == {"X"}
    assert eq.lhs == Mul(Transpose(Ref("X")), Ref("X"))
    assert eq.rhs == Ref("A")
    assert eq.operand("A").structure is Structure.SPD


def test_parse_sylvester():
    eq = parse_equation(SYLVESTER)
    assert eq.unknowns == {"X"}
    assert eq.lhs == Add(Mul(Ref("L"), Ref("X")), Mul(Ref("X"), Ref("U")))


def test_syntax_error_position():
    with pytest.raises(LaSyntaxError) as err:
        parse_equation("Equation: X^T * = A\n"
                       "A: Matrix(n,n), spd, input\n"
                       "X: Matrix(n,n), upper_triangular, output\n")
    assert err.value.line == 1
    assert err.value.col == 17  # the '=' token


def test_undeclared_and_duplicate():
    with pytest.raises(DeclarationError):
        parse_equation("Equation: X = A\nX: Matrix(n,n), general, output\n")
    with pytest.raises(DeclarationError):
        parse_equation("Equation: X = A\n"
                       "A: Matrix(n,n), general, input\n"
                       "A: Matrix(n,n), general, input\n"
                       "X: Matrix(n,n), general, output\n")


def test_output_must_appear():
    with pytest.raises(DeclarationError):
        parse_equation("Equation: A = B\n"
                       "A: Matrix(n,n), general, input\n"
                       "B: Matrix(n,n), general, input\n"
                       "X: Matrix(n,n), general, output\n")


def test_comments_and_blank_lines():
    eq = parse_equation("# header\n\nEquation: X = A  # trailing\n"
                        "A: Matrix(4,4), general, input\n"
                        "X: Matrix(4,4), general, output\n")
    assert eq.operand("A").rows.value == 4


# -- properties ------------------------------------------------------------

def test_transpose_of_lower_is_upper():
    eq = parse_equation(SYLVESTER)
    node = Transpose(Ref("L"))
    assert derive_structure(node, eq.operand_map) is Structure.UPPER_TRIANGULAR


def test_lyapunov_lhs_derivably_symmetric():
    eq = parse_equation(LYAPUNOV)
    ann = check_properties(eq)
    assert ann.structures[eq.lhs] is Structure.SYMMETRIC


def test_cholesky_lhs_symmetric():
    eq = parse_equation(CHOLESKY)
    ann = check_properties(eq)
    assert ann.structures[eq.lhs] is Structure.SYMMETRIC


def test_shape_mismatch():
    eq = parse_equation("Equation: A * B = X\n"
                        "A: Matrix(n,n), general, input\n"
                        "B: Matrix(m,m), general, input\n"
                        "X: Matrix(n,m), general, output\n")
    with pytest.raises(ShapeError):
        check_properties(eq)


def test_structure_contradiction():
    eq = parse_equation("Equation: L * X = S\n"
                        "L: Matrix(n,n), lower_triangular, input\n"
                        "X: Matrix(n,n), lower_triangular, input\n"
                        "S: Matrix(n,n), symmetric, output\n")
    with pytest.raises(StructureError):
        check_properties(eq)


# -- round-trip ------------------------------------------------------------

_names = st.sampled_from(["A", "B", "C", "L", "U", "X", "Y"])


def _exprs(names):
    atoms = names.flatmap(lambda n: st.sampled_from([Ref(n), Transpose(Ref(n))]))
    return st.recursive(
        atoms,
        lambda sub: st.one_of(
            st.tuples(sub, sub).map(lambda t: Add(*t)),
            st.tuples(sub, sub).map(lambda t: Mul(*t)),
        ),
        max_leaves=6,
    )


@given(lhs=_exprs(_names), rhs=_exprs(_names), data=st.data())
def test_round_trip(lhs, rhs, data):
    from lagen.lang import format_expr, _collect_refs

    used = sorted(_collect_refs(lhs) | _collect_refs(rhs))
    out = data.draw(st.sampled_from(used))
    decls = "".join(
        f"{n}: Matrix(n,n), general, {'output' if n == out else 'input'}\n"
        for n in used)
    text = f"Equation: {format_expr(lhs)} = {format_expr(rhs)}\n{decls}"
    eq = parse_equation(text)
    assert eq.lhs == lhs and eq.rhs == rhs
    again = parse_equation(format_equation(eq))
    assert again.lhs == eq.lhs and again.rhs == eq.rhs
    assert again.operands == eq.operands


# -- structure soundness (numeric) ------------------------------------------

def _random_structured(struct, n, rng):
    m = rng.uniform(-1, 1, (n, n))
    if struct is Structure.LOWER_TRIANGULAR:
        return np.tril(m)
    if struct is Structure.UPPER_TRIANGULAR:
        return np.triu(m)
    if struct in (Structure.SYMMETRIC, Structure.SPD):
        s = (m + m.T) / 2
        return s + n * np.eye(n) if struct is Structure.SPD else s
    return m


@pytest.mark.parametrize("source", [CHOLESKY, LYAPUNOV, SYLVESTER])
def test_structure_soundness(source):
    from lagen.verify import eval_expr
    from lagen.lang import _walk

    eq = parse_equation(source)
    ann = check_properties(eq)
    rng = np.random.default_rng(0)
    n = 6
    bindings = {op.name: _random_structured(op.structure, n, rng)
                for op in eq.operands}
    for node in _walk(eq.lhs):
        value = eval_expr(node, bindings, eq.operand_map)
        derived = ann.structures[node]
        if derived is Structure.LOWER_TRIANGULAR:
            assert np.all(np.triu(value, 1) == 0.0)
        elif derived is Structure.UPPER_TRIANGULAR:
            assert np.all(np.tril(value, -1) == 0.0)
        elif derived.is_symmetric():
            assert np.allclose(value, value.T, rtol=1e-14, atol=1e-14)


# -- partitioning -----------------------------------------------------------

def test_partition_lower_triangular():
    eq = parse_equation(SYLVESTER)
    part = partition_operand(eq.operand("L"), "2x2")
    structures = {q.label: q.structure for q in part.quadrants}
    assert structures == {
        "TL": Structure.LOWER_TRIANGULAR,
        "TR": Structure.ZERO,
        "BL": Structure.GENERAL,
        "BR": Structure.LOWER_TRIANGULAR,
    }


def test_partition_spd_alias():
    eq = parse_equation(CHOLESKY)
    part = partition_operand(eq.operand("A"), "2x2")
    assert part.quadrant("TL").structure is Structure.SPD
    assert part.quadrant("BR").structure is Structure.SPD
    assert part.quadrant("TR").structure is Structure.GENERAL
    assert part.quadrant("BL").alias == "A_TR"


def test_partition_general_1x2():
    eq = parse_equation(SYLVESTER)
    part = partition_operand(eq.operand("C"), "1x2")
    assert [q.structure for q in part.quadrants] == [Structure.GENERAL] * 2
    assert [q.label for q in part.quadrants] == ["L", "R"]


def test_partition_rejects_structured_nonsquare_grid():
    eq = parse_equation(SYLVESTER)
    with pytest.raises(PartitionError):
        partition_operand(eq.operand("L"), "1x2")


def test_partition_soundness_reassembly():
    rng = np.random.default_rng(1)
    n = 8
    for source, name in [(CHOLESKY, "A"), (SYLVESTER, "L"), (LYAPUNOV, "S")]:
        eq = parse_equation(source)
        op = eq.operand(name)
        m = _random_structured(op.structure, n, rng)
        part = partition_operand(op, "2x2")
        k = 3
        pieces = {"TL": m[:k, :k], "TR": m[:k, k:], "BL": m[k:, :k], "BR": m[k:, k:]}
        out = np.zeros_like(m)
        out[:k, :k] = pieces["TL"]
        out[:k, k:] = pieces["TR"]
        bl = part.quadrant("BL")
        out[k:, :k] = pieces["TR"].T if bl.alias else pieces["BL"]
        out[k:, k:] = pieces["BR"]
        assert np.array_equal(out, m)
