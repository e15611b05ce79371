"""The three reference equations used throughout the test suite."""

CHOLESKY = """\
# upper Cholesky factor of an SPD matrix
Equation: X^T * X = A
A: Matrix(n,n), spd, input
X: Matrix(n,n), upper_triangular, output
"""

LYAPUNOV = """\
Equation: L * X + X * L^T = S
L: Matrix(n,n), lower_triangular, input
S: Matrix(n,n), symmetric, input
X: Matrix(n,n), symmetric, output
"""

SYLVESTER = """\
Equation: L * X + X * U = C
L: Matrix(n,n), lower_triangular, input
U: Matrix(n,n), upper_triangular, input
C: Matrix(n,n), general, input
X: Matrix(n,n), general, output
"""

ALL = {"chol": CHOLESKY, "lyap": LYAPUNOV, "sylv": SYLVESTER}
