"""Show that a Dirichlet problem with small right-hand side has no solution.

The exterior data is ``|y|`` outside the unit ball.  Any convex solution lies
below the convex envelope ``U`` of that data, so comparison rules it out
wherever the operator value of ``U`` exceeds the right-hand side.  The demo
reports the ball nodes where this happens.

Run with ``python3 demos/dirichlet_obstruction.py``.
"""

from nlma.solver import dirichlet_demo

v = dirichlet_demo()
print(f"verdict: {v.verdict}")
for key, val in sorted(v.detail.items()):
    print(f"  {key}: {val}")
