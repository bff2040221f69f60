"""The sixteen two-input Boolean gates, their relaxations and derivatives.

A gate is identified by the integer encoding of its truth table: bit 0 of
the index is the output at (a=0, b=0), bit 1 at (a=0, b=1), bit 2 at
(a=1, b=0) and bit 3 at (a=1, b=1).  Under this order FALSE is 0, AND is
8, OR is 14 and TRUE is 15, and the index round-trips through checkpoints
as a single byte.

The relaxed form of a gate is its multilinear extension

    g(a, b) = t00 (1-a)(1-b) + t01 (1-a) b + t10 a (1-b) + t11 a b,

i.e. the expectation of the gate output under independent Bernoulli(a),
Bernoulli(b) inputs.  It agrees with the discrete gate on {0,1}^2, maps
[0,1]^2 into [0,1], and for AND/OR simplifies to a*b and a+b-a*b.  The
functions below use the simplified per-gate expressions so those two
reductions hold exactly, not just up to rounding.
"""

from __future__ import annotations

import enum

import numpy as np


class Gate(enum.IntEnum):
    FALSE = 0
    NOR = 1
    NOT_A_AND_B = 2
    NOT_A = 3
    A_AND_NOT_B = 4
    NOT_B = 5
    XOR = 6
    NAND = 7
    AND = 8
    XNOR = 9
    PASS_B = 10
    A_IMPLIES_B = 11
    PASS_A = 12
    B_IMPLIES_A = 13
    OR = 14
    TRUE = 15


N_GATES = 16

# Row i = (t00, t01, t10, t11) for gate index i; bit p of i is the output
# at input pattern p = 2a + b.
TRUTH_TABLES = np.array(
    [[(i >> p) & 1 for p in range(4)] for i in range(N_GATES)], dtype=np.uint8
)
TRUTH_TABLES_F = TRUTH_TABLES.astype(np.float64)

# Gate whose relaxed form is the identity on its first input; layer
# initialisation biases toward it to keep deep stacks signal-preserving.
RESIDUAL_GATE = Gate.PASS_A


def truth_table(kind) -> tuple[int, int, int, int]:
    """(t00, t01, t10, t11) for a gate index or Gate member."""
    i = int(kind)
    if not 0 <= i < N_GATES:
        raise ValueError(f"gate index out of range: {i}")
    return ((i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1, (i >> 3) & 1)


def discrete_eval(kind, a, b):
    """Boolean gate output; `a`, `b` are bits (scalars or arrays)."""
    pattern = 2 * a + b
    out = (int(kind) >> pattern) & 1
    return out


# Simplified multilinear forms, one expression per gate.  `m` is a*b.
_RELAXED = {
    Gate.FALSE: lambda a, b, m: np.zeros_like(m) if isinstance(m, np.ndarray) else 0.0,
    Gate.NOR: lambda a, b, m: 1 - (a + b - m),
    Gate.NOT_A_AND_B: lambda a, b, m: b - m,
    Gate.NOT_A: lambda a, b, m: 1 - a,
    Gate.A_AND_NOT_B: lambda a, b, m: a - m,
    Gate.NOT_B: lambda a, b, m: 1 - b,
    Gate.XOR: lambda a, b, m: a + b - 2 * m,
    Gate.NAND: lambda a, b, m: 1 - m,
    Gate.AND: lambda a, b, m: m,
    Gate.XNOR: lambda a, b, m: 1 - (a + b - 2 * m),
    Gate.PASS_B: lambda a, b, m: b,
    Gate.A_IMPLIES_B: lambda a, b, m: 1 - a + m,
    Gate.PASS_A: lambda a, b, m: a,
    Gate.B_IMPLIES_A: lambda a, b, m: 1 - b + m,
    Gate.OR: lambda a, b, m: a + b - m,
    Gate.TRUE: lambda a, b, m: np.ones_like(m) if isinstance(m, np.ndarray) else 1.0,
}

# (dg/da, dg/db) for each gate, again in simplified form.
_PARTIALS = {
    Gate.FALSE: lambda a, b: (_zero(a), _zero(b)),
    Gate.NOR: lambda a, b: (b - 1, a - 1),
    Gate.NOT_A_AND_B: lambda a, b: (-b, 1 - a),
    Gate.NOT_A: lambda a, b: (_full(a, -1.0), _zero(b)),
    Gate.A_AND_NOT_B: lambda a, b: (1 - b, -a),
    Gate.NOT_B: lambda a, b: (_zero(a), _full(b, -1.0)),
    Gate.XOR: lambda a, b: (1 - 2 * b, 1 - 2 * a),
    Gate.NAND: lambda a, b: (-b, -a),
    Gate.AND: lambda a, b: (b, a),
    Gate.XNOR: lambda a, b: (2 * b - 1, 2 * a - 1),
    Gate.PASS_B: lambda a, b: (_zero(a), _full(b, 1.0)),
    Gate.A_IMPLIES_B: lambda a, b: (b - 1, a),
    Gate.PASS_A: lambda a, b: (_full(a, 1.0), _zero(b)),
    Gate.B_IMPLIES_A: lambda a, b: (b, a - 1),
    Gate.OR: lambda a, b: (1 - b, 1 - a),
    Gate.TRUE: lambda a, b: (_zero(a), _zero(b)),
}


def _zero(x):
    return np.zeros_like(x, dtype=np.float64) if isinstance(x, np.ndarray) else 0.0


def _full(x, v):
    return np.full_like(x, v, dtype=np.float64) if isinstance(x, np.ndarray) else v


def relaxed_eval(kind, a, b):
    """Relaxed gate output for inputs in [0, 1] (scalars or arrays)."""
    assert np.all((np.asarray(a) >= 0) & (np.asarray(a) <= 1)), "input a outside [0,1]"
    assert np.all((np.asarray(b) >= 0) & (np.asarray(b) <= 1)), "input b outside [0,1]"
    return _RELAXED[Gate(int(kind))](a, b, a * b)


def relaxed_partials(kind, a, b):
    """(dg/da, dg/db) of the relaxed gate."""
    return _PARTIALS[Gate(int(kind))](a, b)
