"""Big-M translation of logical statements into mixed-integer linear rows.

Rows are kept in the orientation ``expr <= 0`` over named variables and are
stacked by :func:`assemble` into the MLD constraint

    E2 delta + E3 z <= E1 u + E4 x + E5

Every big-M constant is derived from a declared :class:`Box`; nothing is
guessed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATE, INPUT, DELTA, AUX = "x", "u", "delta", "z"
KINDS = (STATE, INPUT, DELTA, AUX)
DEFAULT_EPS = 1e-6


class EncodingError(ValueError):
    pass


class VarTable:
    """Ordered declaration of named variables and their kinds."""

    def __init__(self):
        self.kinds: dict[str, str] = {}
        self.binary: set[str] = set()

    def declare(self, name: str, kind: str, binary: bool = False) -> str:
        if kind not in KINDS:
            raise EncodingError(f"unknown variable kind {kind!r}")
        if kind == DELTA:
            binary = True
        if kind == AUX and binary:
            raise EncodingError("auxiliary z variables are continuous")
        prev = self.kinds.get(name)
        if prev is not None and (prev != kind or (name in self.binary) != binary):
            raise EncodingError(f"conflicting declaration of {name!r}")
        self.kinds[name] = kind
        if binary:
            self.binary.add(name)
        return name

    def state(self, name, binary=False):
        return self.declare(name, STATE, binary)

    def input(self, name, binary=False):
        return self.declare(name, INPUT, binary)

    def delta(self, name):
        return self.declare(name, DELTA)

    def aux(self, name):
        return self.declare(name, AUX)

    def names(self, kind: str) -> list[str]:
        return [n for n, k in self.kinds.items() if k == kind]

    def require(self, name: str, kind: str | None = None, binary: bool | None = None):
        if name not in self.kinds:
            raise EncodingError(f"unregistered variable {name!r}")
        if kind is not None and self.kinds[name] != kind:
            raise EncodingError(f"{name!r} is declared as {self.kinds[name]}, not {kind}")
        if binary is not None and (name in self.binary) != binary:
            raise EncodingError(f"{name!r} must be {'binary' if binary else 'continuous'}")


@dataclass(frozen=True)
class LinExpr:
    """Affine expression sum_i c_i v_i + const over named variables."""

    coeffs: dict = field(default_factory=dict)
    const: float = 0.0

    @classmethod
    def var(cls, name: str, coef: float = 1.0) -> "LinExpr":
        return cls({name: float(coef)})

    @classmethod
    def constant(cls, value: float) -> "LinExpr":
        return cls({}, float(value))

    @staticmethod
    def lift(other) -> "LinExpr":
        if isinstance(other, LinExpr):
            return other
        if isinstance(other, str):
            return LinExpr.var(other)
        return LinExpr.constant(float(other))

    def __add__(self, other):
        other = LinExpr.lift(other)
        c = dict(self.coeffs)
        for k, v in other.coeffs.items():
            c[k] = c.get(k, 0.0) + v
        return LinExpr(c, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({k: -v for k, v in self.coeffs.items()}, -self.const)

    def __sub__(self, other):
        return self + (-LinExpr.lift(other))

    def __rsub__(self, other):
        return LinExpr.lift(other) - self

    def __mul__(self, s):
        s = float(s)
        return LinExpr({k: s * v for k, v in self.coeffs.items()}, s * self.const)

    __rmul__ = __mul__

    def evaluate(self, values: dict) -> float:
        return self.const + sum(v * values[k] for k, v in self.coeffs.items())

    def bounds(self, box: "Box") -> tuple[float, float]:
        lo = hi = self.const
        for k, v in self.coeffs.items():
            if v == 0.0:
                continue
            a, b = box.get(k)
            lo += min(v * a, v * b)
            hi += max(v * a, v * b)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise EncodingError("expression is unbounded over the box")
        return lo, hi


@dataclass
class Box:
    lower: dict = field(default_factory=dict)
    upper: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in set(self.lower) | set(self.upper):
            lo, hi = self.lower.get(k, -np.inf), self.upper.get(k, np.inf)
            if lo > hi:
                raise EncodingError(f"empty box for {k!r}: [{lo}, {hi}]")

    def set(self, name: str, lo: float, hi: float) -> "Box":
        if lo > hi:
            raise EncodingError(f"empty box for {name!r}: [{lo}, {hi}]")
        self.lower[name], self.upper[name] = float(lo), float(hi)
        return self

    def get(self, name: str) -> tuple[float, float]:
        lo, hi = self.lower.get(name, -np.inf), self.upper.get(name, np.inf)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise EncodingError(f"no finite bounds for {name!r}")
        return lo, hi


@dataclass
class IneqSystem:
    """Rows ``expr <= 0`` plus the auxiliary variables they introduced."""

    table: VarTable
    rows: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    auxes: list = field(default_factory=list)

    def add(self, expr: LinExpr):
        for k in expr.coeffs:
            self.table.require(k)
            kind = self.table.kinds[k]
            if kind == DELTA and k not in self.deltas:
                self.deltas.append(k)
            elif kind == AUX and k not in self.auxes:
                self.auxes.append(k)
        self.rows.append(expr)
        return self

    def extend(self, other: "IneqSystem"):
        for r in other.rows:
            self.add(r)
        return self

    def satisfied(self, values: dict, tol: float = 1e-9) -> bool:
        return all(r.evaluate(values) <= tol for r in self.rows)


def _binary(table, name):
    table.require(name, binary=True)
    return LinExpr.var(name)


def _check_expr(table, e: LinExpr):
    for k in e.coeffs:
        table.require(k)


def encode_or(table: VarTable, d1: str, d2: str) -> IneqSystem:
    """d1 OR d2:  -d1 - d2 <= -1."""
    a, b = _binary(table, d1), _binary(table, d2)
    return IneqSystem(table).add(1 - a - b)


def encode_iff_threshold(table: VarTable, d: str, e: LinExpr, box: Box, eps: float = DEFAULT_EPS) -> IneqSystem:
    """[d = 1] <-> [e >= 0], with e < 0 tightened to e <= -eps."""
    if eps <= 0:
        raise EncodingError("eps must be positive")
    dv = _binary(table, d)
    _check_expr(table, e)
    lo_e, hi_e = e.bounds(box)
    g, l = -lo_e, -hi_e  # bounds of -e
    sys = IneqSystem(table)
    # -e <= g (1 - d)
    sys.add(-e - g + g * dv)
    # -e >= eps + (l - eps) d
    sys.add(eps + (l - eps) * dv + e)
    return sys


def encode_implies(table: VarTable, d1: str, d2: str) -> IneqSystem:
    """[d1 = 1] -> [d2 = 1]:  d1 - d2 <= 0."""
    a, b = _binary(table, d1), _binary(table, d2)
    return IneqSystem(table).add(a - b)


def encode_iff_binary(table: VarTable, d1: str, d2: str) -> IneqSystem:
    """[d1 = 1] <-> [d2 = 1]: both implications."""
    sys = encode_implies(table, d1, d2)
    return sys.extend(encode_implies(table, d2, d1))


def encode_product(table: VarTable, z: str, d: str, e: LinExpr, box: Box) -> IneqSystem:
    """z = d * e on the box, via four big-M rows."""
    table.require(z, kind=AUX)
    dv = _binary(table, d)
    _check_expr(table, e)
    m, M = e.bounds(box)
    zv = LinExpr.var(z)
    sys = IneqSystem(table)
    sys.add(zv - M * dv)
    sys.add(m * dv - zv)
    sys.add(zv - e + m - m * dv)
    sys.add(e - M + M * dv - zv)
    return sys


def encode_piecewise(
    table: VarTable, F: str, d: str, branch0: LinExpr, branch1: LinExpr, box: Box
) -> IneqSystem:
    """F = branch0 if d = 0 else branch1.

    Uses two products z0 = d*branch0, z1 = d*branch1 and the tie
    F = branch0 - z0 + z1 written as a pair of opposite rows.
    """
    table.require(F, kind=AUX)
    z0, z1 = table.aux(f"{F}_d0"), table.aux(f"{F}_d1")
    sys = encode_product(table, z0, d, branch0, box)
    sys.extend(encode_product(table, z1, d, branch1, box))
    tie = LinExpr.var(F) - branch0 + LinExpr.var(z0) - LinExpr.var(z1)
    sys.add(tie)
    sys.add(-tie)
    return sys


def encode_le(table: VarTable, e: LinExpr) -> IneqSystem:
    """Plain linear row e <= 0."""
    _check_expr(table, e)
    return IneqSystem(table).add(e)


@dataclass
class Assembled:
    E1: np.ndarray
    E2: np.ndarray
    E3: np.ndarray
    E4: np.ndarray
    E5: np.ndarray
    u_names: list
    delta_names: list
    z_names: list
    x_names: list


def assemble(systems: list[IneqSystem], table: VarTable | None = None) -> Assembled:
    """Stack rows into (E1..E5); columns follow declaration order per kind."""
    merged = VarTable()
    tables = ([table] if table is not None else []) + [s.table for s in systems]
    for t in tables:
        for name, kind in t.kinds.items():
            merged.declare(name, kind, name in t.binary)
    cols = {k: merged.names(k) for k in KINDS}
    pos = {k: {n: i for i, n in enumerate(cols[k])} for k in KINDS}
    rows = [r for s in systems for r in s.rows]
    q = len(rows)
    E = {k: np.zeros((q, len(cols[k]))) for k in KINDS}
    E5 = np.zeros(q)
    for i, r in enumerate(rows):
        for name, c in r.coeffs.items():
            kind = merged.kinds[name]
            E[kind][i, pos[kind][name]] += c
        E5[i] = -r.const
    # expr <= 0 reads E2 d + E3 z - E1 u - E4 x <= E5
    return Assembled(
        E1=-E[INPUT] + 0.0,
        E2=E[DELTA],
        E3=E[AUX],
        E4=-E[STATE] + 0.0,
        E5=E5,
        u_names=cols[INPUT],
        delta_names=cols[DELTA],
        z_names=cols[AUX],
        x_names=cols[STATE],
    )
