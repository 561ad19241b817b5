"""Reader and writer for a CPLEX-style LP text subset.

Grammar accepted by :func:`read_lp`::

    \\ comment
    Minimize | Maximize
     obj: <expr>
    Subject To
     <name>: <expr> <= | >= | = <number>
    Bounds
     <number> <= <var> <= <number>
     <var> >= | <= | = <number>
     <var> free
    Binary | General
     <var> <var> ...
    End

Expressions are sums of ``[sign] [number] var`` terms and may continue over
several lines.  Variables named ``x<i>`` map to column ``i``; any other
names are numbered in order of first appearance.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .milp import BINARY, CONTINUOUS, EQ, GE, INTEGER, LE, SENSE_SYMBOLS, MilpInstance

TERMS_PER_LINE = 8


class LpParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _num(v: float) -> str:
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    s = format(v, ".17g")
    return "0" if s == "-0" else s


def _expr(cols, vals, indent=" ") -> list[str]:
    terms = []
    for k, (j, a) in enumerate(zip(cols, vals)):
        sign = "-" if (a < 0 or (a == 0 and math.copysign(1, a) < 0)) else "+"
        mag = _num(abs(a))
        if k == 0:
            terms.append(f"{'-' if sign == '-' else ''}{mag} x{j}")
        else:
            terms.append(f"{sign} {mag} x{j}")
    lines = []
    for s in range(0, len(terms), TERMS_PER_LINE):
        lines.append(indent + " ".join(terms[s:s + TERMS_PER_LINE]))
    return lines


def write_lp(inst: MilpInstance) -> str:
    """Serialize ``inst`` canonically (17 significant digits, ``x<i>`` names)."""
    out = [f"\\ name: {inst.name}", "Minimize"]
    n = inst.num_vars
    obj = _expr(range(n), inst.c)
    if obj:
        obj[0] = " obj: " + obj[0].lstrip()
    else:
        obj = [" obj:"]
    out += obj
    out.append("Subject To")
    A = inst.A
    for r in range(inst.num_cons):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        cols, vals = A.indices[lo:hi], A.data[lo:hi]
        if cols.size == 0:
            cols, vals = [0], [0.0]
        body = _expr(cols, vals)
        body[0] = f" c{r}: " + body[0].lstrip()
        body[-1] += f" {SENSE_SYMBOLS[inst.senses[r]]} {_num(inst.rhs[r])}"
        out += body
    bounds = []
    for j in range(n):
        lo, hi, kind = inst.lb[j], inst.ub[j], inst.kinds[j]
        default = (0.0, 1.0) if kind == BINARY else (0.0, math.inf)
        if (lo, hi) == default:
            continue
        if lo == -math.inf and hi == math.inf:
            bounds.append(f" x{j} free")
        else:
            bounds.append(f" {_num(lo)} <= x{j} <= {_num(hi)}")
    if bounds:
        out.append("Bounds")
        out += bounds
    for header, kind in (("Binary", BINARY), ("General", INTEGER)):
        idx = np.flatnonzero(inst.kinds == kind)
        if idx.size:
            out.append(header)
            for s in range(0, idx.size, TERMS_PER_LINE * 2):
                out.append(" " + " ".join(f"x{j}" for j in idx[s:s + TERMS_PER_LINE * 2]))
    out.append("End")
    return "\n".join(out) + "\n"


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<op><=|>=|=<|=>|<|>|=)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|(?i:inf(?:inity)?)(?![A-Za-z0-9_]))
  | (?P<sign>[+-])
  | (?P<colon>:)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.\[\]#$%&~@^'{}|!]*)
""", re.VERBOSE)

_SECTIONS = {
    "minimize": "min", "minimise": "min", "minimum": "min", "min": "min",
    "maximize": "max", "maximise": "max", "maximum": "max", "max": "max",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "binary": "bin", "binaries": "bin", "bin": "bin",
    "general": "gen", "generals": "gen", "gen": "gen", "integer": "gen", "integers": "gen",
    "end": "end",
}


def _tokenize(text: str, lineno: int, offset: int = 0):
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise LpParseError(f"unexpected character {text[pos]!r}", lineno, offset + pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), lineno, offset + pos + 1))
        pos = m.end()
    return toks


class _Model:
    def __init__(self):
        self.names: dict[str, int] = {}
        self.order: list[str] = []

    def var(self, name: str) -> str:
        if name not in self.names:
            self.names[name] = len(self.order)
            self.order.append(name)
        return name


def _parse_expr(toks, model: _Model, stop_at_op: bool):
    """Parse ``[sign] [num] name`` terms; returns (terms dict, remaining tokens)."""
    terms: dict[str, float] = {}
    i = 0
    while i < len(toks):
        kind, text, ln, col = toks[i]
        if kind == "op" and stop_at_op:
            break
        sign = 1.0
        while i < len(toks) and toks[i][0] == "sign":
            if toks[i][1] == "-":
                sign = -sign
            i += 1
        if i >= len(toks):
            raise LpParseError("dangling sign", ln, col)
        coef = 1.0
        if toks[i][0] == "num":
            coef = float(toks[i][1])
            i += 1
            if i >= len(toks) or toks[i][0] != "name":
                k = toks[i - 1]
                if i < len(toks) and toks[i][0] == "op" and stop_at_op:
                    raise LpParseError("constant terms on the left-hand side are not supported",
                                       k[2], k[3])
                raise LpParseError("expected a variable name after coefficient", k[2], k[3])
        kind, text, ln, col = toks[i]
        if kind != "name":
            raise LpParseError(f"expected a term, found {text!r}", ln, col)
        name = model.var(text)
        terms[name] = terms.get(name, 0.0) + sign * coef
        i += 1
    return terms, toks[i:]


def _read_number(toks, idx):
    sign = 1.0
    while idx < len(toks) and toks[idx][0] == "sign":
        if toks[idx][1] == "-":
            sign = -sign
        idx += 1
    if idx >= len(toks) or toks[idx][0] != "num":
        where = toks[min(idx, len(toks) - 1)]
        raise LpParseError("expected a number", where[2], where[3])
    text = toks[idx][1].lower()
    value = math.inf if text.startswith("inf") else float(text)
    return sign * value, idx + 1


def _sense(op: str) -> str:
    return {"<=": LE, "=<": LE, "<": LE, ">=": GE, "=>": GE, ">": GE, "=": EQ}[op]


def read_lp(text: str) -> MilpInstance:
    """Parse LP text into a :class:`MilpInstance` (maximization objectives are negated)."""
    model = _Model()
    name = "milp"
    section = None
    maximize = False
    obj_toks: list = []
    con_chunks: list = []  # list of (label, tokens)
    bound_lines: list = []
    kind_decl: dict[str, str] = {}
    seen_end = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw
        if "\\" in line:
            comment = line[line.index("\\") + 1:].strip()
            if comment.startswith("name:") and section is None:
                name = comment[5:].strip() or name
            line = line[:line.index("\\")]
        stripped = line.strip()
        if not stripped:
            continue
        if seen_end:
            raise LpParseError("content after End", lineno, 1)
        key = " ".join(stripped.lower().split())
        if key in _SECTIONS:
            section = _SECTIONS[key]
            if section == "max":
                maximize, section = True, "min"
            if section == "end":
                seen_end = True
            continue
        offset = len(line) - len(line.lstrip())
        toks = _tokenize(stripped, lineno, offset)
        if section is None:
            raise LpParseError("expected an objective section header", lineno, offset + 1)
        if section == "min":
            if len(toks) >= 2 and toks[0][0] == "name" and toks[1][0] == "colon":
                toks = toks[2:]
            obj_toks += toks
        elif section == "st":
            if len(toks) >= 2 and toks[0][0] == "name" and toks[1][0] == "colon":
                con_chunks.append([toks[0][1], toks[2:]])
            elif con_chunks and not _after_op(con_chunks[-1][1]):
                con_chunks[-1][1] = con_chunks[-1][1] + toks
            else:
                con_chunks.append([f"R{len(con_chunks)}", toks])
        elif section == "bounds":
            bound_lines.append(toks)
        elif section in ("bin", "gen"):
            for kind, tok, ln, col in toks:
                if kind != "name":
                    raise LpParseError(f"expected a variable name, found {tok!r}", ln, col)
                kind_decl[tok] = BINARY if section == "bin" else INTEGER
        else:
            raise LpParseError("unexpected content", lineno, offset + 1)

    if section is None:
        raise LpParseError("empty model", 1, 1)

    obj_terms, rest = _parse_expr(obj_toks, model, stop_at_op=False)
    if rest:
        raise LpParseError("unexpected token in objective", rest[0][2], rest[0][3])

    cons = []
    for label, toks in con_chunks:
        terms, rest = _parse_expr(toks, model, stop_at_op=True)
        if not rest:
            where = toks[-1] if toks else (label, label, 0, 0)
            raise LpParseError(f"constraint {label} lacks a sense", where[2], where[3])
        op = rest[0]
        rhs, k = _read_number(rest, 1)
        if k != len(rest):
            raise LpParseError("unexpected token after right-hand side", rest[k][2], rest[k][3])
        cons.append((terms, _sense(op[1]), rhs))

    lower: dict[str, float] = {}
    upper: dict[str, float] = {}
    for toks in bound_lines:
        _parse_bound(toks, model, lower, upper)
    for v in kind_decl:
        model.var(v)

    names = model.order
    if names and all(re.fullmatch(r"x\d+", v) for v in names):
        index = {v: int(v[1:]) for v in names}
        n = max(index.values()) + 1
    else:
        index = dict(model.names)
        n = len(names)

    c = np.zeros(n)
    for v, a in obj_terms.items():
        c[index[v]] += a
    kinds = np.full(n, CONTINUOUS)
    for v, k in kind_decl.items():
        kinds[index[v]] = k
    lb = np.zeros(n)
    ub = np.where(kinds == BINARY, 1.0, math.inf)
    for v, val in lower.items():
        lb[index[v]] = val
    for v, val in upper.items():
        ub[index[v]] = val

    rows, cols, vals, senses, rhs = [], [], [], [], []
    for r, (terms, sense, b) in enumerate(cons):
        for v, a in terms.items():
            rows.append(r)
            cols.append(index[v])
            vals.append(a)
        senses.append(sense)
        rhs.append(b)
    return MilpInstance(c=-c if maximize else c, rows=rows, cols=cols, vals=vals,
                        senses=senses, rhs=rhs, lb=lb, ub=ub, kinds=kinds, name=name)


def _after_op(toks) -> bool:
    """True if the constraint tokens already hold a complete ``op number`` tail."""
    for i, t in enumerate(toks):
        if t[0] == "op":
            return any(u[0] == "num" for u in toks[i + 1:])
    return False


def _parse_bound(toks, model, lower, upper):
    kinds = [t[0] for t in toks]
    first = toks[0]
    if kinds == ["name", "name"] and toks[1][1].lower() == "free":
        v = model.var(toks[0][1])
        lower[v], upper[v] = -math.inf, math.inf
        return
    # leading number form: num op name [op num]
    if kinds[0] in ("num", "sign"):
        lo, i = _read_number(toks, 0)
        if i + 1 >= len(toks) or toks[i][0] != "op" or toks[i + 1][0] != "name":
            raise LpParseError("malformed bound", first[2], first[3])
        op, v = toks[i][1], model.var(toks[i + 1][1])
        _apply(lower, upper, v, _flip(op), lo)
        i += 2
        if i < len(toks):
            if toks[i][0] != "op":
                raise LpParseError("malformed bound", toks[i][2], toks[i][3])
            hi, k = _read_number(toks, i + 1)
            if k != len(toks):
                raise LpParseError("unexpected token in bound", toks[k][2], toks[k][3])
            _apply(lower, upper, v, toks[i][1], hi)
        return
    if kinds[0] == "name" and len(toks) >= 3 and toks[1][0] == "op":
        v = model.var(toks[0][1])
        val, k = _read_number(toks, 2)
        if k != len(toks):
            raise LpParseError("unexpected token in bound", toks[k][2], toks[k][3])
        _apply(lower, upper, v, toks[1][1], val)
        return
    raise LpParseError("malformed bound", first[2], first[3])


def _flip(op: str) -> str:
    return {"<=": ">=", "=<": ">=", "<": ">=", ">=": "<=", "=>": "<=", ">": "<=", "=": "="}[op]


def _apply(lower, upper, v, op, val):
    """Apply ``v op val``."""
    s = _sense(op)
    if s == LE:
        upper[v] = val
    elif s == GE:
        lower[v] = val
    else:
        lower[v] = upper[v] = val


def read_lp_file(path) -> MilpInstance:
    with open(path) as fh:
        return read_lp(fh.read())


def write_lp_file(inst: MilpInstance, path) -> None:
    with open(path, "w") as fh:
        fh.write(write_lp(inst))
