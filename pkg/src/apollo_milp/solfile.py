"""Solution file dialects shared by the subprocess backend and the HiGHS shim.

``plain``::

    # status: optimal | feasible | infeasible | timelimit
    # objective: -12.5
    x0 1
    x3 0.5

Variables not listed are read as 0.  A file without value lines, objective
line or an ``optimal``/``feasible`` status carries no incumbent.

``xml-lite``::

    <solution status="optimal" objective="-12.5">
      <var name="x0" value="1"/>
    </solution>

A missing or empty solution file means no incumbent was found.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional

import numpy as np

INCUMBENT_WORDS = ("optimal", "feasible")


class SolutionParseError(ValueError):
    """Malformed solution file; ``raw`` keeps the offending text."""

    def __init__(self, message, raw: str = ""):
        super().__init__(message)
        self.raw = raw


def _number(text, what, raw):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise SolutionParseError(f"bad {what}: {text!r}", raw) from None


def parse_solution(text: str, dialect: str, num_vars: int):
    """Return ``(status_word or None, values or None, objective or None)``."""
    index = {f"x{j}": j for j in range(num_vars)}
    status, objective, values = None, None, {}
    if dialect == "plain":
        for ln, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, val = line[1:].partition(":")
                key = key.strip().lower()
                if sep and key == "status":
                    status = val.strip().lower()
                elif sep and key == "objective":
                    objective = _number(val.strip(), f"objective on line {ln}", text)
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in index:
                raise SolutionParseError(f"cannot parse line {ln}: {line!r}", text)
            values[index[parts[0]]] = _number(parts[1], f"value on line {ln}", text)
    elif dialect == "xml-lite":
        try:
            root = ET.fromstring(text)
        except ET.ParseError as exc:
            raise SolutionParseError(f"malformed xml-lite solution: {exc}", text) from None
        if root.tag != "solution":
            raise SolutionParseError("root element must be <solution>", text)
        status = (root.get("status") or "").lower() or None
        if root.get("objective") is not None:
            objective = _number(root.get("objective"), "objective", text)
        for el in root.iter("var"):
            name = el.get("name")
            if name not in index:
                raise SolutionParseError(f"unknown variable {name!r}", text)
            values[index[name]] = _number(el.get("value"), f"value of {name}", text)
    else:
        raise ValueError(f"unknown dialect {dialect!r}")
    if not values and objective is None and status not in INCUMBENT_WORDS:
        return status, None, objective
    x = np.zeros(num_vars)
    for j, v in values.items():
        x[j] = v
    return status, x, objective


def format_solution(x, status: str, objective: Optional[float] = None,
                    dialect: str = "plain") -> str:
    """Serialize ``x`` (or no incumbent when ``x`` is None) in ``dialect``."""
    if dialect == "plain":
        lines = [f"# status: {status}"]
        if x is not None:
            if objective is not None:
                lines.append(f"# objective: {float(objective)!r}")
            lines += [f"x{j} {float(v)!r}" for j, v in enumerate(x)]
        return "\n".join(lines) + "\n"
    if dialect != "xml-lite":
        raise ValueError(f"unknown dialect {dialect!r}")
    root = ET.Element("solution", status=status)
    if x is not None:
        if objective is not None:
            root.set("objective", repr(float(objective)))
        for j, v in enumerate(x):
            ET.SubElement(root, "var", name=f"x{j}", value=repr(float(v)))
    return ET.tostring(root, encoding="unicode") + "\n"
