"""Strict config loading, law strings and a small arithmetic evaluator."""
from __future__ import annotations

import ast
import math
import operator
import re
import sys

from .errors import ConfigError, DomainError
from .laws import FiniteSupport, PoissonGaussian, critical_gaussian

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi, "e": math.e, "inf": math.inf}
_FUNCS = {"log": math.log, "exp": math.exp, "sqrt": math.sqrt, "cbrt": lambda x: math.copysign(abs(x) ** (1 / 3), x)}


def safe_eval(text: str) -> float:
    """Evaluate ``-log(2)``, ``3*pi**2/2`` and the like; nothing else."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"unsupported expression element {ast.dump(node)[:40]}")

    try:
        return float(ev(ast.parse(str(text).strip(), mode="eval")))
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError, TypeError) as exc:
        raise ValueError(f"cannot evaluate {text!r}: {exc}") from None


def as_float(value, field: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"field {field!r}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return safe_eval(value)
    except ValueError as exc:
        raise ConfigError(f"field {field!r}: {exc}") from None


def as_int(value, field: str) -> int:
    f = as_float(value, field)
    if not f.is_integer():
        raise ConfigError(f"field {field!r}: expected an integer, got {value!r}")
    return int(f)


def as_list(value, conv, field: str) -> list:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    elif not isinstance(value, (list, tuple)):
        value = [value]
    return [conv(v, field) for v in value]


# ---------------------------------------------------------------- laws

def parse_law(spec) -> object:
    """Law from a string or a config table.

    Strings: ``critical:SIGMA_SQ``, ``poisson:M:MU:S0SQ`` and
    ``finite:P@x,y;P@x`` (an empty displacement list means no children).
    """
    if isinstance(spec, dict):
        return _law_from_table(spec)
    text = str(spec)
    kind, _, rest = text.partition(":")
    try:
        if kind == "critical":
            return critical_gaussian(as_float(rest or "1", "law.sigma_sq"))
        if kind == "poisson":
            parts = rest.split(":")
            if len(parts) != 3:
                raise ConfigError(f"law {text!r}: expected poisson:m:mu:s0sq")
            m, mu, v = (as_float(p, f"law.{n}") for p, n in zip(parts, ("m", "mu", "s0sq")))
            return PoissonGaussian(m, mu, v)
        if kind == "finite":
            outcomes = []
            for chunk in rest.split(";"):
                p, at, xs = chunk.partition("@")
                if not at:
                    raise ConfigError(f"law {text!r}: outcome {chunk!r} lacks '@'")
                outcomes.append((as_float(p, "law.p"),
                                 [as_float(x, "law.displacement") for x in xs.split(",") if x.strip()]))
            return FiniteSupport(outcomes)
    except DomainError as exc:
        raise ConfigError(f"law {text!r}: {exc}") from None
    raise ConfigError(f"law {text!r}: kind must be critical, poisson or finite")


def _law_from_table(tab: dict):
    kind = tab.get("kind")
    allowed = {"critical": {"kind", "sigma_sq"}, "poisson": {"kind", "m", "mu", "s0sq"},
               "finite": {"kind", "outcomes"}}
    if kind not in allowed:
        raise ConfigError(f"field 'law.kind': expected one of {sorted(allowed)}, got {kind!r}")
    extra = set(tab) - allowed[kind]
    if extra:
        raise ConfigError(f"unknown field(s) in [law]: {sorted(extra)}")
    try:
        if kind == "critical":
            return critical_gaussian(as_float(tab.get("sigma_sq", 1.0), "law.sigma_sq"))
        if kind == "poisson":
            return PoissonGaussian(*(as_float(tab[k], f"law.{k}") for k in ("m", "mu", "s0sq")))
        outs = [(as_float(p, "law.outcomes"), [as_float(x, "law.outcomes") for x in xs])
                for p, xs in tab["outcomes"]]
        return FiniteSupport(outs)
    except KeyError as exc:
        raise ConfigError(f"missing field 'law.{exc.args[0]}'") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'law': {exc}") from None


def law_to_string(law) -> str:
    if isinstance(law, PoissonGaussian):
        return f"poisson:{law.m!r}:{law.mu!r}:{law.s0sq!r}"
    return "finite:" + ";".join(f"{p!r}@" + ",".join(repr(x) for x in d) for p, d in law.outcomes)


# -------------------------------------------------------------- files

TOP_KEYS = {"seed", "output_dir", "workers", "law"}


def _line_of(text: str, key: str):
    m = re.search(rf"^\s*{re.escape(key)}\s*=", text, re.M)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config(path: str, sections: dict) -> dict:
    """Read a TOML file and reject unknown sections and keys.

    ``sections`` maps a section name to its allowed keys.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    text = raw.decode("utf-8", "replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for key, val in data.items():
        if key in sections:
            if not isinstance(val, dict):
                raise ConfigError(f"{path}: [{key}] must be a table")
            for sub in val:
                if sub not in sections[key]:
                    line = _line_of(text, sub)
                    where = f" (line {line})" if line else ""
                    raise ConfigError(f"{path}{where}: unknown field {key}.{sub}; "
                                      f"allowed: {sorted(sections[key])}")
        elif key not in TOP_KEYS:
            line = _line_of(text, key)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"{path}{where}: unknown field {key!r}")
    return data
