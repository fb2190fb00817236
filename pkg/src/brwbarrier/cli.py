"""Command-line runner: ``brwbarrier <subcommand> [options]``.

Options may also come from a TOML file (``--config``) whose sections are
named after the subcommands; explicit flags win over the file, and the file
wins over built-in defaults. Every run writes ``manifest.json`` with the
fully resolved settings, and every artifact starts with the manifest hash.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import time
from typing import Callable, Dict

import numpy as np

from . import __version__
from . import constants as C
from . import profile_ode as ode
from . import reduction as R
from . import sim as S
from . import tube as T
from .config import as_float, as_int, as_list, law_to_string, load_config, parse_law
from .errors import BRWError, ConfigError, DomainError
from .laws import FiniteSupport
from .rng import RandomStream

SEED_ENV = "BRWBARRIER_SEED"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    if x is None:
        return ""
    return str(x)


def to_json(obj, indent=0) -> str:
    """JSON with every float printed to 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(to_json(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return '"nan"'
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return "%.17g" % x
    return json.dumps(str(obj))


# ----------------------------------------------------------- option tables

def _f(v, name):
    return as_float(v, name)


def _i(v, name):
    return as_int(v, name)


def _s(v, name):
    return str(v)


def _b(v, name):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes"):
        return True
    if str(v).lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"field {name!r}: expected true/false, got {v!r}")


def _fl(v, name):
    return as_list(v, _f, name)


def _il(v, name):
    return as_list(v, _i, name)


def _sl(v, name):
    return [s.strip() for s in v.split(",")] if isinstance(v, str) else [str(s) for s in v]


OPTIONS: Dict[str, Dict[str, tuple]] = {
    "constants": {"sigma_sq": (_fl, [1.0], "sigma^2 value(s)"),
                  "a": (_fl, [], "barrier coefficients for the cubic roots")},
    "reduce": {"law": (_s, "poisson:2:0:1", "law string"),
               "law_config": (_s, "", "TOML file with a [law] table (overrides --law)"),
               "profile": (_s, "", "closed-form profile name:param=value,... (overrides law)")},
    "ode": {"sigma_sq": (_f, 1.0, "sigma^2"), "a": (_f, 0.0, "barrier coefficient"),
            "s": (_f, 1.0, "initial value f(0)"), "horizon": (_f, 1000.0, "integration horizon t"),
            "tol": (_f, 1e-10, "relative tolerance"), "points": (_i, 201, "profile rows written")},
    "rate": {"sigma_sq": (_f, 1.0, "sigma^2"), "a": (_fl, [0.0], "barrier coefficient(s) < a_c"),
             "tol": (_f, 1e-10, "relative tolerance")},
    "tube": {"law": (_s, "critical:1", "offspring law whose tilted step drives the walk"),
             "law_config": (_s, "", "TOML file with a [law] table (overrides --law)"),
             "step": (_s, "", "step law instead of --law: pm1 or gauss:mean:var"),
             "gaussian": (_s, "", "Gaussian step mean:var (shorthand for --step gauss:mean:var)"),
             "exact": (_b, False, "add the lattice transfer-operator value"),
             "lower": (_s, "const:-1", "lower profile"), "upper": (_s, "const:1", "upper profile"),
             "j": (_il, [64], "walk length(s)"), "runs": (_i, 10 ** 5, "walks per length"),
             "units": (_s, "scaled", "scaled or absolute"),
             "endpoint": (_s, "", "endpoint window lo:hi")},
    "simulate": {"law": (_s, "critical:1", "offspring law"),
                 "law_config": (_s, "", "TOML file with a [law] table (overrides --law)"),
                 "barrier": (_sl, [], "barrier string(s), e.g. pow:6"),
                 "a": (_fl, [], "power-law coefficients (shorthand for pow:a)"),
                 "n": (_il, [64], "horizon(s)"), "runs": (_i, 1000, "runs (or replicates)"),
                 "cap": (_i, S.DEFAULT_CAP, "population cap"),
                 "method": (_s, "naive", "naive or split"), "groups": (_i, 10, "splitting groups"),
                 "allow_noncritical": (_b, False, "skip the criticality check")},
    "census": {"law": (_s, "critical:1", "offspring law"),
               "law_config": (_s, "", "TOML file with a [law] table (overrides --law)"),
               "a": (_f, 6.0, "upper barrier coefficient"),
               "b": (_f, math.nan, "corridor width (default b_a)"), "E": (_i, 4, "checkpoint base"),
               "k_max": (_i, 3, "last checkpoint exponent"), "runs": (_i, 1000, "runs"),
               "eps": (_f, 1.0, "target slack"), "cap": (_i, 0, "population cap, 0 = none")},
    "classify": {"sigma_sq": (_f, 1.0, "sigma^2"), "barrier": (_sl, ["pow:4"], "barrier string(s)"),
                 "n_min": (_i, S.SPARSE_N_MIN, "smallest dip spacing accepted as large")},
    "check-m2o": {"law": (_sl, [], "finite law string(s); default: built-in matrix"),
                  "n": (_il, [1, 2, 3, 4], "generations"),
                  "w": (_f, 1.0, "half-width of the constant-tube functional")},
}

TOP = {"seed": (_i, None, "64-bit seed"), "output_dir": (_s, "out", "artifact directory"),
       "workers": (_i, 1, "worker threads")}


def _flag(name):
    return "--" + name.replace("_", "-")


# ------------------------------------------------------------- artifacts

class Run:
    def __init__(self, command: str, settings: dict):
        self.command = command
        self.settings = settings
        self.out = settings["output_dir"]
        os.makedirs(self.out, exist_ok=True)
        body = {"command": command, "version": __version__, "settings": settings}
        # where the files land does not change them
        hashed = dict(body, settings={k: v for k, v in settings.items() if k != "output_dir"})
        canon = to_json(hashed)
        self.sha = hashlib.sha256(canon.encode()).hexdigest()
        manifest = dict(body, manifest_sha256=self.sha,
                        timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
        self._write("manifest.json", to_json(manifest) + "\n")
        self.files = ["manifest.json"]

    def _write(self, name, text):
        with open(os.path.join(self.out, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def csv(self, name: str, columns, rows):
        buf = io.StringIO()
        buf.write(f"# manifest_sha256={self.sha}\n")
        buf.write(",".join(columns) + "\n")
        for row in rows:
            buf.write(",".join(fmt(v) for v in row) + "\n")
        self._write(name, buf.getvalue())
        self.files.append(name)
        return buf.getvalue()

    def json(self, name: str, obj):
        text = to_json(dict({"manifest_sha256": self.sha}, **obj)) + "\n"
        self._write(name, text)
        self.files.append(name)
        return text


# ------------------------------------------------------------- commands

def _barrier(text):
    try:
        return S.parse_barrier(text)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _profile(text):
    try:
        return T.parse_profile(text)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def cmd_constants(o, run):
    rows = []
    for s2 in o["sigma_sq"]:
        ac = C.a_critical(s2)
        if not o["a"]:
            rows.append((s2, None, ac, None, None, None))
        for a in o["a"]:
            r = C.b_roots(s2, a)
            # certificate scan uses the double-root corridor b = 2 a_c / 3
            e_min = C.minimal_growth_factor(s2, a, 2.0 * ac / 3.0) if a > ac else None
            rows.append((s2, a, ac, r.b_small, r.b_a, e_min))
    return run.csv("constants.csv", ["sigma_sq", "a", "a_c", "b_small", "b_a", "E_min"], rows)


def _closed_profile(text):
    name, _, params = text.partition(":")
    kw = {}
    for item in filter(None, params.split(",")):
        k, eq, v = item.partition("=")
        if not eq:
            raise ConfigError(f"profile {text!r}: expected name:key=value,...")
        kw[k.strip()] = as_float(v, f"profile.{k.strip()}")
    return R.closed_form_profile(name, **kw)


def cmd_reduce(o, run):
    target = _closed_profile(o["profile"]) if o["profile"] else _law(o)
    rep = R.classify_reduction(target)
    d = rep.to_dict()
    d["F_values"] = [list(p) for p in d["F_values"]]
    if rep.t_star is not None and not o["profile"]:
        d["tilted_law"] = law_to_string(R.tilt_law(target, rep.t_star).law)
    return run.json("reduce.json", d)


def cmd_ode(o, run):
    sol = ode.solve_profile(o["sigma_sq"], o["a"], o["s"], o["horizon"], o["tol"])
    cls = sol.classification
    info = {"sigma_sq": o["sigma_sq"], "a": o["a"], "s": o["s"], "residual_max": sol.residual_max}
    if isinstance(cls, ode.BlowsDown):
        info.update(classification="BlowsDown", t_max=cls.t_max)
    else:
        info.update(classification="GrowsLikeCubeRoot", b_limit=cls.b_limit,
                    b_a=C.b_roots(o["sigma_sq"], o["a"]).b_a)
    u = np.linspace(sol.grid[0], sol.grid[-1], max(o["points"], 2))
    run.csv("ode_profile.csv", ["t", "f"], zip(u ** 3, sol.h(u)))
    return run.json("ode.json", info)


def cmd_rate(o, run):
    rows = [(o["sigma_sq"], a, ode.extinction_rate(o["sigma_sq"], a, o["tol"])) for a in o["a"]]
    return run.csv("rate.csv", ["sigma_sq", "a", "c"], rows)


def _law(o):
    if o.get("law_config"):
        data = load_config(o["law_config"], {})
        if "law" not in data:
            raise ConfigError(f"{o['law_config']}: no [law] table")
        return parse_law(data["law"])
    return parse_law(o["law"])


def _step_law(o):
    st = o["step"] or (f"gauss:{o['gaussian']}" if o["gaussian"] else "")
    if not st:
        return T.tilted_step(_law(o))
    if st == "pm1":
        return T.PM_ONE
    if st.startswith("gauss:"):
        parts = st.split(":")
        if len(parts) != 3:
            raise ConfigError(f"step {st!r}: expected gauss:mean:var")
        return T.Gaussian(as_float(parts[1], "step.mean"), as_float(parts[2], "step.var"))
    raise ConfigError(f"step {st!r}: expected pm1 or gauss:mean:var")


def cmd_tube(o, run, seed, workers):
    step = _step_law(o)
    lower, upper = _profile(o["lower"]), _profile(o["upper"])
    window = None
    if o["endpoint"]:
        lo, _, hi = o["endpoint"].partition(":")
        window = (as_float(lo, "endpoint.lo"), as_float(hi, "endpoint.hi"))
    stream = RandomStream(seed, 1)
    sigma_sq = step.variance
    rows, records = [], []
    for j in o["j"]:
        spec = T.TubeSpec(j, lower, upper, window, o["units"])
        e = T.tube_probability_mc(step, spec, o["runs"], stream, workers)
        rate_hat = -math.log(e.p_hat) / j ** (1 / 3) if e.p_hat > 0 else math.inf
        exact = None
        if o["exact"]:
            if not (isinstance(step, T.DiscreteAtoms) and isinstance(lower, T.Constant)
                    and isinstance(upper, T.Constant) and window is None):
                raise ConfigError("--exact needs a lattice step, constant profiles and no endpoint window")
            lo, hi = lower.v * spec.scale, upper.v * spec.scale
            exact = T.tube_probability_exact(step, j, (math.ceil(lo), math.floor(hi)))
        mog = T.mogulskii_rate(sigma_sq, spec) if o["units"] == "scaled" else None
        rows.append((j, e.p_hat, e.stderr, e.runs, e.hits, rate_hat, mog, exact))
        records.append({"j": j, "estimate": e.p_hat, "stderr": e.stderr, "runs": e.runs,
                        "rate_prediction": mog, "j_cuberoot_log": rate_hat, "exact": exact})
    run.json("tube.json", {"results": records})
    return run.csv("tube.csv", ["j", "p_hat", "stderr", "runs", "hits", "rate_hat",
                                "mogulskii_rate", "exact"], rows)


def cmd_simulate(o, run, seed, workers):
    law = _law(o)
    barriers = [(b, _barrier(b)) for b in o["barrier"]]
    barriers += [(f"pow:{a!r}", S.PowerLaw(a)) for a in o["a"]]
    if not barriers:
        raise ConfigError("simulate needs --barrier or --a")
    rows = []
    for text, bar in barriers:
        for n in o["n"]:
            # one stream per n, shared across barriers: the curve is pathwise coupled
            stream = RandomStream(seed, 1000 + n)
            try:
                e = S.survival_probability(law, bar, n, o["runs"], o["method"], stream, o["cap"],
                                           workers, o["groups"],
                                           allow_noncritical=o["allow_noncritical"])
            except S.InsufficientHits as exc:
                e = exc.estimate
            a = bar.a if isinstance(bar, S.PowerLaw) else None
            rows.append((text, a, n, e.p_hat, e.stderr, e.runs, e.method, e.cap_hits))
    return run.csv("survival.csv", ["barrier", "a", "n", "p_hat", "stderr", "runs", "method",
                                    "cap_hits"], rows)


def cmd_census(o, run, seed, workers):
    law = _law(o)
    b = None if math.isnan(o["b"]) else o["b"]
    recs = S.two_barrier_census(law, o["a"], b, o["E"], o["k_max"], o["runs"], RandomStream(seed, 2),
                                o["eps"], o["cap"] or None, workers)
    rows = [(r.k, r.n_k, r.mean_count, r.stderr, r.target, r.unconstrained_mean, r.meets_target)
            for r in recs]
    return run.csv("census.csv", ["k", "n_k", "mean_count", "stderr", "target",
                                  "unconstrained_mean", "meets_target"], rows)


def cmd_classify(o, run):
    out = []
    for text in o["barrier"]:
        c = S.classify_general_barrier(o["sigma_sq"], _barrier(text), o["n_min"])
        out.append({"barrier": text, "label": c.label, "reason": c.reason})
    return run.json("classify.json", {"sigma_sq": o["sigma_sq"], "results": out})


M2O_LAWS = ["finite:1/3@-log(2);2/3@log(2)", "finite:1@log(2),log(2)",
            "finite:0.5@;0.5@-log(1.5),log(2)"]


def cmd_m2o(o, run):
    laws = o["law"] or M2O_LAWS
    funcs = [("one", T.One()), ("below_zero_at_n", T.IndicatorBelowZeroAtN()),
             ("tube_constant", T.IndicatorTubeConstant(o["w"]))]
    rows = []
    for text in laws:
        law = parse_law(text)
        if not isinstance(law, FiniteSupport):
            raise ConfigError(f"check-m2o needs finite laws, got {text!r}")
        for n in o["n"]:
            for fname, f in funcs:
                r = T.many_to_one_check(law, n, f)
                rows.append((text, n, fname, r.lhs, r.rhs, r.abs_diff))
    return run.csv("m2o.csv", ["law", "n", "functional", "lhs", "rhs", "abs_diff"], rows)


COMMANDS: Dict[str, Callable] = {
    "constants": cmd_constants, "reduce": cmd_reduce, "ode": cmd_ode, "rate": cmd_rate,
    "tube": cmd_tube, "simulate": cmd_simulate, "census": cmd_census,
    "classify": cmd_classify, "check-m2o": cmd_m2o,
}
RANDOM = {"tube", "simulate", "census"}


# ------------------------------------------------------------------ main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="brwbarrier", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="TOML config file")
        for key, (_, default, help_) in {**TOP, **opts}.items():
            sp.add_argument(_flag(key), dest=key, default=None, help=f"{help_} (default {default!r})")
    return p


def resolve(args) -> dict:
    opts = OPTIONS[args.command]
    section = args.command.replace("-", "_")
    file_top, file_sec = {}, {}
    if args.config:
        allowed = {k.replace("-", "_"): set(v) for k, v in OPTIONS.items()}
        data = load_config(args.config, allowed)
        file_top = {k: v for k, v in data.items() if k in TOP or k == "law"}
        file_sec = data.get(section, {})
    settings = {}
    for key, (conv, default, _) in {**TOP, **opts}.items():
        cli = getattr(args, key)
        if cli is not None:
            val = conv(cli, key)
        elif key in file_sec:
            val = conv(file_sec[key], f"{section}.{key}")
        elif key in file_top:
            raw = file_top[key]
            if key == "law" and isinstance(raw, dict):
                raw = law_to_string(parse_law(raw))
            val = conv(raw, key)
        else:
            val = default
        settings[key] = val
    if settings["seed"] is None:
        env = os.environ.get(SEED_ENV)
        settings["seed"] = as_int(env, SEED_ENV) if env else 0
    if not 0 <= settings["seed"] < 2 ** 64:
        raise ConfigError("field 'seed': must fit in 64 unsigned bits")
    if settings["workers"] < 1:
        raise ConfigError("field 'workers': must be >= 1")
    return settings


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        settings = resolve(args)
        r = Run(args.command, settings)
        body = {k: v for k, v in settings.items() if k not in TOP}
        fn = COMMANDS[args.command]
        if args.command in RANDOM:
            text = fn(body, r, settings["seed"], settings["workers"])
        else:
            text = fn(body, r)
        stdout.write(text)
        return 0
    except BRWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
