"""Command-line entry point: ``cantorlab [options] VERB [VERB ...]``.

Instances are described by an INI file (see :data:`SCHEMA` for every key and
its default).  Verbs run in a fixed dependency order; each one writes CSV
files into ``--out`` and a record into ``run.manifest``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

CONFIG_VERSION = 1

# section -> key -> (type, default, description)
SCHEMA = {
    "cantorlab": {
        "version": (int, CONFIG_VERSION, "config format version"),
    },
    "geometry": {
        "regime": (str, "sub", "sub, matching or super"),
        "d": (int, 2, "ambient dimension"),
        "p0": (float, 1.5, "reference exponent"),
        "gamma": (float, -3.0, "logarithmic exponent of the Cantor lengths"),
    },
    "cantor": {
        "m": (int, 12, "generation of the distance and measure surrogates"),
        "samples": (int, 64, "sampled Cantor points for trace diagnostics"),
    },
    "model": {
        "family": (str, "double_phase", "double_phase, borderline, piecewise_var_exp or continuous_var_exp"),
        "p": (float, 1.5, "low exponent (p0 for borderline and continuous families)"),
        "q": (float, 2.6, "high exponent of the double phase family"),
        "alpha": (float, 1.0, "weight exponent"),
        "beta": (float, 0.2, "logarithmic exponent of the borderline base"),
        "kappa": (float, 0.2, "logarithmic exponent of the weight / exponent modulus"),
        "epsilon": (float, 1.0, "borderline weight scale"),
        "p_minus": (float, 1.5, "low exponent of the piecewise family"),
        "p_plus": (float, 2.6, "high exponent of the piecewise family"),
    },
    "quadrature": {
        "tol": (float, 0.05, "relative tolerance of the shell classifier"),
        "order": (int, 8, "Gauss order per cross-section"),
        "bumps": (int, 10, "seeded bump functions for the vector field checks"),
        "b_generation": (int, 10, "generation used for the vector field"),
    },
    "fem": {
        "levels": (str, "4,5,6", "mesh levels of the gap experiment"),
        "level": (int, 4, "mesh level of a single minimization"),
        "grading": (int, 2, "dyadic layers toward the contact line"),
        "space": (str, "noncf", "conf (P1) or noncf (Crouzeix-Raviart)"),
        "eta": (str, "auto", "boundary data scale, or auto for the certificate value"),
    },
    "solver": {
        "kappa": (float, 1.0, "smallness constant of the certificate"),
        "tol": (float, 1e-10, "relative Newton decrement at acceptance"),
        "delta_final": (float, 1e-8, "last regularization of the continuation"),
        "budget": (int, 600, "total Newton steps per solve"),
        "seed": (int, 0, "seed for every random sample"),
    },
}

VERBS = ("validate", "check", "certify", "energy", "meyers", "traces", "chain", "bfield",
         "minimize", "gap", "observe", "report")
DEPENDS = {
    "check": ("validate",),
    "certify": ("validate", "check"),
    "energy": ("validate",),
    "minimize": ("certify",),
    "gap": ("certify",),
    "observe": ("gap",),
}
EXIT_USAGE = 2
EXIT_FIRST_VERB = 10


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


def default_config() -> dict:
    return {sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def _line_numbers(text: str) -> dict:
    where, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where.setdefault((section, None), no)
        elif section is not None:
            key = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            where[(section, key)] = no
    return where


def _convert(typ, raw: str):
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw.strip()


def parse_config(text: str) -> dict:
    """Parse INI text into a typed config; missing keys take their defaults.

    Raises
    ------
    ConfigError
        With the offending line number on syntax errors, unknown sections or
        keys, bad values or a version mismatch.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as err:
        lineno = getattr(err, "lineno", None)
        if lineno is None and getattr(err, "errors", None):
            lineno = err.errors[0][0]
        raise ConfigError(f"line {lineno}: {err.message.splitlines()[0]}") from err
    where = _line_numbers(text)
    cfg = default_config()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"line {where.get((sec, None))}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            line = where.get((sec, key))
            if key not in SCHEMA[sec]:
                raise ConfigError(f"line {line}: unknown key {sec}.{key}")
            typ = SCHEMA[sec][key][0]
            try:
                cfg[sec][key] = _convert(typ, raw)
            except ValueError as err:
                raise ConfigError(f"line {line}: {sec}.{key}: invalid {typ.__name__} {raw!r}") from err
    if cfg["cantorlab"]["version"] != CONFIG_VERSION:
        raise ConfigError(f"line {where.get(('cantorlab', 'version'))}: unsupported config version "
                          f"{cfg['cantorlab']['version']}")
    if cfg["fem"]["space"] not in ("conf", "noncf"):
        raise ConfigError(f"line {where.get(('fem', 'space'))}: fem.space must be conf or noncf")
    return cfg


def serialize_config(cfg: dict) -> str:
    """Canonical INI text: every section and key in schema order, with descriptions."""
    out = io.StringIO()
    for sec, keys in SCHEMA.items():
        out.write(f"[{sec}]\n")
        for key, (typ, _, doc) in keys.items():
            val = cfg[sec][key]
            text = repr(float(val)) if typ is float else str(val)
            out.write(f"# {doc}\n{key} = {text}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path) -> dict:
    if path is None:
        return default_config()
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    return parse_config(text)


def make_instance(cfg: dict):
    from .fields import make_geometry
    from .models import Borderline, ContinuousVarExp, DoublePhase, PiecewiseVarExp

    g, m = cfg["geometry"], cfg["model"]
    geo = make_geometry(g["regime"], g["d"], g["p0"], g["gamma"])
    fam = m["family"]
    if fam == "double_phase":
        family = DoublePhase(m["p"], m["q"], m["alpha"])
    elif fam == "borderline":
        family = Borderline(m["p"], m["alpha"], m["beta"], m["kappa"], m["epsilon"])
    elif fam == "piecewise_var_exp":
        family = PiecewiseVarExp(m["p_minus"], m["p_plus"])
    elif fam == "continuous_var_exp":
        family = ContinuousVarExp(m["p"], m["kappa"])
    else:
        raise ConfigError(f"unknown model.family {fam!r}")
    return geo, family


def validate(cfg: dict):
    """Parameter-window checks of the configured instance."""
    from .models import validate as model_validate

    geo, family = make_instance(cfg)
    return model_validate(family, geo)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Record:
    verb: str
    status: str
    message: str
    files: list = field(default_factory=list)


class Context:
    """Shared state between verbs (instance, certificate, FEM runs)."""

    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.geometry, self.family = make_instance(cfg)
        self._integrand = None
        self.certificate = None
        self.gap = None

    @property
    def integrand(self):
        if self._integrand is None:
            from .models import Integrand

            self._integrand = Integrand(self.family, self.geometry, self.cfg["cantor"]["m"])
        return self._integrand

    @property
    def seed(self) -> int:
        return self.cfg["solver"]["seed"]

    def rng(self, stream: int):
        import numpy as np

        return np.random.default_rng([self.seed, stream])

    def eta(self) -> float:
        raw = self.cfg["fem"]["eta"]
        if raw != "auto":
            return float(raw)
        if self.certificate is None:
            verb_certify(self)
        return self.certificate.eta

    def solver_config(self):
        from .fem import SolverConfig

        s = self.cfg["solver"]
        return SolverConfig(tol=s["tol"], delta_final=s["delta_final"], budget=s["budget"])

    def levels(self) -> list:
        return [int(v) for v in str(self.cfg["fem"]["levels"]).split(",") if v.strip()]

    def path(self, name: str) -> Path:
        return self.out / name


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


class VerbFailure(RuntimeError):
    pass


def verb_validate(ctx: Context):
    checks = validate(ctx.cfg)
    _write_rows(ctx.path("validate.csv"), ["name", "ok", "message"],
                [(c.name, int(c.ok), c.message) for c in checks])
    bad = [c.message for c in checks if not c.ok]
    if bad:
        raise VerbFailure("; ".join(bad))
    return f"{len(checks)} checks pass", ["validate.csv"]


def verb_check(ctx: Context):
    from . import energy

    q = ctx.cfg["quadrature"]
    res = energy.check_mc1(ctx.integrand, q["tol"], order=q["order"])
    energy.write_shells_csv(res.grad_u, ctx.path("check_grad_u.csv"))
    energy.write_shells_csv(res.b, ctx.path("check_b.csv"))
    msg = f"F(u) {res.grad_u.verdict} {res.grad_u.value:.6g}; F*(b) {res.b.verdict} {res.b.value:.6g}"
    if not res.ok:
        raise VerbFailure(msg)
    return msg, ["check_grad_u.csv", "check_b.csv"]


def verb_certify(ctx: Context):
    from . import energy

    q = ctx.cfg["quadrature"]
    cert, integ = energy.find_certificate(ctx.integrand, ctx.cfg["solver"]["kappa"], q["tol"], order=q["order"])
    ctx.certificate = cert
    ctx._integrand = integ
    _write_rows(ctx.path("certificate.csv"),
                ["kappa", "eta", "s", "F_u", "F_star_b", "epsilon", "slack", "recheck_slack"],
                [(cert.kappa, cert.eta, cert.s, cert.F_u, cert.F_star_b,
                  "" if cert.epsilon is None else cert.epsilon, cert.slack, cert.recheck_slack)])
    msg = f"eta={cert.eta:.6g} s={cert.s:.6g} slack={cert.slack:.6g} recheck={cert.recheck_slack:.6g}"
    if not (cert.slack > 0 and cert.recheck_slack > 0):
        raise VerbFailure(msg)
    return msg, ["certificate.csv"]


def verb_energy(ctx: Context):
    from . import energy

    q = ctx.cfg["quadrature"]
    scale = ctx.certificate.eta if ctx.certificate is not None else 1.0
    rep = energy.modular(ctx.integrand, "grad_u", scale, q["tol"], order=q["order"])
    energy.write_shells_csv(rep, ctx.path("energy_shells.csv"))
    return f"F({scale:g} u) {rep.verdict} {rep.value:.6g}", ["energy_shells.csv"]


def verb_meyers(ctx: Context):
    from . import energy
    from .fields import SUPER
    from .models import TestOrlicz

    geo = ctx.geometry
    rows, verdicts = [], []
    for delta in (0.0, 0.5, 1.0, 2.0, 3.0):
        psi = TestOrlicz(geo.p0, delta)
        tr = energy.meyers_super(geo, psi) if geo.regime == SUPER else energy.meyers_sub(geo, psi)
        for x, g in zip(tr.x, tr.values):
            rows.append((delta, float(x), float(g), tr.slope, tr.predicted))
        verdicts.append(f"delta={delta:g}:{tr.verdict}")
    _write_rows(ctx.path("meyers.csv"), ["delta", "x", "G", "slope", "predicted"], rows)
    return ", ".join(verdicts), ["meyers.csv"]


def verb_traces(ctx: Context):
    from . import cantor, riesz
    from .fields import SUB, FieldEval

    geo = ctx.geometry
    if geo.regime != SUB or geo.d != 2:
        raise VerbFailure("trace sampling needs the sub regime in the plane")
    eta = ctx.certificate.eta if ctx.certificate is not None else 1.0
    m = ctx.cfg["cantor"]["m"]
    fe = FieldEval(geo, m)
    xb = cantor.sample_measure(geo.spec, m, ctx.cfg["cantor"]["samples"], ctx.rng(1))
    ts = riesz.trace_limits(lambda y: eta * fe.u(y), xb)
    riesz.write_traces_csv(ts, ctx.path("traces.csv"))
    dev = float(abs(ts.jump_limit / eta - 1.0).max())
    msg = f"max |jump/eta - 1| = {dev:.3g} over {xb.size} points"
    if dev > 0.05:
        raise VerbFailure(msg)
    return msg, ["traces.csv"]


def verb_chain(ctx: Context):
    from . import riesz
    from .fields import SUPER, FieldEval

    geo = ctx.geometry
    if geo.regime != SUPER:
        raise VerbFailure("chain sums need the super regime")
    eta = ctx.certificate.eta if ctx.certificate is not None else 1.0
    m = min(ctx.cfg["cantor"]["m"], 6)
    fe = FieldEval(geo, ctx.cfg["cantor"]["m"])
    ch = riesz.chain_sums(lambda y: eta * fe.u(y), geo, m, eta)
    riesz.write_chain_csv(ch, ctx.path("chain.csv"))
    return f"S={ch.S:.6g} gap sum={ch.gap_sum:.3g} at m={m}", ["chain.csv"]


def verb_bfield(ctx: Context):
    from . import riesz
    from .fields import FieldEval

    geo = ctx.geometry
    m = ctx.cfg["quadrature"]["b_generation"]
    F = riesz.SeparatingField(geo, m)
    fe = FieldEval(geo, m)
    flux = F.separating_functional(riesz.extension_gradient(fe.u_and_grad)).value
    worst = 0.0
    for b in riesz.bump_family(ctx.cfg["quadrature"]["bumps"], ctx.rng(2)):
        worst = max(worst, abs(F.separating_functional(b.grad).value) / b.grad_sup)
    z, ratio = riesz.b_ratio_sample(F, 1000, ctx.rng(3))
    riesz.write_bfield_csv(z, F(z), ctx.path("bfield.csv"))
    msg = f"flux={flux:.6g} boundary flux={F.boundary_flux(fe.u):.6g} weak divergence/sup|grad f|={worst:.3g} max|b|/b={ratio.max():.3g}"
    if worst > 1e-3 or abs(flux - 1.0) > 0.05:
        raise VerbFailure(msg)
    return msg, ["bfield.csv"]


def verb_minimize(ctx: Context):
    from . import fem
    from .fields import SUPER

    f = ctx.cfg["fem"]
    toward = SUPER if ctx.geometry.regime == SUPER else "sub"
    mesh = fem.build_mesh(f["level"], f["grading"], toward)
    sol = fem.minimize(mesh, f["space"], ctx.integrand, ctx.eta(), ctx.solver_config())
    name = f"solution_{f['space']}_l{f['level']}.bin"
    fem.write_dump(sol, ctx.path(name))
    _write_rows(ctx.path("minimize.csv"), ["level", "space", "eta", "energy", "residual", "converged", "steps"],
                [(f["level"], f["space"], sol.eta, sol.energy, sol.residual, int(sol.converged), len(sol.trace))])
    msg = f"E={sol.energy:.10g} residual={sol.residual:.3g} converged={sol.converged}"
    if not (sol.converged and fem.energy_monotone(sol.trace)):
        raise VerbFailure(msg)
    return msg, ["minimize.csv", name]


def verb_gap(ctx: Context):
    from . import fem

    rep = fem.gap_ratio(ctx.integrand, ctx.eta(), ctx.levels(), ctx.cfg["fem"]["grading"], ctx.solver_config())
    ctx.gap = rep
    _write_rows(ctx.path("gap.csv"), ["level", "E_conf", "E_noncf", "ratio"],
                [(r.level, r.E_conf, r.E_noncf, r.ratio) for r in rep.rows])
    ratios = rep.ratios()
    msg = "ratios " + " ".join(f"{r:.6g}" for r in ratios)
    ok = all(r.E_noncf <= r.E_conf for r in rep.rows) and bool((ratios > 1).all())
    if not ok:
        raise VerbFailure(msg)
    return msg, ["gap.csv"]


def verb_observe(ctx: Context):
    from . import fem

    if ctx.gap is None:
        verb_gap(ctx)
    rep = fem.observables(ctx.gap, ctx.integrand, ctx.cfg["cantor"]["samples"], ctx.seed, ctx.cfg["cantor"]["m"])
    fem.write_observables_csv(rep, ctx.path("observables.csv"))
    msg = "jump fractions " + " ".join(f"{v:.3g}" for v in rep.jump_fraction)
    return msg, ["observables.csv"]


def verb_report(ctx: Context, records=()):
    _write_rows(ctx.path("summary.csv"), ["verb", "status", "message"],
                [(r.verb, r.status, r.message) for r in records])
    return f"{len(records)} verb records", ["summary.csv"]


HANDLERS = {v: globals()[f"verb_{v}"] for v in VERBS}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: dict, records, extra: dict) -> Path:
    import numpy
    import scipy

    entries = {
        "config.sha256": hashlib.sha256(serialize_config(cfg).encode()).hexdigest(),
        "version.cantorlab": __version__,
        "version.numpy": numpy.__version__,
        "version.scipy": scipy.__version__,
        "version.python": platform.python_version(),
        "seed": str(cfg["solver"]["seed"]),
    }
    entries.update(extra)
    for r in records:
        entries[f"verb.{VERBS.index(r.verb):02d}.{r.verb}.status"] = r.status
        entries[f"verb.{VERBS.index(r.verb):02d}.{r.verb}.message"] = r.message.replace("\n", " ")
        for name in r.files:
            entries[f"file.{name}"] = _sha256(out / name)
    path = out / "run.manifest"
    path.write_text("".join(f"{k} = {entries[k]}\n" for k in sorted(entries)))
    return path


def run_pipeline(cfg: dict, verbs, out: Path, extra: dict | None = None):
    """Run ``verbs`` in dependency order; return the records and the exit code."""
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out)
    todo = sorted(set(verbs), key=VERBS.index)
    failed = set()
    records = []
    for verb in todo:
        blocked = [d for d in DEPENDS.get(verb, ()) if d in failed]
        if blocked:
            records.append(Record(verb, "skip", f"skipped after failed {', '.join(blocked)}"))
            failed.add(verb)
            print(f"{verb}: SKIP")
            continue
        try:
            if verb == "report":
                msg, files = verb_report(ctx, records)
            else:
                msg, files = HANDLERS[verb](ctx)
            rec = Record(verb, "pass", msg, files)
        except Exception as err:  # recorded, downstream verbs are skipped
            rec = Record(verb, "fail", f"{type(err).__name__}: {err}")
            failed.add(verb)
        records.append(rec)
        print(f"{verb}: {rec.status.upper()} {rec.message}")
    write_manifest(out, cfg, records, extra or {})
    code = 0
    for r in records:
        if r.status != "pass":
            code = EXIT_FIRST_VERB + VERBS.index(r.verb)
            break
    return records, code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cantorlab", description=__doc__.splitlines()[0])
    ap.add_argument("verbs", nargs="+", choices=VERBS, metavar="VERB",
                    help="one or more of: " + ", ".join(VERBS))
    ap.add_argument("--config", help="INI instance file (defaults: reference double phase instance)")
    ap.add_argument("--seed", type=int, help="override solver.seed")
    ap.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    ap.add_argument("--out", default="cantorlab_out", help="output directory")
    ap.add_argument("--tol", type=float, help="override quadrature.tol")
    ap.add_argument("--kappa", type=float, help="override solver.kappa")
    ap.add_argument("--level", type=int, help="override fem.level")
    ap.add_argument("--space", choices=("conf", "noncf"), help="override fem.space")
    ap.add_argument("--eta", type=float, help="override fem.eta")
    ap.add_argument("--dump-config", action="store_true", help="print the canonical config and exit")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    if "--dump-config" in argv:
        try:
            cfg = load_config(_config_arg(argv))
        except ConfigError as err:
            print(f"config error: {err}", file=sys.stderr)
            return EXIT_USAGE
        sys.stdout.write(serialize_config(cfg))
        return 0
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(max(1, args.threads))
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["solver"]["seed"] = args.seed
        if args.tol is not None:
            cfg["quadrature"]["tol"] = args.tol
        if args.kappa is not None:
            cfg["solver"]["kappa"] = args.kappa
        if args.level is not None:
            cfg["fem"]["level"] = args.level
        if args.space is not None:
            cfg["fem"]["space"] = args.space
        if args.eta is not None:
            cfg["fem"]["eta"] = repr(float(args.eta))
        checks = validate(cfg)
    except (ConfigError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    print("instance checks:")
    for c in checks:
        print(f"  {'pass' if c.ok else 'FAIL'} {c.name}: {c.message}")
    _, code = run_pipeline(cfg, args.verbs, Path(args.out), {"threads": str(args.threads)})
    return code


def _config_arg(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


if __name__ == "__main__":
    sys.exit(main())
