"""Command-line entry points.

Subcommands read an optional TOML run file and write CSV (one header line)
and JSON artifacts into the output directory. Every artifact carries the
config hash and package version. Exit status: 0 on success, 2 on invalid
input, 3 when a numerical divergence or failure is flagged.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import QhoKamError, SpecError
from .floquet_verifier import (assemble_floquet, compare_reduction, evolve, measured_constant,
                               quasienergies, smooth_initial_state)
from .hermite_basis import log_spaced_indices, weighted_log_norm_profile
from .kam_engine import KamConfig, frequency_shift_check, run
from .potential_model import matrix_elements, potential_from_config, verify_conditions
from .resonance_measure import (FrequencyModel, enumerate_zones, excised_fraction_curve,
                                fit_single_zone_constant, single_zone_table, zone_union_fraction,
                                zones_csv)

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3
OUT_ENV = "QHO_KAM_OUT"

DEFAULTS = {
    "hermite": {"jmax": 1000, "delta1": [1.0, 2.0, 4.0], "count": 0},
    "potential": {"type": "log_decay", "beta": 6.0, "n": 1},
    "potential_check": {"J": 100, "K": 2, "omega": None},
    "measure": {"alphas": [0.1, 0.01, 0.001], "K": 10, "J": 40, "k_min": 3, "k_max": 12,
                "fit_alpha": 0.1, "tau": 3.0, "beta": 6.0, "N": 100_000, "seed": 0,
                "mc_check": 8},
    "floquet": {"J": 40, "K": 10, "epsilon": None, "T": 100.0, "dt": None, "p": 2.0,
                "modes": 5, "evolve_J": 20, "samples": 2},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="qho-kam", description="Reducibility pipeline for the driven quantum oscillator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML run file")
        sp.add_argument("--out", type=Path, help="output directory (default: $%s or .)" % OUT_ENV)
        sp.add_argument("--seed", type=int, help="override the seed")
        return sp

    h = common(sub.add_parser("hermite-check", help="weighted log norms of Hermite functions"))
    h.add_argument("--jmax", type=int)
    h.add_argument("--delta1", type=float, action="append")
    h.add_argument("--count", type=int, help="log-spaced indices instead of every j")
    pc = common(sub.add_parser("potential-check", help="potential bounds and matrix-element decay"))
    pc.add_argument("--J", type=int)
    pc.add_argument("--K", type=int)
    k = common(sub.add_parser("kam-run", help="KAM iteration: step CSV and certificate JSON"))
    k.add_argument("--samples", type=int)
    k.add_argument("--workers", type=int)
    common(sub.add_parser("measure-estimate", help="resonance-zone measures and excised fractions"))
    f = common(sub.add_parser("floquet-verify", help="Floquet spectrum versus a reduction"))
    f.add_argument("--certificate", type=Path, help="certificate JSON from kam-run")
    common(sub.add_parser("full-pipeline", help="kam-run followed by floquet-verify"))
    return p


# ----------------------------------------------------------------------------
# configuration and artifacts


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as err:
        raise SpecError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise SpecError(f"invalid TOML in {path}: {err}") from err


def _section(cfg, name):
    base = dict(DEFAULTS[name])
    given = cfg.get(name, {})
    extra = set(given) - set(base)
    if extra:
        raise SpecError(f"unknown keys in [{name}]: {sorted(extra)}")
    base.update(given)
    return base


def config_hash(obj):
    text = json.dumps(obj, sort_keys=True, default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o)}")


class Artifacts:
    """Writes CSV and JSON files stamped with the config hash and version."""

    def __init__(self, out, digest):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.digest = digest
        self.written = []

    def csv(self, name, text):
        rows = list(csv.reader(io.StringIO(text)))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if rows:
            w.writerow(rows[0] + ["config_hash", "version"])
            for r in rows[1:]:
                w.writerow(r + [self.digest, __version__])
        path = self.out / name
        path.write_text(buf.getvalue())
        self.written.append(path)
        return path

    def json(self, name, obj):
        payload = {"config_hash": self.digest, "version": __version__}
        payload.update(obj)
        path = self.out / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.written.append(path)
        return path


def _out_dir(args):
    if args.out is not None:
        return args.out
    return Path(os.environ.get(OUT_ENV, "."))


# ----------------------------------------------------------------------------
# subcommands


def cmd_hermite(args, cfg):
    sec = _section(cfg, "hermite")
    if args.jmax is not None:
        sec["jmax"] = args.jmax
    if args.delta1:
        sec["delta1"] = args.delta1
    if args.count is not None:
        sec["count"] = args.count
    deltas = np.atleast_1d(np.asarray(sec["delta1"], dtype=float))
    jmax = int(sec["jmax"])
    if jmax < 1:
        raise SpecError("jmax must be >= 1")
    js = log_spaced_indices(jmax, sec["count"]) if sec["count"] else np.arange(1, jmax + 1)
    norms, normalization = weighted_log_norm_profile(js, deltas)
    art = Artifacts(_out_dir(args), config_hash({"hermite": sec}))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["j"]
    for d in deltas:
        head += [f"norm_delta{d:g}", f"scaled_delta{d:g}"]
    w.writerow(head + ["normalization"])
    for i, j in enumerate(js):
        row = [int(j)]
        for c, d in enumerate(deltas):
            row += [f"{norms[i, c]:.17g}", f"{norms[i, c] * (1 + np.log(j)) ** d:.17g}"]
        w.writerow(row + [f"{normalization[i]:.17g}"])
    art.csv("hermite_norms.csv", buf.getvalue())
    return EXIT_OK


def cmd_potential(args, cfg):
    pot = _section(cfg, "potential")
    sec = _section(cfg, "potential_check")
    if args.J is not None:
        sec["J"] = args.J
    if args.K is not None:
        sec["K"] = args.K
    V = potential_from_config(pot)
    omega = np.full(V.n, np.pi) if sec["omega"] is None else np.atleast_1d(sec["omega"])
    report = verify_conditions(V, omegas=omega[None, :])
    A = matrix_elements(V, int(sec["J"]), int(sec["K"]), omega)
    M = A.majorant()
    w = (1.0 + np.log(np.arange(1, M.shape[0] + 1))) ** V.beta
    scaled = M * w[:, None] * w[None, :]
    art = Artifacts(_out_dir(args), config_hash({"potential": pot, "potential_check": sec}))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["j", "max_l_abs_element", "max_l_weighted_element"])
    for j in range(M.shape[0]):
        wr.writerow([j + 1, f"{M[j].max():.17g}", f"{scaled[j].max():.17g}"])
    art.csv("matrix_elements.csv", buf.getvalue())
    art.json("potential_check.json", {"conditions": report.to_dict(),
                                      "max_weighted_element": float(scaled.max())})
    return EXIT_OK if report.passed else EXIT_DIVERGED


def _kam_config(cfg, args):
    d = dict(cfg.get("kam", {}))
    if getattr(args, "samples", None) is not None:
        d["samples"] = args.samples
    if getattr(args, "workers", None) is not None:
        d["workers"] = args.workers
    d.setdefault("workers", os.cpu_count() or 1)
    if args.seed is not None:
        d["seed"] = args.seed
    return KamConfig.from_dict(d)


def _kam_hash(kc):
    # the worker count does not change any output
    d = kc.to_dict()
    d.pop("workers")
    return config_hash({"kam": d})


def cmd_kam(args, cfg):
    kc = _kam_config(cfg, args)
    result = run(kc)
    art = Artifacts(_out_dir(args), _kam_hash(kc))
    _write_kam(art, result)
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def _write_kam(art, result):
    art.csv("kam_steps.csv", result.steps_csv())
    cert = result.certificate()
    cert["config"].pop("workers", None)
    cert["config_hash"] = art.digest
    fs = frequency_shift_check(result)
    cert["frequency_shift"] = {"profile": fs["profile"], "bounded": fs["bounded"],
                               "max_weighted_shift": float(fs["per_mode"].max(initial=0.0))}
    art.json("kam_certificate.json", cert)
    K = result.config.K_max
    for i, rnf in enumerate(result.reduced):
        if rnf is not None and rnf.Phi is not None:
            art.json(f"conjugator_{i}.json", {"omega": rnf.omega, "Omega": rnf.Omega,
                                              "map": rnf.Phi.to_dict(K)})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "max_weighted_shift"])
    for j, v in enumerate(fs["per_mode"]):
        w.writerow([j + 1, f"{v:.17g}"])
    art.csv("frequency_shift.csv", buf.getvalue())
    return cert


def cmd_measure(args, cfg):
    sec = _section(cfg, "measure")
    if args.seed is not None:
        sec["seed"] = args.seed
    model = FrequencyModel()
    fracs = [zone_union_fraction(model, a, sec["K"], sec["J"], sec["tau"], sec["beta"], sec["N"],
                                 sec["seed"]) for a in sec["alphas"]]
    curve = excised_fraction_curve(sec["alphas"], [f for f, _ in fracs], [h for _, h in fracs])
    zones = enumerate_zones(1, sec["k_max"], sec["J"], sec["fit_alpha"], sec["tau"], sec["beta"],
                            k_min=sec["k_min"])
    c4 = fit_single_zone_constant(zones, model)
    rows = []
    for a in sec["alphas"]:
        rows += single_zone_table([z.with_alpha(a) for z in zones], model, c4, sec["N"],
                                  sec["seed"], mc_check=sec["mc_check"])
    art = Artifacts(_out_dir(args), config_hash({"measure": sec}))
    art.csv("excised_fraction.csv", curve.to_csv())
    art.csv("zone_measures.csv", zones_csv([r for r in rows if r["measure"] > 0]))
    art.json("measure_summary.json", {
        "exponent": curve.exponent, "strictly_decreasing": curve.strictly_decreasing,
        "c4": c4, "max_ratio": max(r["ratio"] for r in rows), "N": sec["N"], "seed": sec["seed"]})
    return EXIT_OK


def _reductions_from_certificate(path):
    try:
        cert = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise SpecError(f"cannot read certificate {path}: {err}") from err
    out = []
    for s in cert.get("samples", []):
        if s.get("alive") and "Omega" in s:
            out.append((np.asarray(s["omega"], dtype=float), np.asarray(s["Omega"], dtype=float)))
    if not out:
        raise SpecError("certificate has no surviving reductions")
    return cert.get("config", {}), out


def _floquet(art, sec, pot_cfg, eps, reductions):
    V = potential_from_config(pot_cfg)
    J, K = int(sec["J"]), int(sec["K"])
    reports = []
    for i, (omega, Omega) in enumerate(reductions[:int(sec["samples"])]):
        spec = quasienergies(assemble_floquet(V, omega, eps, J, K))
        rep = compare_reduction((omega, Omega), spec)
        rep["omega"] = omega
        reports.append(rep)
        art.csv(f"spectrum_{i}.csv", spec.to_csv())
    Je = int(sec["evolve_J"])
    dt = sec["dt"] if sec["dt"] is not None else 0.1 / (2 * Je - 1)
    dt = float(sec["T"]) / np.ceil(float(sec["T"]) / dt)
    trace = evolve(smooth_initial_state(Je, int(sec["modes"])), V, reductions[0][0], eps,
                   float(sec["T"]), dt, float(sec["p"]))
    art.csv("sobolev_trace.csv", trace.to_csv())
    summary = {"epsilon": eps, "reports": reports,
               "sobolev": {"ratio_deviation": trace.ratio_deviation,
                           "measured_constant": measured_constant(trace, eps),
                           "l2_drift": trace.l2_drift, "p": trace.p, "dt": dt}}
    art.json("floquet_report.json", summary)
    ok = all(r["ok"] and not r["inconclusive"] for r in reports)
    return summary, ok


def cmd_floquet(args, cfg):
    sec = _section(cfg, "floquet")
    if args.certificate is not None:
        kam_cfg, reductions = _reductions_from_certificate(args.certificate)
        kc = KamConfig.from_dict({k: v for k, v in kam_cfg.items() if k != "workers"})
    else:
        kc = _kam_config(cfg, args)
        res = run(kc)
        reductions = [(r.omega, r.Omega) for r in res.reduced if r is not None]
    eps = kc.epsilon if sec["epsilon"] is None else float(sec["epsilon"])
    pot = dict(kc.potential, n=kc.n)
    pot.setdefault("beta", kc.beta)
    art = Artifacts(_out_dir(args), config_hash({"floquet": sec, "kam": _kam_hash(kc)}))
    _, ok = _floquet(art, sec, pot, eps, reductions)
    return EXIT_OK if ok else EXIT_DIVERGED


def cmd_full(args, cfg):
    kc = _kam_config(cfg, args)
    sec = _section(cfg, "floquet")
    art = Artifacts(_out_dir(args), config_hash({"kam": _kam_hash(kc), "floquet": sec}))
    result = run(kc)
    _write_kam(art, result)
    reductions = [(r.omega, r.Omega) for r in result.reduced if r is not None]
    eps = kc.epsilon if sec["epsilon"] is None else float(sec["epsilon"])
    pot = dict(kc.potential, n=kc.n)
    pot.setdefault("beta", kc.beta)
    summary, ok = _floquet(art, sec, pot, eps, reductions)
    art.json("deviation_report.json", {
        "max_deviation": max(r["max_deviation"] for r in summary["reports"]),
        "min_match_rate": min(r["match_rate"] for r in summary["reports"]),
        "survival": result.survival, "diverged": result.diverged, "ok": ok})
    return EXIT_DIVERGED if (result.diverged or not ok) else EXIT_OK


COMMANDS = {
    "hermite-check": cmd_hermite,
    "potential-check": cmd_potential,
    "kam-run": cmd_kam,
    "measure-estimate": cmd_measure,
    "floquet-verify": cmd_floquet,
    "full-pipeline": cmd_full,
}


def run_command(argv=None):
    """Parse ``argv``, run the subcommand and return the exit status."""
    try:
        args = _parser().parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except SpecError as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except QhoKamError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_DIVERGED


def main():
    sys.exit(run_command())
