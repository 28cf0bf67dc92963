"""Command-line entry point: ``bvlab <command> [options]``."""
from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import report as rp
from .config import ConfigError, RunConfig, parse_config

log = logging.getLogger("bvlab")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_MODULE = 0, 1, 2, 3
OUT_ENV = "BVLAB_OUT"


class Run:
    """Output directory, assertion bookkeeping and report emission for one command."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, report_name: str = "report.json"):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.report_path = out / report_name
        self.assertions = []
        out.mkdir(parents=True, exist_ok=True)

    def check(self, name: str, passed: bool, value=None, target=None, **detail):
        skipped = name in self.cfg["assertions"]["skip"] or not self.cfg["assertions"]["enabled"]
        row = {"name": name, "passed": bool(passed), "skipped": skipped, "value": value, "target": target}
        row.update(detail)
        self.assertions.append(row)
        log.info("%s %s: value=%s target=%s", "SKIP" if skipped else ("PASS" if passed else "FAIL"), name,
                 value, target)
        return passed

    @property
    def failed(self) -> list:
        return [a["name"] for a in self.assertions if not a["passed"] and not a["skipped"]]

    def finish(self, results: dict) -> int:
        status = "assertion_failed" if self.failed else "ok"
        rep = rp.build_report(self.command, self.cfg, results, self.assertions, status)
        rp.write_json(rep, self.report_path)
        log.info("wrote %s (%s)", self.report_path, status)
        return EXIT_ASSERT if self.failed else EXIT_OK

    def plots(self) -> bool:
        return self.cfg["output"]["plots"]

    def snapshots(self) -> bool:
        return self.cfg["output"]["snapshots"]


def _rel(a, b):
    return abs(a - b) / abs(b)


def _domain_spec(cfg) -> dict:
    d = cfg["domain"]
    return {"kind": d["kind"], "radius": d["radius"], "axes": d["axes"], "coeffs": d["coeffs"]}


def _optimizer_cfg(cfg):
    from .optimizer import MinimizeConfig

    o = cfg["optimizer"]
    return MinimizeConfig(max_iters=o["max_iters"], grad_tol=o["grad_tol"], memory=o["memory"], armijo=o["armijo"],
                          backtrack=o["backtrack"], max_backtracks=o["max_backtracks"], seed=cfg["run"]["seed"],
                          precondition=o["precondition"])


def _write_energies(run: Run, records: list):
    rp.write_csv(run.out / "energies.csv", rp.ENERGY_COLUMNS, rp.energy_rows(records))


def _write_trace(run: Run, u, vortices=None) -> dict:
    tr = rp.boundary_trace(u)
    rp.write_csv(run.out / "boundary_trace.csv", rp.TRACE_COLUMNS, rp.trace_rows(tr))
    if run.plots():
        from .plotting import plot_boundary_phase

        plot_boundary_phase(tr, run.out / "boundary_phase", vortices=vortices)
    return tr


def _snapshot(run: Run, u, name: str):
    if run.snapshots():
        from .energy import save_field

        (run.out / "fields").mkdir(exist_ok=True)
        save_field(u, run.out / "fields" / f"{name}.csv")


def _detect(u):
    from .jacobian import detect_boundary_vortices

    try:
        return detect_boundary_vortices(u), None
    except ValueError as exc:
        return None, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# commands

def cmd_minimize(run: Run, args) -> int:
    from .optimizer import Schedule, continuation, init_field
    from .renorm import minimize_mesh

    cfg = run.cfg
    s = cfg["schedule"]
    sched = Schedule(s["eps"], s["eta"] or None, s["eta_exponent"])
    dom = minimize_mesh(_domain_spec(cfg), min(s["eps"]), cfg["domain"]["n_theta"], cfg["domain"]["n_r"])
    u0 = init_field(dom, cfg["init"]["kind"], seed=cfg["run"]["seed"], eps=sched.stages()[0][0],
                    eta=sched.etas[0], angles=cfg["init"]["angles"])
    counter = itertools.count()

    def on_stage(rec):
        k = next(counter)
        rp.write_json(rec.to_dict(), run.out / "stages" / f"stage_{k:02d}.json")
        _snapshot(run, rec.field, f"stage_{k:02d}")

    stages = continuation(u0, sched, _optimizer_cfg(cfg), on_stage=on_stage)
    records = [st.to_dict() for st in stages]
    vs, err = _detect(stages[-1].field)
    for r, st in zip(records, stages):
        v, _ = _detect(st.field)
        r["vortices"] = v.to_dict() if v is not None else None
    _write_energies(run, records)
    tr = _write_trace(run, stages[-1].field, vs.to_dict() if vs else None)
    pa = [st.energy.penalty + st.energy.anchoring for st in stages]
    ratio = max(p / pa[0] for p in pa) if pa[0] > 0 else 0.0
    run.check("penalty_bounded", ratio <= cfg["tolerances"]["penalty_ratio"], ratio, cfg["tolerances"]["penalty_ratio"])
    run.check("vortices_detected", vs is not None, None if vs is None else vs.to_dict(), "sum of degrees 2",
              error=err)
    return run.finish({"records": records, "mesh": dom.describe(), "vortices": vs, "detection_error": err,
                       "boundary_trace": tr})


def cmd_sweep(run: Run, args) -> int:
    from .jacobian import VortexSet, angular_separation
    from .renorm import gamma_sweep_minimize, gamma_sweep_recovery, recovery_field, recovery_mesh

    cfg = run.cfg
    tol = cfg["tolerances"]
    mode = args.mode or cfg["run"]["mode"]
    spec = _domain_spec(cfg)
    if mode == "recovery":
        sw = cfg["sweep"]
        vs = VortexSet.parse(sw["vortices"])
        rep = gamma_sweep_recovery(spec, vs, sw["eps"], cfg["schedule"]["eta_exponent"], sw["n_theta"], sw["n_r"],
                                   sw["resolution"], sw["growth"], sw["r_patch_factor"],
                                   workers=cfg["run"]["threads"])
        eps = min(sw["eps"])
        dom = recovery_mesh(spec, vs, eps, sw["n_theta"], sw["n_r"], sw["resolution"], sw["growth"])
        last = recovery_field(dom, vs, eps, sw["r_patch_factor"] * np.sqrt(eps), eps ** cfg["schedule"]["eta_exponent"])
        run.check("slope", _rel(rep.A, rep.A_pred) <= tol["recovery_slope_rel"], rep.A, rep.A_pred,
                  rel_tol=tol["recovery_slope_rel"])
        if np.isfinite(rep.B_pred):
            run.check("intercept", _rel(rep.B, rep.B_pred) <= tol["recovery_intercept_rel"], rep.B, rep.B_pred,
                      rel_tol=tol["recovery_intercept_rel"])
        ok = all(r.vortices is not None and sorted(r.vortices.degrees) == sorted(vs.degrees) for r in rep.records)
        run.check("detection", ok, [None if r.vortices is None else r.vortices.to_dict() for r in rep.records],
                  vs.to_dict())
    else:
        s = cfg["schedule"]
        counter = itertools.count()

        def on_stage(rec):
            rp.write_json(rec.to_dict(), run.out / "stages" / f"stage_{next(counter):02d}.json")

        rep = gamma_sweep_minimize(spec, s["eps"], s["eta_exponent"], cfg["domain"]["n_theta"], cfg["domain"]["n_r"],
                                   init=cfg["init"]["kind"], seed=cfg["run"]["seed"], cfg=_optimizer_cfg(cfg),
                                   on_stage=on_stage)
        fields = rep.extra["fields"]
        last = fields[-1]
        for f, r in zip(fields, rep.records):
            _snapshot(run, f, f"eps_{r.eps:.6g}")
        fin = rep.records[-1].vortices
        run.check("detection", fin.N == 2 and sorted(fin.degrees) == [1, 1], fin.to_dict(), {"N": 2, "d": [1, 1]})
        sep = angular_separation(fin)
        run.check("separation", abs(sep - np.pi) <= tol["separation_abs"], sep, np.pi, abs_tol=tol["separation_abs"])
        run.check("penalty_bounded", rep.penalty_record["max_ratio"] <= tol["penalty_ratio"],
                  rep.penalty_record["max_ratio"], tol["penalty_ratio"])
        lo, up = rep.extra["lower_bound"], rep.extra["upper_bound"]
        slack = rep.extra["lower_bound_slack"]
        within = all((l - slack) <= r.energy.total and (u is None or r.energy.total <= u)
                     for l, u, r in zip(lo, up, rep.records))
        run.check("energy_bracket", within, [r.energy.total for r in rep.records], {"lower": lo, "upper": up},
                  slack=slack)
        run.check("slope", _rel(rep.A, rep.A_pred) <= tol["minimize_slope_rel"], rep.A, rep.A_pred,
                  rel_tol=tol["minimize_slope_rel"])
    out = rep.to_dict()
    _write_energies(run, out["records"])
    out["boundary_trace"] = _write_trace(run, last, out["records"][-1]["vortices"])
    if run.plots():
        from .plotting import plot_energy_vs_logeps

        rows = rp.energy_rows(out["records"])
        pred = (rep.A_pred, rep.B_pred) if np.isfinite(rep.B_pred) else None
        plot_energy_vs_logeps(rows, run.out / "energy_vs_logeps", fit=(rep.A, rep.B), prediction=pred,
                              title=f"{mode} sweep")
    return run.finish(out)


def cmd_jacobian(run: Run, args) -> int:
    from .energy import VectorField2D, read_field
    from .geometry import make_disk
    from .jacobian import (build_escaping_vortex, default_dictionary, dual_norm, escaping_vortex_domain,
                           pair_boundary, pair_global, pair_interior, pairings)

    cfg = run.cfg
    jc = cfg["jacobian"]
    fixture = "field" if args.field else jc["fixture"]
    field_path = args.field or jc["field"]
    dc = cfg["dictionary"]
    cases = []
    if fixture == "escaping":
        target = jc["expected_multiple"] * 2 * np.pi
        for eps in jc["eps"]:
            dom = escaping_vortex_domain(eps, refine=jc["refine"])
            u = build_escaping_vortex(eps, dom)
            D = default_dictionary(dom, dc["n_boundary"], dc["n_interior"])
            P = pairings(u, D)
            mass = pair_boundary(u, np.ones(len(dom.nodes)))
            cases.append({"eps": eps, "n_nodes": len(dom.nodes), "boundary_mass": mass,
                          "boundary_mass_over_2pi": mass / (2 * np.pi), "dual_norm": dual_norm(P.global_),
                          "dual_norm_interior": dual_norm(P.interior), "dual_norm_boundary": dual_norm(P.boundary),
                          "pairings": P.to_rows()})
            run.check(f"boundary_mass[eps={eps:g}]",
                      _rel(mass, target) <= cfg["tolerances"]["escaping_mass_rel"], mass, target,
                      rel_tol=cfg["tolerances"]["escaping_mass_rel"])
        dn = [c["dual_norm"] for c in cases]
        ratios = [a / b for a, b in zip(dn[:-1], dn[1:])]
        if ratios:
            run.check("dual_norm_halving", min(ratios) >= cfg["tolerances"]["dual_norm_halving"], ratios,
                      cfg["tolerances"]["dual_norm_halving"])
        results = {"fixture": fixture, "cases": cases, "halving_ratios": ratios}
    elif fixture == "identity":
        for n in (16, 32):
            dom = make_disk(1.0, n, 4 * n)
            u = VectorField2D(dom.nodes.copy(), dom, 0.1, 1e-3)
            q = 0.5 * (dom.nodes ** 2).sum(axis=1)
            vals = {"global": pair_global(u, q), "interior": pair_interior(u, q), "boundary": pair_boundary(u, q)}
            D = default_dictionary(dom, dc["n_boundary"], dc["n_interior"])
            cases.append({"n_r": n, **vals, "pairings": pairings(u, D).to_rows()})
        exact = {"global": -np.pi / 2, "interior": np.pi / 2, "boundary": -np.pi}
        for k, v in exact.items():
            errs = [abs(c[k] - v) for c in cases]
            run.check(f"identity_{k}", errs[-1] <= 0.75 * errs[0] + 1e-12, errs, "error decreases under refinement")
        results = {"fixture": fixture, "cases": cases, "exact": exact}
    else:
        if not field_path:
            raise ConfigError("the field fixture needs --field or jacobian.field", "jacobian.field")
        u = read_field(field_path)
        D = default_dictionary(u.domain, dc["n_boundary"], dc["n_interior"])
        P = pairings(u, D)
        vs, err = _detect(u)
        mass = pair_boundary(u, np.ones(len(u.domain.nodes)))
        cases.append({"eps": u.eps, "field": str(field_path), "pairings": P.to_rows(), "boundary_mass": mass,
                      "global_mass": pair_global(u, np.ones(len(u.domain.nodes))),
                      "dual_norm": dual_norm(P.global_), "vortices": vs, "detection_error": err})
        run.check("global_mass_zero", abs(cases[0]["global_mass"]) <= 1e-8 * max(1.0, abs(mass)),
                  cases[0]["global_mass"], 0.0)
        results = {"fixture": fixture, "cases": cases, "boundary_trace": _write_trace(run, u)}
    rows = [{"case": c.get("eps", c.get("n_r")), **r} for c in cases for r in c["pairings"]]
    rp.write_csv(run.out / "pairings.csv", ["case"] + rp.PAIRING_COLUMNS, rows)
    return run.finish(results)


def cmd_renorm(run: Run, args) -> int:
    from .geometry import CircleCurve, domain_from_spec
    from .jacobian import VortexSet
    from .renorm import gamma0, w_disk, w_numeric

    cfg = run.cfg
    rc = cfg["renorm"]
    spec = _domain_spec(cfg)
    if args.domain:
        spec["kind"] = args.domain
    vs = VortexSet.parse(args.vortices or rc["vortices"])
    dom = domain_from_spec(spec, rc["n_r"], rc["n_theta"])
    res = {"domain": dom.describe(), "vortices": vs, "gamma0": gamma0()}
    closed = None
    if isinstance(dom.curve, CircleCurve) and all(abs(d) == 1 for d in vs.degrees):
        closed = w_disk(vs, dom.curve.radius)
        res["W_closed_form"] = closed
    numeric = None
    if closed is None or rc["numeric"] or args.numeric:
        nr = w_numeric(dom, vs, tuple(rc["rho_schedule"]), rc["cauchy_tol"])
        numeric = nr.W
        res["W_numeric"] = {"W": nr.W, "rhos": nr.rhos, "values": nr.values, "fit_residual": nr.fit_residual,
                            "cauchy": nr.cauchy, "converged": nr.converged}
        run.check("numeric_converged", nr.converged, nr.cauchy, rc["cauchy_tol"])
    if closed is not None and numeric is not None:
        scale = max(abs(closed), 2 * np.pi * np.log(2))
        err = abs(numeric - closed) / scale
        run.check("numeric_vs_closed", err <= cfg["tolerances"]["renorm_rel"], err, cfg["tolerances"]["renorm_rel"])
    W = closed if closed is not None else numeric
    res["W"] = W
    res["second_order_constant"] = W + vs.N * gamma0()
    return run.finish(res)


def _synthetic_field(dom, eps, eta):
    from .energy import VectorField2D

    x, y = dom.nodes.T
    phi = 1.5 * x + 0.8 * y ** 2
    m = 1.0 - eta * 0.5 * (1.0 + x * y)
    return VectorField2D(np.stack([m * np.cos(phi), m * np.sin(phi)], axis=1), dom, eps, eta)


def cmd_project(run: Run, args) -> int:
    from .energy import read_field, save_field
    from .geometry import make_disk
    from .jacobian import default_dictionary, jacobian_distance
    from .lifting import project_to_s1

    cfg = run.cfg
    pc = cfg["project"]
    beta = args.beta if args.beta is not None else pc["beta"]
    field_path = args.field or pc["field"]
    dc = cfg["dictionary"]
    if field_path:
        inputs = [read_field(field_path)]
    else:
        dom = make_disk(1.0, pc["n_r"], pc["n_theta"])
        inputs = [_synthetic_field(dom, pc["eps"], eta) for eta in pc["eta"]]
    D = default_dictionary(inputs[0].domain, dc["n_boundary"], dc["n_interior"])
    rows = []
    for u in inputs:
        U, rep = project_to_s1(u, beta)
        row = rep.to_dict()
        row.update({"eta": u.eta, "l2": float(np.sqrt(rep.l2_sq)), "jacobian_distance": jacobian_distance(U, u, D),
                    "unit_defect": float(np.max(np.abs(U.modulus - 1.0)))})
        rows.append(row)
        if run.snapshots():
            (run.out / "fields").mkdir(exist_ok=True)
            save_field(U, run.out / "fields" / f"projected_eta_{u.eta:.6g}.csv")
    run.check("unit_modulus", max(r["unit_defect"] for r in rows) <= 1e-12, max(r["unit_defect"] for r in rows), 1e-12)
    res = {"beta": beta, "cases": rows}
    if len(rows) > 1:
        fac = cfg["tolerances"]["projector_factor"]
        rates = []
        for a, b in zip(rows[:-1], rows[1:]):
            q = a["eta"] / b["eta"]
            rates.append({"eta": [a["eta"], b["eta"]], "l2_sq_ratio": a["l2_sq"] / b["l2_sq"],
                          "l2_sq_predicted": q ** beta,
                          "jacobian_ratio": a["jacobian_distance"] / b["jacobian_distance"],
                          "jacobian_predicted": q ** (beta / 2)})
        res["rates"] = rates
        for key in ("l2_sq", "jacobian"):
            obs = [r[f"{key}_ratio"] for r in rates]
            pred = [r[f"{key}_predicted"] for r in rates]
            ok = all(p / fac <= o <= p * fac for o, p in zip(obs, pred))
            run.check(f"{key}_rate", ok, obs, pred, factor=fac)
        if run.plots():
            from .plotting import plot_rates

            plot_rates([r["eta"] for r in rows], {"‖U−u‖²": [r["l2_sq"] for r in rows],
                                                 "J distance": [r["jacobian_distance"] for r in rows]},
                       run.out / "projector_rates")
    return run.finish(res)


def cmd_oned(run: Run, args) -> int:
    from . import onedim as od

    cfg = run.cfg
    oc = cfg["oned"]
    tol = cfg["tolerances"]
    task = args.task or oc["task"]
    r = args.r if args.r is not None else oc["r"]
    eps_list = [args.eps] if args.eps is not None else oc["eps"]
    res = {"task": task}
    if task == "peierls":
        cases = []
        for eps in eps_list:
            fld, tr = od.peierls_profile(eps, r, oc["resolution"])
            e = od.halfdisk_energy(fld)
            oracle = od.peierls_energy_oracle(eps, r)
            cases.append({"eps": eps, "r": r, "energy": e, "exact_integral": od.peierls_energy_exact(eps, r),
                          "oracle": oracle, "rel_error": _rel(e, oracle), "trace_f_eps": od.f_eps(tr),
                          "n_nodes": len(fld.mesh.nodes)})
            run.check(f"peierls[eps={eps:g}]", _rel(e, oracle) <= tol["peierls_rel"], e, oracle,
                      rel_tol=tol["peierls_rel"])
        res["cases"] = cases
    elif task == "minimize":
        cases = []
        for eps in eps_list:
            out = od.minimize_f_eps(eps, r)
            cases.append(out.to_dict())
            bound = od.GAMMA0 - tol["oned_excess_margin"]
            run.check(f"excess[eps={eps:g}]", out.excess >= bound, out.excess, bound)
        res["cases"] = cases
        res["gamma0"] = od.GAMMA0
        res["fitted_M"] = -min(c["excess"] for c in cases)
    else:
        A = _intervals(args.A) if args.A else oc["A"]
        B = _intervals(args.B) if args.B else oc["B"]
        I = _intervals(args.I)[0] if args.I else oc["I"]
        rb = od.rearrangement_bound(A, B, I, tol["rearrangement_abs"])
        res.update({"A": A, "B": B, "I": I, **rb.to_dict()})
        run.check("rearrangement", rb.holds, rb.lhs, rb.rhs, abs_tol=tol["rearrangement_abs"])
    return run.finish(res)


def _intervals(text: str) -> list:
    """``"0:0.25,0.5:0.6"`` -> [[0, 0.25], [0.5, 0.6]]."""
    out = []
    for item in text.split(","):
        a, b = item.split(":")
        out.append([float(a), float(b)])
    return out


def cmd_export(args) -> int:
    paths = rp.export_plotdata(args.report, args.out, plots=not args.no_plots)
    for p in paths:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------

COMMANDS = {"minimize": cmd_minimize, "sweep": cmd_sweep, "jacobian": cmd_jacobian, "renorm": cmd_renorm,
            "project": cmd_project, "oned": cmd_oned}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help=f"output directory or report path (default ${OUT_ENV}/<command>)")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bvlab", description="Boundary-vortex energy experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("minimize", parents=[common], help="eps-continuation minimization")
    s = sub.add_parser("sweep", parents=[common], help="energy expansion sweep")
    s.add_argument("--mode", choices=["recovery", "minimize"])
    j = sub.add_parser("jacobian", parents=[common], help="Jacobian pairings and vortex detection")
    j.add_argument("--field", help="field snapshot to analyse")
    j.add_argument("--dict", default=None, help="test dictionary (default)")
    r = sub.add_parser("renorm", parents=[common], help="renormalized energy")
    r.add_argument("--domain", choices=["disk", "ellipse", "fourier"])
    r.add_argument("--vortices", help='e.g. "0:+1,pi:+1"')
    r.add_argument("--numeric", action="store_true", help="also evaluate by singularity splitting")
    pr = sub.add_parser("project", parents=[common], help="projection onto unit-length fields")
    pr.add_argument("--field")
    pr.add_argument("--beta", type=float)
    o = sub.add_parser("oned", parents=[common], help="one-dimensional boundary functional")
    o.add_argument("task", nargs="?", choices=["peierls", "minimize", "rearr"])
    o.add_argument("--eps", type=float)
    o.add_argument("--r", type=float)
    o.add_argument("--A", help='interval union "a:b,c:d"')
    o.add_argument("--B")
    o.add_argument("--I")
    e = sub.add_parser("export", help="CSV and figures from a report")
    e.add_argument("report")
    e.add_argument("--out")
    e.add_argument("--no-plots", action="store_true")
    e.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> tuple[RunConfig, Path, str]:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.data["run"]["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", "run.threads")
        cfg.data["run"]["threads"] = args.threads
    if getattr(args, "dict", None) not in (None, "default"):
        raise ConfigError(f"unknown dictionary {args.dict!r}", "dictionary.kind")
    name = "report.json"
    if args.out:
        out = Path(args.out)
        if out.suffix == ".json":
            out, name = out.parent, out.name
    elif cfg["output"]["dir"]:
        out = Path(cfg["output"]["dir"])
    else:
        out = Path(os.environ.get(OUT_ENV, "bvlab-out")) / args.command
    return cfg, out, name


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "export":
        try:
            return cmd_export(args)
        except (FileNotFoundError, ValueError) as exc:
            print(f"bvlab export: {exc}", file=sys.stderr)
            return EXIT_MODULE
    try:
        cfg, out, name = _resolve(args)
    except ConfigError as exc:
        print(f"bvlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(args.command, cfg, out, name)
    np.random.seed(cfg["run"]["seed"])
    try:
        code = COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"bvlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # module errors become a machine-readable record
        rec = {"schema": rp.SCHEMA_VERSION, "command": args.command, "error": type(exc).__name__,
               "message": str(exc), "config_hash": cfg.hash(), "traceback": traceback.format_exc()}
        dump = getattr(exc, "dump", None)
        if dump is not None:
            rec["detail"] = dump
        rp.write_json(rec, out / "error.json")
        print(f"bvlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODULE
    if code == EXIT_ASSERT:
        print(f"bvlab {args.command}: assertions failed: {', '.join(run.failed)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
