"""Command-line front end: ``mfbose {bogoliubov,ed,ldp,verify,sweep} --config run.toml``.

Exit codes: 0 success, 2 validation error, 3 solver failure, 4 failed identity check.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__, fock, solver
from .bogoliubov import bogoliubov_data
from .config import RunConfig, load_config
from .errors import IdentityAssertionError, MfboseError, ValidationError
from .excitations import (
    ExcitationSystem,
    interpolation_diagnostics,
    mgf_pathway_check,
    verify_conjugation_identities,
)
from .ldp import cumulants, ldp_report, n_sweep, observable_law


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


class _Outputs:
    def __init__(self, out_dir: Path, cfg: RunConfig):
        self.dir = out_dir
        self.cfg = cfg
        self.files: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.files.append(name)
        return path

    def json(self, name: str, payload: dict) -> Path:
        return self.write(name, _json(_clean({"config_hash": self.cfg.hash, **payload})))

    def csv(self, name: str, header: list, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write(f"# config_hash={self.cfg.hash}\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)
        return self.write(name, buf.getvalue())


def _f(x) -> str:
    return f"{float(x):.12e}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_bogoliubov(cfg: RunConfig, out: _Outputs, args) -> None:
    data = bogoliubov_data(cfg.potential, cfg.observable, cfg.lattice)
    out.json("bogoliubov.json", {"lattice": {"dimension": cfg.lattice.dimension, "cutoff": cfg.lattice.cutoff},
                                 **data.to_dict()})


def cmd_ed(cfg: RunConfig, out: _Outputs, args) -> None:
    rows, records = [], []
    for N in cfg.N_list:
        sector = fock.enumerate_sector(cfg.lattice, N, max_dim=cfg.max_dim)
        H = fock.assemble_hamiltonian(cfg.potential, sector)
        gs = solver.ground_state(H, tol=cfg.tol, dense_limit=cfg.dense_limit)
        depl = float(np.sum(np.abs(gs.vector) ** 2 * sector.n_plus))
        S = fock.assemble_one_body(cfg.observable.centered, sector)
        var = float(cumulants(gs.vector, S, N, order=2)[1])
        rec = {"N": N, "dimension": sector.dim, "energy": gs.energy, "gap": gs.gap, "degenerate": gs.degenerate,
               "residual": gs.residual, "depletion": depl, "var_per_N": var}
        records.append(rec)
        rows.append([N, sector.dim, _f(gs.energy), _f(gs.gap), int(gs.degenerate), _f(depl), _f(var)])
        if args.export_operators:
            fock.export_triplets(H, out.dir / f"hamiltonian_N{N:03d}.txt")
            out.files.append(f"hamiltonian_N{N:03d}.txt")
    out.csv("ed.csv", ["N", "dimension", "E_N", "gap", "degenerate", "depletion", "var_per_N"], rows)
    out.json("ed.json", {"ground_states": records})


def cmd_ldp(cfg: RunConfig, out: _Outputs, args) -> None:
    bog = bogoliubov_data(cfg.potential, cfg.observable, cfg.lattice)
    fns = bog.f_norm_sq_active
    lam_rows, x_rows, summary = [], [], []
    for N in cfg.N_list:
        law = observable_law(cfg.potential, cfg.observable, cfg.lattice, N, tol=cfg.tol, dense_limit=cfg.dense_limit)
        rep = ldp_report(law, cfg.lambdas, cfg.x_grid, fns, cfg.observable.triple_norm, tol=cfg.expm_tol,
                         config_hash=cfg.hash)
        out.json(f"ldp_N{N:03d}.json", rep.to_dict())
        lam_rows += [[N, repr(float(l)), _f(v)] for l, v in zip(rep.lambdas, rep.scgf)]
        x_rows += [[N, repr(float(x)), _f(a), _f(b), _f(c), _f(d), _f(e), _f(g)]
                   for x, a, b, c, d, e, g in zip(rep.x, rep.tails, rep.tails_ge, rep.empirical_rate, rep.legendre,
                                                  rep.bogoliubov_rate, rep.chernoff_margins)]
        finite = np.isfinite(rep.chernoff_margins)
        summary.append({"N": N, "var_per_N": rep.var_per_N, "clt_kolmogorov": rep.clt_distance,
                        "min_chernoff_margin": float(rep.chernoff_margins[finite].min()) if finite.any() else None,
                        "residual_exponent": rep.comparison.get("residual_exponent")})
    out.csv("ldp_lambda.csv", ["N", "lambda", "Lambda_N"], lam_rows)
    out.csv("ldp_x.csv", ["N", "x", "tail_gt", "tail_ge", "empirical_rate", "legendre", "bogoliubov_rate",
                          "chernoff_margin"], x_rows)
    out.json("ldp_summary.json", {"f_norm_sq": fns, "triple_norm": cfg.observable.triple_norm, "per_N": summary})


def verification_suite(cfg: RunConfig, *, inject_fault: str | None = None) -> dict:
    """Every matrix identity as ``name -> {"residual", "tolerance"}``."""
    checks = {}

    def record(name, residual, tol):
        checks[name] = {"residual": float(residual), "tolerance": tol}

    corrupt = inject_fault == "corrupt-q"
    for N in cfg.N_list:
        system = ExcitationSystem(cfg.potential, N, fock.enumerate_capped(cfg.lattice, N, N, max_dim=cfg.max_dim),
                                  corrupt_Q=corrupt)
        record(f"excitation_identity[N={N}]", system.excitation_identity_residual(), 1e-10)
        record(f"remainder_constructions[N={N}]", system.remainder.discrepancy, 1e-10)
        herm = max(float(abs(A - A.conj().T).max()) if (A - A.conj().T).nnz else 0.0
                   for A in (system.H, system.Q, system.R, system.remainder.transcribed))
        record(f"hermitian[N={N}]", herm, 0.0)

    N = cfg.verify["N"]
    system = ExcitationSystem(cfg.potential, N, fock.enumerate_capped(cfg.lattice, N, N, max_dim=cfg.max_dim))
    obs = cfg.observable
    lhs = system.emap.conjugate(fock.assemble_one_body(obs.centered, system.emap.sector))
    rhs = fock.assemble_one_body(obs.excitation_block, system.basis) + np.sqrt(N) * fock.assemble_phi_plus(
        obs.g_hat, system.basis, N)
    d = abs(lhs - rhs)
    record(f"observable_excitation_map[N={N}]", float(d.max()) if d.nnz else 0.0, 1e-12)

    rng = np.random.default_rng(cfg.verify["seed"])
    k = len(system.basis.modes)
    h = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    h *= cfg.verify["h_norm"] / np.linalg.norm(h)
    rep = verify_conjugation_identities(h, cfg.verify["s"], N, system.basis, seed=cfg.verify["seed"])
    for name, res in rep.residuals.items():
        record(f"{name}[N={N}]", res, rep.tolerances[name])

    mgf = mgf_pathway_check(cfg.verify["lambda"], N, obs, cfg.potential, cfg.lattice, tol=min(cfg.expm_tol, 1e-12),
                            dense_limit=cfg.dense_limit)
    record(f"mgf_pathways[N={N}]", mgf.max_relative_discrepancy, 1e-9)
    return checks


def cmd_verify(cfg: RunConfig, out: _Outputs, args) -> None:
    checks = verification_suite(cfg, inject_fault=args.inject_fault)
    failures = {k: v for k, v in checks.items() if not v["residual"] <= v["tolerance"]}
    out.json("verify.json", {"checks": checks, "failures": sorted(failures), "ok": not failures})
    if failures:
        worst = max(failures, key=lambda k: failures[k]["residual"] - failures[k]["tolerance"])
        for name, v in sorted(failures.items()):
            print(f"FAILED {name}: residual {v['residual']:.3e} > {v['tolerance']:.1e}", file=sys.stderr)
        raise IdentityAssertionError(worst, failures[worst]["residual"], failures[worst]["tolerance"])


def cmd_sweep(cfg: RunConfig, out: _Outputs, args) -> None:
    sw = n_sweep(cfg.potential, cfg.observable, cfg.lattice, cfg.N_list, cfg.lambdas, cfg.x_grid, tol=cfg.tol,
                 expm_tol=cfg.expm_tol, dense_limit=cfg.dense_limit, threads=args.threads, config_hash=cfg.hash)
    for note in sw.notices:
        print(f"notice: {note}", file=sys.stderr)
    out.write("sweep.csv", f"# config_hash={cfg.hash}\n" + sw.csv())
    diag = interpolation_diagnostics(cfg.s_grid, cfg.N_list, cfg.potential, cfg.lattice, tol=cfg.tol,
                                     dense_limit=cfg.dense_limit, threads=args.threads)
    out.write("diagnostics.csv", f"# config_hash={cfg.hash}\n" + diag.to_csv())
    gap_vs_s = {repr(float(s)): min(r.gap for r in diag.rows if r.s == s) for s in cfg.s_grid}
    fa = sw.f_norm_sq_active
    table = []
    for rep in sw.reports:
        table.append({"N": rep.N, "var_per_N": rep.var_per_N, "f_norm_sq": fa,
                      "rate": rep.empirical_rate.tolist(), "bogoliubov_rate": rep.bogoliubov_rate.tolist()})
    out.json("sweep.json", {"summary": sw.summary(), "x": sw.reports[0].x.tolist(), "table": table,
                            "gap_vs_s": gap_vs_s, "min_gap": diag.min_gap, "flags": diag.flags})


COMMANDS = {
    "bogoliubov": (cmd_bogoliubov, "closed-form Bogoliubov quantities"),
    "ed": (cmd_ed, "ground states of the N-particle Hamiltonian"),
    "ldp": (cmd_ldp, "generating functions, tails, rates and CLT distances"),
    "verify": (cmd_verify, "check every exact operator identity (nonzero exit on failure)"),
    "sweep": (cmd_sweep, "N sweep with extrapolation and interpolation diagnostics"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", default=None, help="output directory (default: [output].dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for grid cells")
    common.add_argument("--dense-limit", type=int, default=None, help="largest dimension diagonalized densely")
    common.add_argument("--tol", type=float, default=None, help="eigensolver residual tolerance")
    common.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="mfbose", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mfbose {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name == "ed":
            p.add_argument("--export-operators", action="store_true", help="write H_N as row/col/re/im triplets")
    return parser


def _update_manifest(out: _Outputs, command: str, seconds: float) -> None:
    path = out.dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    if manifest.get("config_hash") not in (None, out.cfg.hash):
        manifest = {}
    manifest["config_hash"] = out.cfg.hash
    manifest["version"] = __version__
    manifest.setdefault("outputs", {})[command] = sorted(out.files)
    manifest.setdefault("timings", {})[command] = round(seconds, 6)
    path.write_text(_json(manifest))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        overrides = {"solver": {"dense_limit": args.dense_limit, "tol": args.tol}}
        cfg = load_config(args.config, overrides=overrides)
        out = _Outputs(Path(args.out) if args.out else cfg.out_dir, cfg)
        start = time.perf_counter()
        COMMANDS[args.command][0](cfg, out, args)
        _update_manifest(out, args.command, time.perf_counter() - start)
    except MfboseError as exc:
        print(f"mfbose {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
