"""Command-line front end.

Every subcommand reads an optional ``--config`` TOML file, applies flag
overrides, writes its tables and a ``manifest.json`` into the output
directory (``--out``, else ``$EDICKE_OUTPUT_DIR``, else ``edicke_out``) and
prints a short report.  Exit codes: 0 success, 1 solver or analysis failure,
2 configuration or input error.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, atlas, dicke_mf, ed, micro, thz
from .config import ConfigError, load_config
from .mfcore import SolverError
from .output import (RunManifest, Timer, output_dir, write_document, write_manifest,
                     write_table)
from .params import ExternalConditions, ParameterError

log = logging.getLogger("edicke")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class InputError(Exception):
    """Unreadable or invalid input file; the message names the file."""


def _read_config(args):
    text = None
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(args.config, f"cannot read configuration file: {exc.strerror}")
    return load_config(text, _overrides(args))


def _overrides(args):
    pairs = {"t": "conditions.temperature", "b": "conditions.b_field",
             "axis": "conditions.axis", "gz": "reduced.g_lande_z",
             "workers": "solver.workers", "n": "ed.n_spins", "nmax": "ed.n_max",
             "ed_temperature": "ed.temperature", "d": "thz.thickness",
             "t0": "mce.t0", "nt": "sweep.n_t", "nh": "sweep.n_h",
             "model": "sweep.solver"}
    return {dotted: getattr(args, name) for name, dotted in pairs.items()
            if getattr(args, name, None) is not None}


def _calibrated(cfg, manifest):
    """Reduced parameters with g_lande_z set, calibrating it when absent."""
    if cfg.reduced.g_lande_z is not None:
        return cfg.reduced
    with Timer(manifest, "calibrate_gz"):
        cal = atlas.calibrate_gz(cfg.reduced, settings=cfg.solver)
    manifest.config.setdefault("calibration", {})["g_lande_z"] = cal.g_lande_z
    manifest.config["calibration"]["critical_field"] = cal.critical_field
    log.info("calibrated g_lande_z = %.17g", cal.g_lande_z)
    return cfg.reduced.with_(g_lande_z=cal.g_lande_z)


def _phase_of(ops, eps):
    return atlas.classify(atlas.OrderParameters(*ops), eps)


# -- subcommands -------------------------------------------------------------

def cmd_solve(cfg, args, manifest, out):
    cond = cfg.conditions
    model = args.model or "reduced"
    with Timer(manifest, "solve"):
        if model == "micro":
            if cfg.micro is None:
                raise ConfigError("micro", "the micro model needs a [micro] section")
            best, _ = micro.micro_solve_point(cfg.micro, cond, settings=cfg.solver)
            ops = micro.order_parameters(best, cfg.micro.s_fe)
            vec = dict(sigma_a=best.sigma_a, sigma_b=best.sigma_b, s_a=best.s_a, s_b=best.s_b)
        else:
            params = cfg.reduced if cond.b_field == 0 else _calibrated(cfg, manifest)
            best, _ = dicke_mf.solve_point(params, cond, settings=cfg.solver)
            ops = dicke_mf.order_parameters(best)
            vec = dict(m_a=best.m_a, m_b=best.m_b, alpha_im=best.alpha.imag)
    phase = _phase_of(ops, cfg.solver.eps)
    report = dict(model=model, temperature=cond.temperature, b_field=cond.b_field,
                  phase=phase, seed=best.seed_id, free_energy=best.free_energy,
                  residual=best.residual, iterations=best.iterations,
                  ez=ops[0], ex=ops[1], condensate=ops[2], mz_total=ops[3], **vec)
    write_document(out / "state.json", report, manifest)
    print(f"phase {phase}")
    for key in ("free_energy", "residual", "ez", "ex", "condensate", "mz_total"):
        print(f"{key} {report[key]:.17g}")
    return EXIT_OK


def _grids(cfg):
    s = cfg.sweep
    return np.linspace(s.t_min, s.t_max, s.n_t), np.linspace(s.h_min, s.h_max, s.n_h)


def _run_sweep(cfg, manifest):
    tg, hg = _grids(cfg)
    if cfg.sweep.solver == "micro":
        params = cfg.micro
        axis = cfg.conditions.axis
    else:
        params = _calibrated(cfg, manifest)
        axis = "z"
    with Timer(manifest, "sweep"):
        pm = atlas.sweep(params, tg, hg, solver=cfg.sweep.solver, settings=cfg.solver,
                         axis=axis)
    return params, pm


_MAP_COLUMNS = ("T_K", "B_T", "phase", "ez", "ex", "condensate", "mz_total",
                "free_energy_meV", "converged")


def _map_rows(pm):
    conv = pm.converged.ravel()
    for k, row in enumerate(pm.rows()):
        yield row + (bool(conv[k]),)


def cmd_sweep(cfg, args, manifest, out):
    _, pm = _run_sweep(cfg, manifest)
    write_table(out / "phase_map.csv", _MAP_COLUMNS, _map_rows(pm), manifest)
    counts = {p: int((pm.labels == p).sum()) for p in (*atlas.PHASES, atlas.FAILED)}
    write_document(out / "summary.json", dict(cells=int(pm.labels.size), counts=counts),
                   manifest)
    print(f"cells {pm.labels.size} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_boundaries(cfg, args, manifest, out):
    params, pm = _run_sweep(cfg, manifest)
    with Timer(manifest, "boundaries"):
        bset = atlas.extract_boundaries(pm, cfg.solver.jump)
        triple = bset.triple_point
        if cfg.sweep.refine and cfg.sweep.solver == "reduced":
            bset = atlas.refine_boundary_orders(params, pm, bset, cfg.solver)
            refined, _ = atlas.refine_triple_point(params, pm, settings=cfg.solver)
            triple = refined or triple
    rows = [(bd.name, t, h, j, bd.order) for bd in bset.boundaries
            for (t, h), j in zip(bd.points, bd.jumps)]
    write_table(out / "boundaries.csv", ("boundary", "T_K", "B_T", "jump", "order"), rows,
                manifest)
    summary = dict(triple_point=triple,
                   boundaries={bd.name: dict(order=bd.order, points=len(bd.points),
                                             max_jump=float(np.max(bd.jumps)))
                               for bd in bset.boundaries})
    write_document(out / "summary.json", summary, manifest)
    for bd in bset.boundaries:
        print(f"{bd.name} {bd.order} points={len(bd.points)} max_jump={np.max(bd.jumps):.3g}")
    print("triple_point " + ("none" if triple is None else f"{triple[0]:.6g} K {triple[1]:.6g} T"))
    return EXIT_OK


def cmd_mce(cfg, args, manifest, out):
    params = _calibrated(cfg, manifest)
    m = cfg.mce
    summary = {}
    for t0 in m.t0:
        with Timer(manifest, f"mce_{t0:g}"):
            tr = atlas.mce_trace(params, t0, m.h_start, m.h_stop, m.dh, cfg.solver)
        write_table(out / f"mce_{t0:g}K.csv", ("B_T", "T_K", "dTdB_K_per_T"),
                    zip(tr.fields, tr.temperatures, tr.slope), manifest)
        peaks = atlas.local_maxima(tr.fields, tr.slope)
        summary[f"{t0:g}"] = dict(entropy=tr.entropy, maxima_T=peaks)
        print(f"t0={t0:g} K maxima at " + (", ".join(f"{p:.4g}" for p in peaks) or "none"))
    write_document(out / "summary.json", summary, manifest)
    return EXIT_OK


def cmd_spectrum(cfg, args, manifest, out):
    if cfg.micro is None:
        raise ConfigError("micro", "the spectrum command needs a [micro] section")
    cond = cfg.conditions
    params = cfg.micro.decoupled() if args.decoupled else cfg.micro
    with Timer(manifest, "spectrum"):
        best, _ = micro.micro_solve_point(params, cond, settings=cfg.solver)
        spec = micro.linearized_spectrum(best, params, cond)
    write_table(out / "spectrum.csv", ("frequency_THz", "label", "growth_THz"),
                zip(spec.frequencies, spec.labels, spec.growth_rates), manifest)
    write_document(out / "summary.json",
                   dict(stable=spec.stable, defective=spec.defective, seed=best.seed_id,
                        decoupled=bool(args.decoupled)), manifest)
    for f, lab in zip(spec.frequencies, spec.labels):
        print(f"{f:.6f} THz {lab}")
    return EXIT_OK


def cmd_ed(cfg, args, manifest, out):
    e = cfg.ed
    params = cfg.reduced
    if cfg.conditions.b_field != 0:
        params = _calibrated(cfg, manifest)
    cond = ExternalConditions(e.temperature or cfg.conditions.temperature,
                              cfg.conditions.b_field)
    prob = ed.EdProblem(e.n_spins, e.n_max, params, cond, e.max_dim)
    with Timer(manifest, "ed"):
        if e.temperature is None:
            res = ed.ground_state(prob)
        else:
            res = ed.thermal_observables(prob, e.temperature)
    write_document(out / "ed.json", res.as_dict(), manifest)
    for k, v in res.as_dict().items():
        print(f"{k} {v:.17g}" if isinstance(v, float) else f"{k} {v}")
    return EXIT_OK


def _load_trace(path, label, manifest):
    try:
        tr = thz.read_trace(path, label)
    except thz.ThzError as exc:
        raise InputError(str(exc))
    manifest.add_input(path)
    return tr


def cmd_thz(cfg, args, manifest, out):
    s = cfg.thz
    if s.thickness is None:
        raise ConfigError("thz.thickness", "sample thickness is required (--d or [thz])")
    ref = _load_trace(args.ref, "reference", manifest)
    sam = _load_trace(args.sam, "sample", manifest)
    with Timer(manifest, "thz"):
        try:
            oc = thz.analyze(ref, sam, s.thickness, s.snr_floor, s.window, s.echo_window,
                             alpha=s.tukey_alpha)
        except thz.ThzError as exc:
            raise InputError(f"{args.ref}, {args.sam}: {exc}")
    write_table(out / "optical_constants.csv",
                ("freq_THz", "n", "kappa", "alpha_per_cm", "valid"),
                zip(oc.freq, oc.n, oc.kappa, oc.alpha, oc.valid), manifest)
    v = oc.valid
    print(f"valid bins {int(v.sum())} of {v.size}")
    if v.any():
        print(f"median n {np.median(oc.n[v]):.10g}  median kappa {np.median(oc.kappa[v]):.6g}")
    return EXIT_OK


def cmd_thz_synth(cfg, args, manifest, out):
    s = cfg.thz
    if s.thickness is None:
        raise ConfigError("thz.thickness", "sample thickness is required (--d or [thz])")
    ref = thz.reference_pulse(s.n_samples, s.dt, center=s.center, width=s.width)
    rng = np.random.default_rng(s.seed)
    r, m = thz.synthesize_traces(s.n, s.kappa, s.thickness, ref, s.echoes, s.noise_db, rng)
    write_table(out / "reference.csv", ("time_ps", "field"), zip(r.t, r.e), manifest)
    write_table(out / "sample.csv", ("time_ps", "field"), zip(m.t, m.e), manifest)
    print(f"wrote {out / 'reference.csv'} and {out / 'sample.csv'}")
    return EXIT_OK


def cmd_calibrate_gz(cfg, args, manifest, out):
    with Timer(manifest, "calibrate_gz"):
        cal = atlas.calibrate_gz(cfg.reduced, target_field=args.target,
                                 at_temperature=args.at, settings=cfg.solver)
    write_document(out / "calibration.json",
                   dict(g_lande_z=cal.g_lande_z, critical_field=cal.critical_field,
                        target_field=args.target, at_temperature=args.at,
                        history=cal.history), manifest)
    print(f"g_lande_z {cal.g_lande_z:.17g}")
    print(f"critical_field {cal.critical_field:.17g}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "boundaries": cmd_boundaries,
            "mce": cmd_mce, "spectrum": cmd_spectrum, "ed": cmd_ed, "thz": cmd_thz,
            "thz-synth": cmd_thz_synth, "calibrate-gz": cmd_calibrate_gz}


def build_parser():
    p = argparse.ArgumentParser(prog="edicke", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"edicke {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="parallel workers for sweeps")
    common.add_argument("--gz", type=float, help="Er Landé factor g_z (skips calibration)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve one (T, B) point")
    s.add_argument("--t", type=float, help="temperature (K)")
    s.add_argument("--b", type=float, help="field mu0 H (T)")
    s.add_argument("--axis", choices=("x", "y", "z"))
    s.add_argument("--model", choices=("reduced", "micro"))

    for name in ("sweep", "boundaries"):
        s = sub.add_parser(name, parents=[common], help=f"phase-map {name}")
        s.add_argument("--nt", type=int, help="temperature points")
        s.add_argument("--nh", type=int, help="field points")
        s.add_argument("--model", choices=("reduced", "micro"))

    s = sub.add_parser("mce", parents=[common], help="magnetocaloric adiabats")
    s.add_argument("--t0", type=float, nargs="+", help="start temperatures (K)")

    s = sub.add_parser("spectrum", parents=[common], help="micro-model magnon spectrum")
    s.add_argument("--t", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--axis", choices=("x", "y", "z"))
    s.add_argument("--decoupled", action="store_true", help="switch off Fe-Er couplings")

    s = sub.add_parser("ed", parents=[common], help="exact diagonalization")
    s.add_argument("--n", type=int, help="number of Er spins (even)")
    s.add_argument("--nmax", type=int, help="boson cutoff")
    s.add_argument("--b", type=float)
    s.add_argument("--temperature", dest="ed_temperature", type=float,
                   help="thermal state instead of the ground state")

    s = sub.add_parser("thz", parents=[common], help="optical constants from two traces")
    s.add_argument("--ref", required=True)
    s.add_argument("--sam", required=True)
    s.add_argument("--d", type=float, help="sample thickness (mm)")

    s = sub.add_parser("thz-synth", parents=[common], help="synthesize a trace pair")
    s.add_argument("--d", type=float, help="sample thickness (mm)")

    s = sub.add_parser("calibrate-gz", parents=[common], help="calibrate the Er g_z")
    s.add_argument("--target", type=float, default=1.0, help="A->N critical field (T)")
    s.add_argument("--at", type=float, default=0.5, help="temperature (K)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _read_config(args)
        out = Path(args.out) if args.out else output_dir("edicke_out")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"{out}: cannot create output directory ({exc.strerror})")
        manifest = RunManifest(args.command, cfg.resolved(), __version__)
        if args.config:
            manifest.add_input(args.config)
        code = COMMANDS[args.command](cfg, args, manifest, out)
        write_manifest(out, manifest)
        return code
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, atlas.SweepError, ed.TruncationError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
