"""Command-line experiment runner.

Each subcommand runs one scenario from a config file (or the shipped
canonical config when ``--config`` is omitted) and emits a JSON report or a
plot-ready CSV table::

    qtraj decouple --assert
    qtraj scaling-sweep --format csv --out sweep.csv
    qtraj tomography --config my.toml --threads 4 --deterministic

Exit codes: 0 success, 1 failed assertion (with ``--assert``), 2 invalid
configuration, 3 numerical or budget error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .config import SCENARIOS, Builder, ExperimentConfig, encode_matrix, load_config, parse_time
from .control import (
    ControlCoefficientTensor,
    decoupling_scaling_parameters,
    max_finite,
    multistep_scaling_parameters,
    mutual_information_experiment,
    run_decoupling_sequence,
    three_step_game,
)
from .decomposition import (
    conditional_phase_parameters,
    conditional_scaling_parameters,
    decompose_channel,
)
from .dilation import DilatedProcess, SpectralHamiltonian, conditional_map, final_system_state, markovianity_check
from .errors import ConfigError, QTrajError
from .qcore import PAULI_X, trace_distance
from .trajectories import build_ic_basis, reconstruct_final_state, tomograph_process


@dataclass
class Report:
    """Scenario outputs plus provenance.

    Attributes:
        document: JSON-ready report body.
        csv_header: column names of the scenario's CSV table.
        csv_rows: rows of that table.
    """

    document: dict
    csv_header: list = field(default_factory=list)
    csv_rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.document["assertions"])


def _clean(x):
    """Recursively convert to JSON-safe values (``inf`` -> ``"inf"``, NaN -> null)."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, complex):
        return [_clean(x.real), _clean(x.imag)]
    return x


def fingerprint(document: dict) -> str:
    blob = json.dumps(document, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _check(name, passed, detail=None) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


class _Context:
    """Objects shared by the scenario runners, built in a fixed order."""

    def __init__(self, cfg: ExperimentConfig):
        doc = cfg.document
        self.cfg = cfg
        self.builder = Builder(cfg)
        self.spec = SpectralHamiltonian.from_spectra(
            np.array(doc["system"]["s_spectrum"], dtype=float),
            np.array(doc["environment"]["b_spectrum"], dtype=float),
        )
        init = doc["system"].get("initial_state", "maximally_mixed")
        self.rho_s = self.builder.state(init, cfg.d)
        self.rho_e = self.builder.state(doc["environment"]["initial_state"], cfg.d_e)
        self.basis = build_ic_basis(cfg.d)
        self.controls = [self.builder.channel(c, self.basis) for c in doc.get("controls", [])]

    def process(self) -> DilatedProcess:
        reset = self.cfg.document["environment"].get("reset", False)
        return DilatedProcess.from_spectral(self.spec, self.rho_s, self.rho_e, self.cfg.steps,
                                            self.cfg.step_time, reset=reset)


def _run_tomography(ctx, threads):
    table = tomograph_process(ctx.process(), ctx.basis, threads=threads)
    err = table.normalization_error()
    n = table.steps
    header = ["k_%d" % n]
    for alpha in range(n - 1, 0, -1):
        header += ["k_%d" % alpha, "l_%d" % alpha]
    rows = [list(k) + [p] for k, p in table.items()]
    out = {"table": table.to_json(), "normalization_error": err, "entries": len(table)}
    return out, [_check("normalization", err < 1e-10, err)], header + ["p"], rows


def _run_reconstruct(ctx, threads):
    proc = ctx.process()
    table = tomograph_process(proc, ctx.basis, threads=threads)
    rho_rec = reconstruct_final_state(table, ctx.controls)
    rho_dir = final_system_state(proc, ctx.controls)
    td = trace_distance(rho_rec, rho_dir)
    out = {"reconstructed": encode_matrix(rho_rec), "direct": encode_matrix(rho_dir),
           "trace_distance": td}
    d = ctx.cfg.d
    rows = [[i, j, rho_rec[i, j].real, rho_rec[i, j].imag, rho_dir[i, j].real, rho_dir[i, j].imag]
            for i in range(d) for j in range(d)]
    header = ["i", "j", "re_reconstructed", "im_reconstructed", "re_direct", "im_direct"]
    return out, [_check("reconstruction_matches_dilation", td < 1e-8, td)], header, rows


def _run_markov(ctx, threads):
    verdict = markovianity_check(ctx.process(), ctx.basis, tol=ctx.cfg.markov_tol, threads=threads)
    out = {"markovian": verdict.markovian, "max_deviation": verdict.max_deviation,
           "n_maps": verdict.n_maps, "skipped": verdict.skipped, "tol": ctx.cfg.markov_tol}
    checks = []
    expect = ctx.cfg.options.get("expect")
    if expect is not None:
        checks.append(_check("verdict", verdict.markovian == (expect == "markovian"), expect))
    rows = [["markovian", int(verdict.markovian)], ["max_deviation", verdict.max_deviation],
            ["n_maps", verdict.n_maps], ["skipped", verdict.skipped]]
    return out, checks, ["quantity", "value"], rows


def _run_game(ctx, threads):
    tr = three_step_game(ctx.rho_s, ctx.controls[0], ctx.spec, ctx.rho_e, ctx.cfg.step_time)
    out = {"rho2": encode_matrix(tr.rho2), "rho3": encode_matrix(tr.rho3), "bob": tr.bob,
           "f": tr.f, "fidelity_12": tr.fidelity_12, "fidelity_13": tr.fidelity_13,
           "fidelity_formula": tr.fidelity_formula}
    checks = []
    rows = [["fidelity_12", tr.fidelity_12], ["fidelity_13", tr.fidelity_13]]
    if tr.fidelity_formula is not None:
        gap = abs(tr.fidelity_12 - tr.fidelity_formula)
        checks.append(_check("dephasing_formula", gap < 1e-10, gap))
        rows.append(["fidelity_formula", tr.fidelity_formula])
    if ctx.cfg.d == 2:
        rec = tr.fidelity_after(PAULI_X)
        out["recovery_fidelity"] = rec
        rows.append(["recovery_fidelity", rec])
        if ctx.cfg.options.get("expect_recovery"):
            checks.append(_check("not_gate_recovery", abs(rec - 1.0) < 1e-10, rec))
    return out, checks, ["quantity", "value"], rows


def _run_mutualinfo(ctx, threads):
    opts = ctx.cfg.options
    rho2p = ctx.builder.state(opts["rho2_prime"], ctx.cfg.d) if "rho2_prime" in opts else None
    modes = opts.get("modes", ["quantum", "classical-strategy", "markovian-reset"])
    vals = {}
    for mode in modes:
        res = mutual_information_experiment(ctx.spec, ctx.rho_e, ctx.rho_s, rho2p, mode=mode,
                                             basis=ctx.basis, t=ctx.cfg.step_time)
        vals[mode] = res.I
    checks = []
    if "quantum" in vals and "classical-strategy" in vals:
        gap = vals["quantum"] - vals["classical-strategy"]
        checks.append(_check("quantum_exceeds_classical", gap >= -1e-9, gap))
        checks.append(_check("classical_nonnegative", vals["classical-strategy"] >= -1e-10,
                             vals["classical-strategy"]))
    if "markovian-reset" in vals:
        checks.append(_check("reset_vanishes", vals["markovian-reset"] < 1e-10,
                             vals["markovian-reset"]))
    out = {"I_bits": vals}
    return out, checks, ["mode", "I_bits"], [[m, v] for m, v in vals.items()]


def _run_decouple(ctx, threads):
    spec, t = ctx.spec, ctx.cfg.step_time
    ch = run_decoupling_sequence(spec, ctx.rho_e, t)
    dec = decompose_channel(ch.conjugated(spec.s_basis))
    closed = decoupling_scaling_parameters(spec, ctx.rho_e, t)
    multi = multistep_scaling_parameters(spec, ControlCoefficientTensor.shift_sequence(spec.d),
                                         ctx.rho_e, t)
    out = {
        "max_ell_simulated": dec.max_ell(),
        "max_ell_closed_form": max_finite(closed),
        "max_ell_multistep": max_finite(multi),
        "decomposition": dec.to_json(),
    }
    checks = [_check(f"{k}_vanishes", abs(out[k]) < 1e-10, out[k])
              for k in ("max_ell_simulated", "max_ell_closed_form", "max_ell_multistep")]
    rows = [[mu, nu, dec.ell[(mu, nu)], closed[(mu, nu)], dec.phi[(mu, nu)]]
            for mu, nu in sorted(dec.ell)]
    return out, checks, ["mu", "mu_prime", "ell_simulated", "ell_closed_form", "phi"], rows


def _run_sweep(ctx, threads):
    opts = ctx.cfg.options
    ts = np.linspace(parse_time(opts.get("t_min", 0.0)), parse_time(opts.get("t_max", "pi")),
                     int(opts.get("points", 64)))
    spec = ctx.spec
    pairs = list(itertools.combinations(range(spec.d), 2))
    ell = {p: [] for p in pairs}
    phi = {p: [] for p in pairs}
    worst = 0.0
    for t in ts:
        e = conditional_scaling_parameters(spec, ctx.rho_e, t)
        f = conditional_phase_parameters(spec, ctx.rho_e, t)
        proc = DilatedProcess.from_spectral(spec, np.eye(spec.d) / spec.d, ctx.rho_e, 2, t)
        dec = decompose_channel(conditional_map(proc, basis=ctx.basis).channel.conjugated(spec.s_basis))
        for p in pairs:
            ell[p].append(e[p])
            phi[p].append(f[p])
            # large ell means a near-zero shrink factor, where -ln loses relative accuracy
            if math.isfinite(e[p]) and math.isfinite(dec.ell[p]) and e[p] < 10:
                worst = max(worst, abs(e[p] - dec.ell[p]))
    header = ["t"] + [f"ell_{a}_{b}" for a, b in pairs] + [f"phi_{a}_{b}" for a, b in pairs]
    rows = [[t] + [ell[p][i] for p in pairs] + [phi[p][i] for p in pairs] for i, t in enumerate(ts)]
    out = {"t": ts.tolist(), "ell": {f"{a},{b}": ell[(a, b)] for a, b in pairs},
           "phi": {f"{a},{b}": phi[(a, b)] for a, b in pairs}, "max_route_gap": worst}
    return out, [_check("formula_matches_decomposition", worst < 1e-8, worst)], header, rows


RUNNERS = {
    "tomography": _run_tomography,
    "reconstruct": _run_reconstruct,
    "markov-test": _run_markov,
    "game": _run_game,
    "mutualinfo": _run_mutualinfo,
    "decouple": _run_decouple,
    "scaling-sweep": _run_sweep,
}


def run_experiment(cfg: ExperimentConfig, deterministic: bool = True, threads: int = 1) -> Report:
    """Run the configured scenario and assemble its report."""
    start = time.perf_counter()
    ctx = _Context(cfg)
    outputs, checks, header, rows = RUNNERS[cfg.scenario](ctx, threads)
    elapsed = time.perf_counter() - start
    doc = {
        "qtraj_version": __version__,
        "scenario": cfg.scenario,
        # sorted so JSON and TOML spellings of one config give identical reports
        "config": json.loads(json.dumps(cfg.document, sort_keys=True)),
        "config_sha256": fingerprint(cfg.document),
        "outputs": outputs,
        "assertions": checks,
        "passed": all(c["passed"] for c in checks),
        "timing": None if deterministic else {"wall_seconds": elapsed},
    }
    return Report(_clean(doc), header, rows)


def _csv_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def emit_report(report: Report, fmt: str = "json", path=None) -> str:
    """Serialise ``report`` and write it to ``path`` (or return it only).

    JSON keeps full double precision; CSV uses 17 significant digits and LF
    line endings.
    """
    if fmt == "json":
        text = json.dumps(report.document, indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(report.csv_header)
        for row in report.csv_rows:
            w.writerow([_csv_cell(x) for x in row])
        text = buf.getvalue()
    else:
        raise ValueError("format must be json or csv")
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def canonical_config_path(scenario: str):
    """Shipped example config for ``scenario``."""
    return resources.files("qtraj") / "configs" / f"{scenario}.json"


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtraj", description="Run a quantum trajectory experiment.")
    parser.add_argument("--version", action="version", version=f"qtraj {__version__}")
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--config", help="JSON or TOML config (default: shipped example)")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--assert", dest="check", action="store_true",
                       help="exit with status 1 if any verdict fails")
        p.add_argument("--deterministic", action="store_true",
                       help="omit timing so identical inputs give identical bytes")
        p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            with resources.as_file(canonical_config_path(args.scenario)) as path:
                cfg = load_config(path)
        if cfg.scenario != args.scenario:
            raise ConfigError([("/scenario", f"config is for {cfg.scenario!r}, not {args.scenario!r}")])
        report = run_experiment(cfg, deterministic=args.deterministic, threads=max(1, args.threads))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except QTrajError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    text = emit_report(report, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.check and not report.passed:
        failed = [a["name"] for a in report.document["assertions"] if not a["passed"]]
        print("assertion failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
