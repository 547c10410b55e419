"""Command-line front end.

    rsgame {solve,verify,simulate,value,probe,report} --config model.json --out DIR

The config file holds the model (top level or under ``"model"``) and an
optional ``"run"`` section with defaults for the numeric options; command
line flags override it.

Exit status: 0 when every requested check passes, 1 on a configuration,
validation or check failure, 2 when the Riccati solution blows up.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .equilibrium import SampleSpec, classify_equilibrium, strategy_pair, verification_conditions
from .errors import ConfigError, ModelParameterError, ModelStructureError, RiccatiBlowUpError, RSGameError
from .game import appendix_identity_check, criterion_J_tilde, saddle_probe, u_tilde_estimate
from .model import is_mmm_stable, model_from_dict, parse_config_text, validate_model
from .report import Section, emit_report, fmt, write_csv
from .riccati import coefficients_to_csv, solve_coefficients
from .simulation import SimulationSpec, combined_density_check, mean_se, simulate

EXIT_OK, EXIT_FAIL, EXIT_BLOWUP = 0, 1, 2
COMMANDS = ("solve", "verify", "simulate", "value", "probe", "report")

_RUN_DEFAULTS = {
    "steps": 2000,
    "sim_steps": 200,
    "paths": 10000,
    "seed": 20240101,
    "tol": 1e-7,
    "hjb_tol": 1e-6,
    "workers": 1,
    "measure": "market",
    "probe_directions": 20,
    "probe_eps": [0.05, 0.1, 0.2],
    "terminal": None,
}


@dataclass
class RunConfig:
    command: str
    config_path: Path
    out_dir: Path
    model: object
    options: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["options"][name]
        except KeyError:
            raise AttributeError(name) from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors share the validation exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAIL, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rsgame", description="Risk-sensitive asset-management game toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="model JSON file")
        p.add_argument("--out", default=Path("out"), type=Path, help="output directory")
        p.add_argument("--steps", type=int, help="solver steps (>= 10)")
        p.add_argument("--sim-steps", type=int, help="Monte Carlo time steps")
        p.add_argument("--paths", type=int, help="Monte Carlo paths (0 skips the Monte Carlo stages)")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        p.add_argument("--tol", type=float, help="MMM / no-regret classification tolerance")
        p.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
        if name == "simulate":
            p.add_argument("--measure", choices=("physical", "market", "full"))
    return parser


def _check_options(opts: dict) -> None:
    ranges = {"steps": 10, "sim_steps": 1, "paths": 0, "workers": 1, "probe_directions": 1}
    for key, low in ranges.items():
        val = opts[key]
        if isinstance(val, bool) or not isinstance(val, int) or val < low:
            raise ConfigError(f"run.{key}: expected an integer >= {low}")
    if opts["paths"] == 1:
        raise ConfigError("run.paths: expected 0 (skip Monte Carlo stages) or at least 2")
    if isinstance(opts["seed"], bool) or not isinstance(opts["seed"], int) or not 0 <= opts["seed"] < 2**64:
        raise ConfigError("run.seed: expected an unsigned 64-bit integer")
    for key in ("tol", "hjb_tol"):
        if not isinstance(opts[key], (int, float)) or not opts[key] > 0:
            raise ConfigError(f"run.{key}: expected a positive number")
    if opts["measure"] not in ("physical", "market", "full"):
        raise ConfigError("run.measure: expected physical, market or full")


def load_run_config(args: argparse.Namespace) -> RunConfig:
    path = args.config
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    data = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    run = data.get("run", {})
    if not isinstance(run, dict):
        raise ConfigError("run: expected an object")
    unknown = sorted(set(run) - set(_RUN_DEFAULTS))
    if unknown:
        raise ConfigError("run: unknown keys " + ", ".join(unknown))
    model_data = data.get("model", {k: v for k, v in data.items() if k != "run"})
    model = model_from_dict(model_data)
    opts = {**_RUN_DEFAULTS, **run}
    for key in ("steps", "sim_steps", "paths", "seed", "tol", "workers", "measure"):
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    _check_options(opts)
    if opts["terminal"] is not None:
        term = opts["terminal"]
        try:
            QT = np.array(term["Q"], dtype=float).reshape(model.n, model.n)
            qT = np.array(term["q"], dtype=float).reshape(model.n)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"run.terminal: expected {{'Q': {model.n}x{model.n}, 'q': {model.n}}}") from exc
        if not (np.all(np.isfinite(QT)) and np.all(np.isfinite(qT))):
            raise ConfigError("run.terminal: non-finite entry")
        opts["terminal"] = (QT, qT)
    return RunConfig(args.command, path, args.out, model, opts)


def _sim_spec(cfg: RunConfig, **over) -> SimulationSpec:
    return SimulationSpec(
        n_paths=cfg.paths, n_steps=cfg.sim_steps, seed=cfg.seed, workers=cfg.workers,
        measure=over.pop("measure", "market"), **over,
    )


# ---------------------------------------------------------------------------
# stages; each returns a Section and may write CSV artifacts


def _stage_validate(cfg) -> Section:
    rep = validate_model(cfg.model)
    sec = Section("model", "pass" if rep.ok else "fail")
    for name, ok, value in rep.checks:
        sec.add(name, value).add(f"{name}.ok", bool(ok))
    stab = is_mmm_stable(cfg.model)
    sec.add("mmm_drift_max_real_eig", stab.max_real).add("mmm_drift_stable", stab.stable)
    return sec


def _stage_solve(cfg, out: Path):
    coeffs = solve_coefficients(cfg.model, cfg.steps, terminal=cfg.terminal)
    coefficients_to_csv(coeffs, out / "coefficients.csv")
    sec = Section("coefficients", "pass")
    sec.add("steps", cfg.steps).add("grid_points", len(coeffs.times))
    Q0, q0, k0 = coeffs.at(0.0)
    for i in range(cfg.model.n):
        for j in range(cfg.model.n):
            sec.add(f"Q0_{i}_{j}", float(Q0[i, j]))
    for i in range(cfg.model.n):
        sec.add(f"q0_{i}", float(q0[i]))
    sec.add("k0", k0)
    sym = max(float(np.abs(Q - Q.T).max()) for Q in coeffs.Q)
    sec.add("symmetry_residual_max", sym)
    return coeffs, sec


def _stage_verify(cfg, coeffs, out: Path) -> Section:
    diag = verification_conditions(coeffs, cfg.model, SampleSpec(seed=cfg.seed % 2**32), tol=cfg.hjb_tol)
    classify_equilibrium(coeffs, cfg.model, tol=cfg.tol, diag=diag)
    bt = diag.by_time
    write_csv(out / "residuals.csv", list(bt), [[fmt(float(bt[k][i])) for k in bt] for i in range(len(bt["t"]))])
    write_csv(
        out / "conditions.csv",
        ["condition", "margin", "tol", "passed"],
        [[c.name, fmt(c.margin), fmt(c.tol), fmt(c.passed)] for c in diag.conditions],
    )
    sec = Section("equilibrium", "pass" if diag.passed else "fail",
                  note=f"is_mmm={fmt(diag.is_mmm)} is_no_regret={fmt(diag.is_no_regret)}")
    sec.add("is_mmm", diag.is_mmm).add("is_no_regret", diag.is_no_regret)
    sec.add("mmm_residual_Q", diag.mmm_residual_Q).add("mmm_residual_q", diag.mmm_residual_q)
    sec.add("h_max", diag.h_max).add("h_sigma_max", diag.h_sigma_max)
    sec.add("short_positions", diag.short_positions).add("mmm_implies_h_sigma_zero", diag.implication_holds)
    sec.add("hjb_residual_max", diag.hjb_residual_max)
    for c in diag.conditions:
        sec.add(f"{c.name}.margin", c.margin).add(f"{c.name}.passed", c.passed)
    return sec


def _stage_simulate(cfg, coeffs, out: Path, measure: str) -> Section:
    pair = strategy_pair(coeffs, cfg.model)
    spec = _sim_spec(cfg, measure=measure)
    market = pair.market if measure != "physical" else None
    investor = pair.investor if measure != "physical" else None
    bundle = simulate(cfg.model, spec, market, investor, coeffs)
    n = cfg.model.n
    header = ["path"] + [f"XT_{i}" for i in range(n)] + ["VT", "logD_eta_xi", "logD_h"]
    rows = [
        [str(int(p)), *(fmt(float(v)) for v in x), fmt(float(np.exp(lv))), fmt(float(a)), fmt(float(b))]
        for p, x, lv, a, b in zip(bundle.path_index, bundle.XT, bundle.log_V,
                                  bundle.log_density_eta_xi, bundle.log_density_h)
    ]
    write_csv(out / "paths.csv", header, rows)
    sec = Section("simulation", "pass")
    sec.add("measure", measure).add("paths", bundle.n_paths).add("steps", cfg.sim_steps)
    sec.add("flagged", bundle.n_flagged)
    ok = ~bundle.flagged
    summary = []
    for i in range(n):
        summary.append((f"XT_{i}", mean_se(bundle.XT[ok, i])))
    summary.append(("VT", mean_se(np.exp(bundle.log_V[ok]))))
    summary.append(("D_eta_xi", mean_se(np.exp(bundle.log_density_eta_xi[ok]))))
    summary.append(("D_h", mean_se(np.exp(bundle.log_density_h[ok]))))
    for name, est in summary:
        sec.add(f"{name}.mean", est.mean).add(f"{name}.se", est.se)
    write_csv(out / "summary.csv", ["quantity", "mean", "se"],
              [[name, fmt(est.mean), fmt(est.se)] for name, est in summary])
    return sec


def _stage_density(cfg, coeffs) -> Section:
    rep = combined_density_check(cfg.model, _sim_spec(cfg), coeffs)
    sec = Section("density", "pass" if rep.passed else "fail")
    sec.add("combined_mean", rep.mean).add("combined_se", rep.se).add("flagged", rep.n_flagged)
    sec.add("heavy_tail_flag", rep.tail_warning)
    return sec


def _stage_value(cfg, coeffs, out: Path) -> Section:
    spec = _sim_spec(cfg)
    jt = criterion_J_tilde(cfg.model, spec, coeffs)
    ut = u_tilde_estimate(cfg.model, spec, coeffs)
    bc = ut.bound_check
    rows = [jt.csv_row(), ut.csv_row()]
    write_csv(out / "value.csv", ["quantity", "estimate", "se", "closed_form", "z"], rows)
    ok = jt.within(3.0) and ut.within(3.0) and (bc.passed or not bc.asserted)
    sec = Section("value", "pass" if ok else "fail")
    for rep in (jt, ut):
        sec.add(f"{rep.quantity}.estimate", rep.estimate).add(f"{rep.quantity}.se", rep.std_error)
        sec.add(f"{rep.quantity}.closed_form", rep.closed_form).add(f"{rep.quantity}.z", rep.z_score)
    sec.add("u_tilde.upper_bound", bc.upper).add("u_tilde.bound_margin", bc.margin)
    sec.add("u_tilde.bound_strict", bc.passed).add("u_tilde.bound_asserted", bc.asserted)
    for w in jt.warnings:
        sec.note = w
    return sec


def _stage_probe(cfg, coeffs, out: Path) -> Section:
    rep = saddle_probe(cfg.model, _sim_spec(cfg), coeffs, n_directions=cfg.probe_directions,
                       eps=tuple(cfg.probe_eps), direction_seed=cfg.seed % 2**32)
    write_csv(
        out / "probe.csv",
        ["side", "direction", "eps", "delta", "se", "violation"],
        [[r.side, str(r.direction), fmt(r.eps), fmt(r.delta), fmt(r.se), fmt(r.violation)] for r in rep.rows],
    )
    sec = Section("probe", "pass" if rep.passed else "fail")
    sec.add("base_J_tilde", rep.base.estimate).add("perturbations", len(rep.rows))
    sec.add("violations", rep.n_violations).add("continuity_constant", rep.continuity_constant)
    return sec


def _stage_identity(cfg, coeffs) -> Section:
    coarse = appendix_identity_check(cfg.model, _sim_spec(cfg, refine=2), coeffs)
    fine = appendix_identity_check(cfg.model, _sim_spec(cfg).with_(n_steps=2 * cfg.sim_steps), coeffs)
    sec = Section("identity", "info")
    sec.add("max_rel_discrepancy_coarse", coarse.max_rel_discrepancy)
    sec.add("max_rel_discrepancy_fine", fine.max_rel_discrepancy)
    exact = max(coarse.max_rel_discrepancy, fine.max_rel_discrepancy) <= 1e-12
    if exact:
        sec.status = "pass"
        sec.note = "identity exact to rounding at both resolutions"
    else:
        ratio = coarse.max_rel_discrepancy / fine.max_rel_discrepancy
        sec.add("refinement_ratio", ratio)
        sec.status = "pass" if 1.5 <= ratio <= 2.5 else "fail"
    return sec


# ---------------------------------------------------------------------------


def run(cfg: RunConfig) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    sections = [_stage_validate(cfg)]
    if sections[0].status != "pass":
        print(emit_report(sections, out), end="")
        return EXIT_FAIL
    try:
        coeffs, sec = _stage_solve(cfg, out)
        sections.append(sec)
    except RiccatiBlowUpError as exc:
        sections.append(Section("coefficients", "fail", note=str(exc)).add("blowup_time", exc.time))
        downstream = {"solve": [], "verify": ["equilibrium"], "simulate": ["simulation"],
                      "value": ["value"], "probe": ["probe"],
                      "report": ["equilibrium", "simulation", "density", "value", "probe", "identity"]}
        for name in downstream[cfg.command]:
            sections.append(Section(name, "aborted", note="no coefficient solution"))
        print(emit_report(sections, out), end="")
        return EXIT_BLOWUP

    cmd = cfg.command
    if cmd in ("verify", "report"):
        sections.append(_stage_verify(cfg, coeffs, out))
    monte_carlo = [
        ("simulation", ("simulate", "report"), lambda: _stage_simulate(cfg, coeffs, out, cfg.measure)),
        ("density", ("report",), lambda: _stage_density(cfg, coeffs)),
        ("value", ("value", "report"), lambda: _stage_value(cfg, coeffs, out)),
        ("probe", ("probe", "report"), lambda: _stage_probe(cfg, coeffs, out)),
        ("identity", ("report",), lambda: _stage_identity(cfg, coeffs)),
    ]
    for name, commands, stage in monte_carlo:
        if cmd not in commands:
            continue
        if cfg.paths == 0:
            sections.append(Section(name, "skipped", note="paths = 0"))
        else:
            sections.append(stage())
    print(emit_report(sections, out), end="")
    failed = any(s.status in ("fail", "aborted") for s in sections)
    return EXIT_FAIL if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        return run(cfg)
    except (ConfigError, ModelStructureError, ModelParameterError) as exc:
        print(f"rsgame: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except RSGameError as exc:
        print(f"rsgame: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
