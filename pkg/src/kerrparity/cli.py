"""Command-line interface.

Exit status: 0 on success, 1 for usage errors (bad arguments, unreadable or
invalid config), 2 for runtime or validation failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from .analytics import dephasing_rate_numeric, dephasing_rates, pointer_phase, steady_state
from .ensemble import ConfigError, RecordFormatError, RunConfig, load_ensemble, run_ensemble
from .entanglement import concurrence_curve
from .measurement import fidelity_curve
from .model import PRESETS, ModelError, ModelSpec, build_two_qubit_model, qubit_blocks
from .operators import HilbertLayout, OperatorMatrix, fock_destroy


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="JSON run/model configuration")
    p.add_argument("--seed", type=int, metavar="N", default=d, help="master seed override")
    p.add_argument("--threads", type=int, metavar="N", default=d, help="worker threads")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kerrparity", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        return p

    add("run", "run a trajectory ensemble from --config")

    for name, what in (("fidelity", "measurement fidelity"), ("concurrence", "conditioned concurrence")):
        p = add(name, f"{what} table from stored records")
        p.add_argument("ensemble_dir", help="directory written by 'run'")
        p.add_argument("--tau-step", type=float, default=None, help="tau grid spacing (default: checkpoints)")

    def model_args(p):
        p.add_argument("--preset", choices=sorted(PRESETS), default=None)
        p.add_argument("--eps-p", type=float, default=None, help="two-photon drive (units of kappa)")
        p.add_argument("--kerr", type=float, default=None, help="Kerr nonlinearity K")
        p.add_argument("--chi", type=float, default=None, help="dispersive shift per qubit")
        p.add_argument("--kappa", type=float, default=None)

    p = add("steady-state", "closed-form bifurcation amplitude and phase")
    model_args(p)
    p = add("rates", "closed-form dephasing rates, optionally with the numeric oracle")
    model_args(p)
    p.add_argument("--numeric", action="store_true", help="also evaluate the even-subspace rate numerically")
    p.add_argument("--fock-dim", type=int, default=16)
    p.add_argument("--horizon", type=float, default=60.0)
    p = add("four-qubit", "four-qubit block analysis and sideband sweep")
    model_args(p)
    p.add_argument("--ratios", type=float, nargs="+", default=[2.0, 4.0, 8.0, 12.0, 20.0],
                   help="chi/kappa_f values for the sideband sweep")
    p.add_argument("--tau", type=float, default=5.0, help="measurement time for the error probability")
    add("validate", "fast invariant suite on small instances")
    return parser


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")


def _model_from_args(args, default: str = "text-params") -> ModelSpec:
    base = PRESETS[args.preset or default]
    if args.config:
        cfg = _load_json(args.config)
        try:
            base = RunConfig.from_dict(cfg).model if "model" in cfg or "preset" in cfg else ModelSpec.from_dict(cfg)
        except (ConfigError, ModelError, TypeError) as exc:
            raise UsageError(str(exc))
    changes = {
        k: v for k, v in (("eps_p", args.eps_p), ("K", args.kerr), ("chi", args.chi), ("kappa", args.kappa))
        if v is not None
    }
    try:
        return base.with_(**changes)
    except ModelError as exc:
        raise UsageError(str(exc))


def _emit(table, out: str | None, name: str) -> None:
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        path = Path(out) / f"{name}.csv"
        table.to_csv(path)
        print(f"wrote {path}")
    else:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "t.csv"
            table.to_csv(path)
            sys.stdout.write(path.read_text())


def cmd_run(args) -> int:
    if not args.config:
        raise UsageError("run needs --config PATH")
    data = _load_json(args.config)
    try:
        cfg = RunConfig.from_dict(data)
        changes = {}
        if args.seed is not None:
            changes["master_seed"] = args.seed
        if args.threads is not None:
            changes["threads"] = args.threads
        if args.out is not None:
            changes["output_dir"] = args.out
        cfg = cfg.with_(**changes)
    except (ConfigError, ModelError) as exc:
        raise UsageError(str(exc))
    if cfg.output_dir is None:
        raise UsageError("run needs an output directory (--out DIR or output_dir in the config)")
    res = run_ensemble(cfg)
    print(f"{len(res.records)} trajectories ({len(res.valid)} valid) -> {cfg.output_dir}")
    print(f"config hash {res.config_hash}")
    if "fidelity" in res.aggregates:
        f = res.aggregates["fidelity"]
        print(f"F_m(tau={f.tau[-1]:g}) = {f.f_m[-1]:.4f}  [{f.ci_lo[-1]:.4f}, {f.ci_hi[-1]:.4f}]")
    for r in res.records:
        if not r.valid:
            print(f"trajectory {r.index} rejected: {r.diagnostic}", file=sys.stderr)
    return 0


def _tau_grid(result, step):
    times = result.valid[0].checkpoint_times
    if step is None:
        return times
    return np.arange(0.0, times[-1] + 1e-9, step)


def cmd_fidelity(args) -> int:
    res = load_ensemble(args.ensemble_dir)
    labeled = [r for r in res.valid if r.true_parity is not None]
    _emit(fidelity_curve(labeled, _tau_grid(res, args.tau_step)), args.out, "fidelity")
    return 0


def cmd_concurrence(args) -> int:
    res = load_ensemble(args.ensemble_dir)
    mixed = [r for r in res.valid if r.true_parity is None]
    if not mixed:
        raise UsageError("ensemble has no superposition-start records (use plus-plus-vacuum)")
    _emit(concurrence_curve(mixed, _tau_grid(res, args.tau_step)), args.out, "concurrence")
    return 0


def cmd_steady_state(args) -> int:
    spec = _model_from_args(args)
    try:
        pred = steady_state(spec)
    except ModelError as exc:
        raise UsageError(str(exc))
    print(f"|alpha_o|^2      = {pred.photon_number:.6g}")
    print(f"|alpha_o|        = {pred.alpha_mag:.6g}")
    print(f"theta_o          = {pred.theta_o:.6g} rad")
    print(f"lambda_+         = {pred.lambda_plus:.6g}")
    print(f"lambda_-         = {pred.lambda_minus:.6g}")
    print(f"1/lambda_+       = {pred.bifurcation_timescale:.6g}")
    print(f"pointer phase    = {pointer_phase(spec):.6g} rad")
    return 0


def cmd_rates(args) -> int:
    spec = _model_from_args(args)
    r = dephasing_rates(spec)
    for name in ("squeeze_r", "pointer_overlap", "gamma_e", "gamma_e_coarse", "gamma_o_naive",
                 "kappa_eff", "gamma_o_eff", "gamma_o_int"):
        print(f"{name:18s} = {getattr(r, name):.6g}")
    if args.numeric:
        N = args.fock_dim
        s2 = spec.with_(qubit_count=2, fock_dim_resonator=N)
        blocks = qubit_blocks(build_two_qubit_model(s2))
        lay = HilbertLayout(0, (N,))
        fit = dephasing_rate_numeric(
            OperatorMatrix(lay, blocks[0]), OperatorMatrix(lay, blocks[3]),
            [(spec.kappa, OperatorMatrix(lay, fock_destroy(N)))], args.horizon,
        )
        print(f"{'gamma_e_numeric':18s} = {fit.rate:.6g}  (fit residual {fit.residual:.2g})")
    return 0


def cmd_four_qubit(args) -> int:
    from .four_qubit import build_parity_blocks, sideband_dephasing_estimate, sideband_sweep

    spec = _model_from_args(args, default="four-qubit")
    try:
        blocks = build_parity_blocks(spec, with_hamiltonians=False)
    except ModelError as exc:
        raise UsageError(str(exc))
    for b in blocks.blocks:
        print(f"shift {b.label:>6s}  degeneracy {b.degeneracy}  {b.parity}")
    est = sideband_dephasing_estimate(spec)
    p_num, p_cf = est.error_probability(args.tau)
    print(f"sideband dephasing {est.rate_numeric:.4g} (closed form {est.rate_closed_form:.4g})")
    print(f"error probability over tau={args.tau:g}: {p_num:.4%} (closed form {p_cf:.4%})")
    sweep = sideband_sweep(spec, args.ratios)
    print(f"sweep R^2 against 1/(1+(8chi/kappa_f)^2): {sweep.lorentzian_r2():.4f}")
    _emit(sweep, args.out, "sideband_sweep")
    return 0


def cmd_validate(args) -> int:
    from .validation import run_validation

    results = run_validation()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return 0 if all(ok for _, ok, _ in results) else 2


COMMANDS = {
    "run": cmd_run,
    "fidelity": cmd_fidelity,
    "concurrence": cmd_concurrence,
    "steady-state": cmd_steady_state,
    "rates": cmd_rates,
    "four-qubit": cmd_four_qubit,
    "validate": cmd_validate,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("kerrparity: error: a command is required", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kerrparity {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (RecordFormatError, FileNotFoundError) as exc:
        print(f"kerrparity {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"kerrparity {args.command}: failed: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
