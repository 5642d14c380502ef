"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 bad arguments or input
files, 3 aborted synthesis or unstable loop.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .benchmark import SpringMassParams, build_spring_mass, exact_mu_bar, initial_controller
from .dk import DminConfig, KminConfig
from .exceptions import DimensionError, SynthesisAborted, UnstableLoopError
from .game import RarlConfig
from .hinf import PowerIterConfig, hinf_exact, hinf_oracle
from .lti import StateSpace, plant_from_dict, scaled_loop
from .pipeline import SynthesisConfig, default_out_dir, run_synthesis
from .sim import LinearSimulator, ScaledLoop, SystemSimulator

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3
BUILTIN = "builtin:spring-mass"


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _load_plant(source):
    if source == BUILTIN:
        return build_spring_mass(SpringMassParams())
    data = _read_json(source)
    if not isinstance(data, dict):
        raise UsageError(f"{source}: plant file must hold a JSON object")
    try:
        return plant_from_dict(data)
    except (ValueError, DimensionError) as exc:
        raise UsageError(f"{source}: {exc}") from exc


def _load_gain(path, shape):
    if path is None:
        return None
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get("K")
    try:
        K = np.asarray(data, dtype=float).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: gain must be a {shape[0]}x{shape[1]} array") from exc
    return K


def _synthesis_config(args) -> SynthesisConfig:
    try:
        return SynthesisConfig(
            n_rounds=args.rounds,
            seed=args.seed,
            kmin=KminConfig(
                t_iters=args.kmin_iters, n_win=args.window,
                delta_schedule=(args.delta0, args.delta), theta=args.theta, stall=args.stall,
            ),
            dmin=DminConfig(t_iters=args.dmin_iters, alpha=args.alpha, eps=args.eps, n_win=args.window),
            rarl=RarlConfig(),
            threads=args.threads,
            reference=not args.no_reference,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args) -> int:
    G = _load_plant(args.plant)
    cfg = _synthesis_config(args)
    K_init = _load_gain(args.gain, (G.mu, G.n))
    out = default_out_dir(args.out)
    try:
        summary, _ = run_synthesis(G, cfg, out, K_init=K_init)
    except SynthesisAborted as exc:
        print(f"synthesis aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as exc:
        # e.g. a plant that the LQR initialization cannot stabilize
        raise UsageError(str(exc)) from exc
    brief = {k: summary[k] for k in ("mu_bar_init", "mu_bar_model_free", "mu_bar_model_based", "ratio",
                                     "k_updates") if k in summary}
    print(json.dumps({"out_dir": str(out), **brief}))
    return EXIT_OK


def _static_or_plant(source):
    """A file holding A, B, C, D keys is a plain state-space system."""
    if source != BUILTIN:
        data = _read_json(source)
        if isinstance(data, dict) and {"B", "C", "D"} <= data.keys():
            try:
                A = np.asarray(data.get("A", []), dtype=float)
                B = np.atleast_2d(np.asarray(data["B"], dtype=float))
                Dff = np.atleast_2d(np.asarray(data["D"], dtype=float))
                C = np.atleast_2d(np.asarray(data["C"], dtype=float))
                if A.size == 0:
                    B = B.reshape(0, Dff.shape[1])
                    C = C.reshape(Dff.shape[0], 0)
                return StateSpace(A, B, C, Dff)
            except (ValueError, DimensionError) as exc:
                raise UsageError(f"{source}: {exc}") from exc
    return _load_plant(source)


def cmd_hinf(args) -> int:
    system = _static_or_plant(args.plant)
    try:
        cfg = PowerIterConfig(n_win=args.window, seed=args.seed, tol=args.tol, max_iters=args.max_iters)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if isinstance(system, StateSpace):
        op, exact_sys = SystemSimulator(system), system
    else:
        G = system
        K = _load_gain(args.gain, (G.mu, G.n))
        K = initial_controller(G) if K is None else K
        d = np.zeros(G.mv) if args.d is None else np.asarray(args.d, dtype=float)
        if d.size != G.mv:
            raise UsageError(f"--d needs {G.mv} entries")
        op, exact_sys = ScaledLoop(LinearSimulator(G, seed=args.seed), K, d), scaled_loop(G, K, d)
    try:
        est = hinf_oracle(op, cfg)
        result = {"estimate": est.value, "iterations": est.iterations, "converged": est.converged,
                  "window": est.n_win}
        if args.exact:
            exact = hinf_exact(exact_sys)
            result.update(exact=exact, relative_gap=(exact - est.value) / exact if exact else 0.0)
    except UnstableLoopError as exc:
        print(f"unstable loop: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps(result))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suites

    report = run_suites(fault=args.inject_fault, seed=args.seed)
    print(json.dumps(report, indent=1))
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfdk", description="Model-free DK-iteration for mu-synthesis.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="run model-free DK-iteration and write trace artifacts")
    s.add_argument("--plant", default=BUILTIN, help=f"{BUILTIN} or a plant JSON file")
    s.add_argument("--gain", help="JSON file with the initial gain (default: nominal LQR)")
    s.add_argument("--rounds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--window", type=int, default=100, help="power-iteration window length")
    s.add_argument("--delta0", type=float, default=0.1, help="level offset of the first K iteration")
    s.add_argument("--delta", type=float, default=5e-3, help="level offset of later K iterations")
    s.add_argument("--theta", type=float, default=0.0, help="level interpolation factor in [0, 1)")
    s.add_argument("--stall", type=float, default=1e-3, help="relative stall threshold of the K-step")
    s.add_argument("--kmin-iters", type=int, default=100)
    s.add_argument("--dmin-iters", type=int, default=10)
    s.add_argument("--alpha", type=float, default=0.2, help="D-step size")
    s.add_argument("--eps", type=float, default=0.05, help="finite-difference step")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--no-reference", action="store_true", help="skip the model-based reference run")
    s.add_argument("--out", help="output directory (MFDK_OUT_DIR overrides)")
    s.set_defaults(func=cmd_synth)

    h = sub.add_parser("hinf", help="estimate the H-infinity norm of a loop from rollouts")
    h.add_argument("--plant", default=BUILTIN, help="plant JSON, state-space JSON (A, B, C, D) or builtin")
    h.add_argument("--gain", help="JSON file with the state-feedback gain (default: nominal LQR)")
    h.add_argument("--d", type=_float_list, help="log-scaling, comma separated (default zeros)")
    h.add_argument("--window", type=int, default=100)
    h.add_argument("--tol", type=float, default=1e-6)
    h.add_argument("--max-iters", type=int, default=200)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--exact", action="store_true", help="also compute the model-based value")
    h.set_defaults(func=cmd_hinf)

    v = sub.add_parser("verify", help="run the cross-oracle invariant suites")
    v.add_argument("--inject-fault", type=float, default=0.0, metavar="REL",
                   help="inflate power-iteration results by this relative amount")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
