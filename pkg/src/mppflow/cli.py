"""Scenario-driven command line.

    mppflow run --config scenario.toml --out results/
    mppflow simulate --config scenario.toml --out results/
    mppflow mpp --config scenario.toml --out results/
    mppflow shoot --config scenario.toml --out results/
    mppflow om-eval --config scenario.toml path.csv
    mppflow epdiff-drift --out drift.json --n 256 --alpha 1.0 --T 1 --steps 200 --sin 1:0.5
    mppflow plot --out results/ [--config scenario.toml]

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence
(partial artifacts are written and flagged in the summary), 4 ellipticity
violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path as FsPath

import numpy as np

from . import artifacts, epdiff1d
from .errors import ConfigError, EllipticityViolation, MppFlowError, NonConvergence
from .mpp import deterministic_flow, mpp_flow
from .om import om_integral, path_from_csv
from .scenario import Scenario, load_scenario
from .sde import SdeConfig, simulate_stratonovich

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_ELLIPTICITY = 4


def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg)


def _load(args) -> Scenario:
    sc = load_scenario(args.config)
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def _outdir(args) -> FsPath:
    out = FsPath(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _compute_deterministic(sc: Scenario):
    return deterministic_flow(sc.drift, sc.landmarks, sc.horizon, sc.solver_steps)


def _compute_forward(sc: Scenario):
    return mpp_flow(
        sc.noise,
        sc.drift,
        sc.landmarks,
        T=sc.horizon,
        N=sc.solver_steps,
        tolerance=sc.solver_tolerance,
        max_iter=sc.solver_max_iter,
    )


def _compute_bvp(sc: Scenario, det_paths):
    targets = np.stack([p.points[-1] for p in det_paths])
    return mpp_flow(
        sc.noise,
        sc.drift,
        sc.landmarks,
        targets=targets,
        T=sc.horizon,
        N=sc.solver_steps,
        tolerance=sc.solver_tolerance,
        max_iter=sc.solver_max_iter,
    )


def _bvp_summary(sc: Scenario, res):
    entries = []
    for i, p in enumerate(res.paths):
        entries.append(
            {
                "index": i,
                "v0": res.v0[i],
                "residual": float(res.residuals[i]),
                "om_integral": om_integral(sc.noise, sc.drift, p),
                "converged": bool(res.converged[i]),
                "status": res.statuses[i],
            }
        )
    return {
        "name": sc.name,
        "seed": sc.seed,
        "all_converged": bool(np.all(res.converged)),
        "landmarks": entries,
    }


def _ensemble_summary(sc: Scenario, det_paths, threads):
    cfg = SdeConfig(
        sc.noise,
        sc.drift,
        T=sc.horizon,
        steps=sc.ensemble_steps,
        seed=sc.seed,
        n_samples=sc.ensemble_samples,
    )
    ens = simulate_stratonovich(cfg, sc.landmarks, threads=threads)
    summary = {
        "name": sc.name,
        "seed": sc.seed,
        "n_samples": ens.n_samples,
        "times": ens.times,
        "mean_path": ens.mean_path(),
        "variance_envelope": ens.variance_envelope(),
    }
    if sc.tube_epsilon is not None:
        centers = np.stack(
            [
                np.column_stack(
                    [np.interp(ens.times, p.times, p.points[:, i]) for i in range(sc.dim)]
                )
                for p in det_paths
            ]
        )  # (P, K+1, d)
        dist = np.linalg.norm(
            ens.trajectories.transpose(0, 2, 1, 3) - centers[None], axis=-1
        )  # (S, P, K+1)
        inside = (dist.max(axis=2) < sc.tube_epsilon).mean(axis=0)
        summary["tube_epsilon"] = sc.tube_epsilon
        summary["tube_estimates"] = inside
    return summary


def _emit_figure(out, det_paths, mpp_paths, centers):
    artifacts.figure_svg(det_paths, mpp_paths, centers, out / "figure.svg")


def cmd_run(args):
    sc = _load(args)
    out = _outdir(args)
    outputs = sc.outputs
    want = lambda key, default=True: bool(outputs.get(key, default))
    exit_code = EXIT_OK

    det_paths = _compute_deterministic(sc)
    artifacts.write_trajectories_csv(det_paths, out / "deterministic.csv")

    mpp_paths_for_plot = []
    if want("forward"):
        fwd = _compute_forward(sc)
        artifacts.write_trajectories_csv(fwd.paths, out / "mpp_forward.csv")
        mpp_paths_for_plot.extend(fwd.paths)
    if want("bvp"):
        bvp = _compute_bvp(sc, det_paths)
        artifacts.write_trajectories_csv(bvp.paths, out / "mpp_bvp.csv")
        artifacts.write_json(_bvp_summary(sc, bvp), out / "bvp_summary.json")
        mpp_paths_for_plot.extend(bvp.paths)
        if not np.all(bvp.converged):
            exit_code = EXIT_NONCONVERGENCE
            _say(args, f"{int(np.sum(~bvp.converged))} landmark(s) did not converge")
    if want("ensemble", default=False) and sc.ensemble_samples > 0:
        artifacts.write_json(
            _ensemble_summary(sc, det_paths, args.threads), out / "ensemble_summary.json"
        )
    if want("plot"):
        _emit_figure(out, det_paths, mpp_paths_for_plot, sc.noise_centers)
    _say(args, f"scenario '{sc.name}' done -> {out}")
    return exit_code


def cmd_simulate(args):
    sc = _load(args)
    out = _outdir(args)
    if sc.ensemble_samples <= 0:
        raise ConfigError("ensemble.samples", "simulate needs ensemble.samples > 0")
    det_paths = _compute_deterministic(sc)
    artifacts.write_json(
        _ensemble_summary(sc, det_paths, args.threads), out / "ensemble_summary.json"
    )
    if bool(sc.outputs.get("raw_trajectories", False)):
        from .om import Path as _Path

        cfg = SdeConfig(
            sc.noise,
            sc.drift,
            T=sc.horizon,
            steps=sc.ensemble_steps,
            seed=sc.seed,
            n_samples=sc.ensemble_samples,
        )
        ens = simulate_stratonovich(cfg, sc.landmarks, threads=args.threads)
        S, _, P, _ = ens.trajectories.shape
        # sample column indexes the (sample, landmark) pair row-major
        flat = [
            _Path(ens.times, ens.trajectories[s, :, p, :])
            for s in range(S)
            for p in range(P)
        ]
        artifacts.write_trajectories_csv(flat, out / "ensemble_trajectories.csv")
    _say(args, f"ensemble summary -> {out / 'ensemble_summary.json'}")
    return EXIT_OK


def cmd_mpp(args):
    sc = _load(args)
    out = _outdir(args)
    fwd = _compute_forward(sc)
    artifacts.write_trajectories_csv(fwd.paths, out / "mpp_forward.csv")
    _say(args, f"forward paths -> {out / 'mpp_forward.csv'}")
    return EXIT_OK


def cmd_shoot(args):
    sc = _load(args)
    out = _outdir(args)
    det_paths = _compute_deterministic(sc)
    artifacts.write_trajectories_csv(det_paths, out / "deterministic.csv")
    bvp = _compute_bvp(sc, det_paths)
    artifacts.write_trajectories_csv(bvp.paths, out / "mpp_bvp.csv")
    artifacts.write_json(_bvp_summary(sc, bvp), out / "bvp_summary.json")
    if not np.all(bvp.converged):
        _say(args, f"{int(np.sum(~bvp.converged))} landmark(s) did not converge")
        return EXIT_NONCONVERGENCE
    _say(args, f"bvp paths -> {out / 'mpp_bvp.csv'}")
    return EXIT_OK


def cmd_om_eval(args):
    sc = _load(args)
    path = path_from_csv(args.path_csv)
    val = om_integral(sc.noise, sc.drift, path)
    print(f"{val:.12g}")
    return EXIT_OK


def _parse_modes(pairs):
    out = []
    for s in pairs or []:
        k, _, a = s.partition(":")
        out.append((int(k), float(a)))
    return out


def cmd_epdiff_drift(args):
    n = args.n
    x = 2.0 * np.pi * np.arange(n) / n
    u0 = np.zeros(n)
    for k, a in _parse_modes(args.sin):
        u0 += a * np.sin(k * x)
    for k, a in _parse_modes(args.cos):
        u0 += a * np.cos(k * x)
    if not np.any(u0):
        raise ConfigError("u0", "initial velocity is identically zero; pass --sin/--cos")
    sigmas = [c * np.ones(n) for c in (args.sigma_const or [])]
    state = epdiff1d.GridState(n, args.alpha, u0, sigma_fields=sigmas)
    snaps = (
        epdiff1d.optu_integrate(state, args.T, args.steps)
        if sigmas
        else epdiff1d.epdiff_integrate(state, args.T, args.steps)
    )
    if args.save_every > 1:
        snaps = epdiff1d.DriftSnapshots(
            snaps.alpha, snaps.n, snaps.times[:: args.save_every], snaps.u[:: args.save_every]
        )
    epdiff1d.write_drift_json(snaps, args.out)
    _say(args, f"drift snapshots -> {args.out}")
    return EXIT_OK


def cmd_plot(args):
    out = _outdir(args)
    det = out / "deterministic.csv"
    if not det.exists():
        raise ConfigError("out", f"no deterministic.csv under '{out}'")
    det_paths = artifacts.read_trajectories_csv(det)
    mpp_paths = []
    for name in ("mpp_forward.csv", "mpp_bvp.csv"):
        f = out / name
        if f.exists():
            mpp_paths.extend(artifacts.read_trajectories_csv(f))
    centers = np.zeros((0, max(det_paths[0].dim, 2)))
    if args.config:
        sc = load_scenario(args.config)
        centers = sc.noise_centers
    _emit_figure(out, det_paths, mpp_paths, centers)
    _say(args, f"figure -> {out / 'figure.svg'}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="mppflow",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="scenario TOML file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="full scenario run"))
    common(sub.add_parser("simulate", help="ensemble simulation only"))
    common(sub.add_parser("mpp", help="forward most-probable paths only"))
    common(sub.add_parser("shoot", help="boundary-value solves only"))

    p = sub.add_parser("om-eval", help="path functional value of a CSV path")
    common(p)
    p.add_argument("path_csv", help="CSV with header t,x1,...,xd")

    p = sub.add_parser("epdiff-drift", help="compute a time-sampled drift field")
    p.add_argument("--out", required=True, help="output drift JSON")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--save-every", type=int, default=1)
    p.add_argument("--sin", action="append", help="mode:amplitude, repeatable")
    p.add_argument("--cos", action="append", help="mode:amplitude, repeatable")
    p.add_argument(
        "--sigma-const", type=float, action="append", help="constant noise profile amplitude"
    )
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("plot", help="re-render figure.svg from CSV artifacts")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--quiet", action="store_true")
    return ap


_COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "mpp": cmd_mpp,
    "shoot": cmd_shoot,
    "om-eval": cmd_om_eval,
    "epdiff-drift": cmd_epdiff_drift,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EllipticityViolation as exc:
        print(f"ellipticity violation: {exc}", file=sys.stderr)
        return EXIT_ELLIPTICITY
    except NonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except MppFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
