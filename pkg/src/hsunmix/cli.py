"""Command-line surface: simulate, unmix, train-unroll, eval, bench.

Exit codes: 0 success, 2 validation error (bad flags, config or file
contents), 3 solver finished without reaching its tolerance (results
are still written).  Every run is deterministic given flags, config
and seed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io as hio
from .classic import FclsOptions, NmfOptions, fcls_batch, nmf_unmix
from .core import AbundanceMatrix, EndmemberMatrix, HyperCube, project_columns, validate
from .io import ConfigError, CubeFormatError, derive_seed, load_config, parse_denoiser
from .khype import KernelSpec, khype_batch
from .metrics import evaluate
from .mixmodels import gen_scene
from .pnp import PnpOptions, admm_l1_oracle, pnp_unmix
from .unroll import init_params_from_model, train_unroll, unroll_forward, TrainConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3


class CliError(Exception):
    """Validation failure reported with exit code 2."""


def _fcls_opts(cfg) -> FclsOptions:
    return FclsOptions(
        rho=cfg.solver.rho,
        max_iters=cfg.solver.max_iters,
        primal_tol=cfg.solver.primal_tol,
        dual_tol=cfg.solver.dual_tol,
    )


def _kernel_spec(cfg) -> KernelSpec:
    return KernelSpec(
        kind=cfg.solver.kernel,
        bandwidth=cfg.solver.bandwidth if cfg.solver.bandwidth > 0 else None,
        degree=cfg.solver.degree,
        offset=cfg.solver.offset,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.scene
    n = sc.height * sc.width
    em, abund, cube = gen_scene(
        R=sc.endmembers,
        L=sc.bands,
        N=n,
        model_kind=sc.model,
        seed=derive_seed(sc.seed, "mixmodels"),
        snr_db=sc.snr_db,
        shape=(sc.height, sc.width),
        min_sad_deg=sc.min_sad_deg,
    )
    truth = Path(args.truth)
    truth.mkdir(parents=True, exist_ok=True)
    hio.write_cube(cube, args.out)
    hio.write_cube(cube, truth / "cube.umxc")
    hio.write_endmembers(em, truth / "endmembers.csv")
    hio.write_abundance_cube(abund, sc.height, sc.width, truth / "abundances.umxc")
    (truth / "scene.json").write_text(
        json.dumps(
            {
                "endmembers": sc.endmembers,
                "bands": sc.bands,
                "height": sc.height,
                "width": sc.width,
                "model": sc.model,
                "seed": sc.seed,
                "snr_db": sc.snr_db if math.isfinite(sc.snr_db) else "inf",
            },
            sort_keys=True,
        )
        + "\n"
    )
    if cfg.output.pgm:
        hio.write_abundance_pgms(abund, sc.height, sc.width, truth, prefix="true_plane")
    print(f"wrote cube to {args.out} and ground truth to {truth}")
    return EXIT_OK


def _load_endmembers_arg(args, required: bool) -> EndmemberMatrix | None:
    if args.method == "nmf":
        if args.endmembers:
            raise CliError("--endmembers is forbidden with --method nmf (blind estimation)")
        return None
    if not args.endmembers:
        raise CliError(f"--endmembers is required with --method {args.method}")
    return hio.read_endmembers(args.endmembers)


def cmd_unmix(args) -> int:
    cfg = load_config(args.config)
    cube = hio.read_cube(args.cube)
    em = _load_endmembers_arg(args, required=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    converged = True
    info: dict = {"method": args.method}

    if args.method == "fcls":
        A, conv, iters = fcls_batch(em, cube, _fcls_opts(cfg), return_convergence=True)
        converged = bool(np.all(conv))
        info["max_iterations"] = int(np.max(iters))
        M_est = em
    elif args.method == "nmf":
        R = cfg.scene.endmembers
        opts = NmfOptions(
            volume_weight=cfg.solver.volume_weight,
            sparsity_weight=cfg.solver.sparsity_weight,
            max_iters=cfg.solver.nmf_max_iters,
            step_shrink=cfg.solver.step_shrink,
            rel_obj_tol=cfg.solver.rel_obj_tol,
        )
        M_est, A, report = nmf_unmix(cube, R, opts)
        converged = report.converged
        info["iterations"] = report.iterations
        info["final_objective"] = report.objective_trace[-1] if report.objective_trace else None
    elif args.method == "khype":
        A_cols, _, conv = khype_batch(
            em, cube.pixels(), _kernel_spec(cfg), mu=cfg.solver.mu,
            opts=_fcls_opts(cfg), return_convergence=True,
        )
        A = AbundanceMatrix(data=A_cols)
        converged = bool(np.all(conv))
        M_est = em
    elif args.method == "pnp":
        opts = PnpOptions(
            rho=cfg.solver.pnp_rho,
            max_iters=cfg.solver.pnp_max_iters,
            primal_tol=cfg.solver.pnp_primal_tol,
        )
        A, report = pnp_unmix(cube, em, parse_denoiser(cfg.denoiser), opts)
        converged = report.converged
        info["iterations"] = report.iterations
        M_est = em
    elif args.method == "unroll":
        uc = cfg.unroll
        if uc.params_file:
            params = hio.read_unroll_params(uc.params_file)
        else:
            params = init_params_from_model(em, uc.mu, uc.rho, uc.lam, uc.eta, uc.depth)
        Z = unroll_forward(params, cube.pixels(), project=False)
        A = AbundanceMatrix(data=project_columns(Z))
        M_est = em
        info["depth"] = params.depth
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown method {args.method!r}")

    bad = validate(A)
    if not bad.ok:
        raise CliError(f"solver returned invalid abundances: {bad.constraint} at {bad.index}")

    hio.write_endmembers(M_est, out / "endmembers.csv")
    hio.write_abundance_cube(A, cube.height, cube.width, out / "abundances.umxc")
    if cfg.output.pgm:
        hio.write_abundance_pgms(A, cube.height, cube.width, out)
    info["converged"] = converged
    (out / "report.json").write_text(json.dumps(info, sort_keys=True) + "\n")
    if not converged:
        print("warning: solver did not reach its tolerance; results written", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"wrote estimates to {out}")
    return EXIT_OK


def cmd_train_unroll(args) -> int:
    cfg = load_config(args.config)
    uc = cfg.unroll
    cube = hio.read_cube(args.train_cube)
    A_true, _, _ = hio.read_abundance_cube(args.train_abund)
    if not uc.endmembers:
        raise CliError("config key unroll.endmembers (CSV path) is required for training")
    em = hio.read_endmembers(uc.endmembers)
    params0 = init_params_from_model(em, uc.mu, uc.rho, uc.lam, uc.eta, uc.depth)
    tc = TrainConfig(
        learning_rate=uc.learning_rate,
        epochs=uc.epochs,
        batch_size=uc.batch_size,
        seed=derive_seed(uc.seed, "unroll"),
        validation_fraction=uc.validation_fraction,
    )
    params, report = train_unroll(cube.pixels(), A_true.data, tc, params0)
    hio.write_unroll_params(params, args.out)
    print(
        f"trained {params.depth} layers: loss {report.train_loss[0]:.3e} -> {report.train_loss[-1]:.3e}; "
        f"validation {report.val_loss[0]:.3e} -> {report.val_loss[-1]:.3e}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    est = Path(args.est)
    truth = Path(args.truth)
    M_est = hio.read_endmembers(est / "endmembers.csv", allow_invalid=True)
    A_est, _, _ = hio.read_abundance_cube(est / "abundances.umxc")
    M_true = hio.read_endmembers(truth / "endmembers.csv")
    A_true, _, _ = hio.read_abundance_cube(truth / "abundances.umxc")
    cube = hio.read_cube(truth / "cube.umxc")
    result = evaluate(M_est, A_est, M_true, A_true, cube)
    lines = [
        f"abundance_rmse = {result.abundance_rmse!r}",
        f"reconstruction_mse = {result.reconstruction_mse!r}",
        f"matching = {result.matching!r}",
    ]
    for i, sad in enumerate(result.endmember_sad_deg):
        lines.append(f"endmember_sad_deg[{i}] = {sad!r}")
    text = "\n".join(lines) + "\n"
    Path(args.report).write_text(text)
    Path(str(args.report) + ".json").write_text(
        json.dumps(
            {
                "abundance_rmse": result.abundance_rmse,
                "endmember_sad_deg": list(result.endmember_sad_deg),
                "reconstruction_mse": result.reconstruction_mse,
                "matching": list(result.matching),
            },
            sort_keys=True,
        )
        + "\n"
    )
    print(text, end="")
    return EXIT_OK


def _bench_smoke(seed: int) -> list:
    """Small deterministic end-to-end pass over every solver family."""
    from .metrics import mse_loss
    from .pnp import DenoiserSpec

    lines = []
    s = derive_seed(seed, "bench")

    em, abund, cube = gen_scene(R=3, L=30, N=64, model_kind="lmm", seed=s, shape=(8, 8))
    A = fcls_batch(em, cube)
    res = evaluate(em, A, em, abund, cube)
    lines.append(f"fcls_lmm_abundance_rmse = {res.abundance_rmse!r}")

    em_b, abund_b, cube_b = gen_scene(R=3, L=30, N=64, model_kind="bilinear", seed=s + 1, shape=(8, 8))
    A_f = fcls_batch(em_b, cube_b)
    mse_f = mse_loss(cube_b.pixels(), em_b.data @ A_f.data)
    A_k, duals, _ = khype_batch(em_b, cube_b.pixels(), return_convergence=True)
    from .khype import build_band_kernel

    K = build_band_kernel(em_b)
    mse_k = mse_loss(cube_b.pixels(), em_b.data @ A_k + K @ duals)
    lines.append(f"bilinear_fcls_recon_mse = {mse_f!r}")
    lines.append(f"bilinear_khype_recon_mse = {mse_k!r}")

    A_pnp, _ = pnp_unmix(
        cube, em, DenoiserSpec(kind="soft_threshold", lam=0.01),
        PnpOptions(rho=1.0, max_iters=30, primal_tol=0.0),
    )
    A_l1 = admm_l1_oracle(cube, em, lam=0.01, rho=1.0, iters=30)
    gap = float(np.linalg.norm(A_pnp.data - A_l1.data))
    lines.append(f"pnp_l1_frobenius_gap = {gap!r}")

    params = init_params_from_model(em, mu=0.1, rho=1.0, lam=0.01, eta=1.0, K=20)
    y = cube.pixels()[:, 0]
    z = unroll_forward(params, y, project=False)
    z_ref, _ = _reference_admm_recursion(params, y)
    lines.append(f"unroll_fidelity_max_abs = {float(np.max(np.abs(z - z_ref)))!r}")

    _, _, report = nmf_unmix(cube, 3, NmfOptions(max_iters=40))
    mono = all(b <= a + 1e-12 for a, b in zip(report.objective_trace, report.objective_trace[1:]))
    lines.append(f"nmf_trace_monotone = {mono!r}")
    lines.append(f"nmf_final_objective = {report.objective_trace[-1]!r}")
    return lines


def _reference_admm_recursion(params, y):
    """Direct sparse-ADMM recursion used as the unrolling reference."""
    R = params.layers[0].W.shape[0]
    z = np.zeros(R)
    v = np.zeros(R)
    a = np.zeros(R)
    for lay in params.layers:
        a = lay.W @ y + lay.B @ (z + v)
        x = a - v
        z = np.maximum(np.sign(x) * np.maximum(np.abs(x) - lay.theta, 0.0), 0.0)
        v = v - lay.eta * (a - z)
    return z, (a, v)


def cmd_bench(args) -> int:
    if args.suite != "smoke":
        raise CliError(f"unknown suite {args.suite!r} (available: smoke)")
    lines = _bench_smoke(args.seed)
    text = "\n".join(lines) + "\n"
    Path(args.report).write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsunmix", description="Hyperspectral unmixing toolbox")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic scene")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True, help="output cube path")
    sim.add_argument("--truth", required=True, help="directory for ground truth")
    sim.set_defaults(func=cmd_simulate)

    um = sub.add_parser("unmix", help="estimate abundances (and endmembers for nmf)")
    um.add_argument("--cube", required=True)
    um.add_argument("--method", required=True, choices=["fcls", "nmf", "khype", "pnp", "unroll"])
    um.add_argument("--endmembers", default=None, help="CSV of known endmembers")
    um.add_argument("--config", required=True)
    um.add_argument("--out", required=True, help="output directory")
    um.set_defaults(func=cmd_unmix)

    tr = sub.add_parser("train-unroll", help="train the unrolled estimator")
    tr.add_argument("--train-cube", required=True)
    tr.add_argument("--train-abund", required=True)
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True, help="output parameter file")
    tr.set_defaults(func=cmd_train_unroll)

    ev = sub.add_parser("eval", help="score an estimate against ground truth")
    ev.add_argument("--est", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=cmd_eval)

    be = sub.add_parser("bench", help="run a frozen end-to-end benchmark suite")
    be.add_argument("--suite", required=True)
    be.add_argument("--seed", type=int, default=1)
    be.add_argument("--report", required=True)
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, CubeFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
