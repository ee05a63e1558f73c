"""Command line driver.

Subcommands cover the full workflow:

    thermorom generate        simulate a snapshot dataset over a (P, S) grid
    thermorom train           train the autoencoder + latent dynamics + GP
    thermorom evaluate        predict every grid point, report errors/speed-up
    thermorom experiment-beta3  paired runs contrasting coefficient weights

Every command writes a run.json manifest into its output directory.  All
output files are deterministic given the same inputs and flags except the
"timings" section of run.json, which holds wall-clock measurements and is
the only part expected to differ between identical reruns.

Exit codes: 0 success, 2 invalid configuration or inputs, 3 training
diverged (non-finite loss), 4 evaluation encountered a blown-up prediction
(the report is still written).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from . import autoencoder as ae
from . import fom
from . import gp as gp_mod
from . import latent as lat
from . import rom
from . import storage
from . import trainer
from .errors import NonFiniteLoss, ThermoromError

__all__ = ["main", "cmd_generate", "cmd_train", "cmd_evaluate", "cmd_experiment_beta3"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_BLOWUP = 4


def _write_run_manifest(out_dir: str, command: str, parameters: dict,
                        outputs: list[str], timings: dict) -> None:
    storage.write_json_atomic(f"{out_dir}/run.json", {
        "command": command,
        "version": __version__,
        "parameters": parameters,
        "outputs": sorted(outputs),
        "timings": timings,
    })


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}: {exc}")
    if not vals:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return vals


def cmd_generate(args) -> int:
    config = fom.FomConfig(nx=args.nx, ny=args.ny, n_steps=args.n_steps,
                           t_end=args.t_end)
    grid = fom.default_parameter_grid(args.grid_p, args.grid_s)
    wall = []
    tic = time.perf_counter()
    dataset = fom.generate_dataset(config, grid, wall_times=wall)
    total = time.perf_counter() - tic
    fom.save_dataset(dataset, args.out)
    # The solver is deterministic; the seed is recorded so downstream runs
    # can reference one value for the whole pipeline.
    _write_run_manifest(
        args.out, "generate",
        {"out": args.out, "grid_p": args.grid_p, "grid_s": args.grid_s,
         "seed": args.seed, "config": fom._config_dict(config)},
        ["dataset.json", "dataset.bin"],
        {"total_seconds": total, "per_sample_seconds": wall,
         "mean_sample_seconds": float(np.mean(wall))})
    print(f"generated {dataset.n_samples} samples on a {config.nx}x{config.ny} "
          f"grid ({dataset.n_nodes} nodes, {fom.N_FRAMES} frames) "
          f"in {total:.2f} s ({np.mean(wall) * 1e3:.1f} ms/sample)")
    print(f"wrote {args.out}/dataset.json, {args.out}/dataset.bin")
    return EXIT_OK


def _save_checkpoint(directory: str, state: trainer.TrainState,
                     surrogate, dataset: fom.SnapshotTensor,
                     config: trainer.TrainConfig) -> None:
    meta = {
        "active": list(state.active),
        "events": [list(e) for e in state.events],
        "beta1": config.beta1, "beta2": config.beta2, "beta3": config.beta3,
        "lr": config.lr, "n_uq_samples": config.n_uq_samples,
    }
    norm = ae.fit_normalization(dataset.values)
    ae.save_model(directory, state.mlp, norm,
                  seed=config.seed, epoch=state.epoch, meta=meta)
    lat.write_coefficients(f"{directory}/xi.csv",
                           [dataset.parameters[i] for i in state.active],
                           state.xi)
    if surrogate is not None:
        gp_mod.save_surrogate(directory, surrogate)


def cmd_train(args) -> int:
    dataset = fom.load_dataset(args.data)
    config = trainer.TrainConfig(
        n_epochs=args.epochs, n_greedy=args.greedy_every, beta3=args.beta3,
        lr=args.lr, n_latent=args.latent_dim, seed=args.seed,
        n_uq_samples=args.n_uq_samples)

    os.makedirs(args.out, exist_ok=True)
    log_path = f"{args.out}/log.csv"
    log = open(log_path, "w", encoding="utf-8")
    log.write("epoch,reconstruction,dynamics,coefficient,total,n_active\n")

    def on_epoch(state: trainer.TrainState):
        e, total, l_rec, l_dyn, l_coef, b = state.history[-1]
        log.write(f"{e},{storage.fmt_float(l_rec)},{storage.fmt_float(l_dyn)},"
                  f"{storage.fmt_float(l_coef)},{storage.fmt_float(total)},{b}\n")
        if e % 5000 == 0 or e == config.n_epochs:
            print(f"epoch {e:6d}  total {total:.6e}  rec {l_rec:.3e}  "
                  f"dyn {l_dyn:.3e}  coef {l_coef:.3e}  active {b}")

    def on_event(state: trainer.TrainState, surrogate, picked):
        if picked is not None:
            mu = dataset.parameters[picked]
            print(f"epoch {state.epoch:6d}  added sample {picked} "
                  f"(P = {mu.power}, S = {mu.speed})")
        _save_checkpoint(f"{args.out}/checkpoints/epoch-{state.epoch:06d}",
                         state, surrogate, dataset, config)

    tic = time.perf_counter()
    try:
        result = trainer.run_training(dataset, config,
                                      on_epoch=on_epoch, on_event=on_event)
    finally:
        log.close()
    total = time.perf_counter() - tic

    _save_checkpoint(f"{args.out}/model", result.state, result.surrogate,
                     dataset, config)
    _write_run_manifest(
        args.out, "train",
        {"data": args.data, "out": args.out, "epochs": args.epochs,
         "greedy_every": args.greedy_every,
         "beta1": config.beta1, "beta2": config.beta2, "beta3": args.beta3,
         "lr": args.lr, "latent_dim": args.latent_dim,
         "hidden_sizes": list(config.hidden_sizes), "seed": args.seed,
         "n_uq_samples": args.n_uq_samples},
        ["log.csv", "model", "checkpoints"],
        {"total_seconds": total,
         "epochs_per_second": args.epochs / total if total > 0 else 0.0})
    if args.epochs == 0:
        print(f"wrote the initial checkpoint to {args.out}/model (no training)")
    else:
        print(f"trained {args.epochs} epochs in {total:.1f} s "
              f"({len(result.state.active)} active samples); wrote {args.out}/model")
    return EXIT_OK


def _load_model_dir(path: str):
    if os.path.exists(f"{path}/model.json"):
        d = path
    elif os.path.exists(f"{path}/model/model.json"):
        d = f"{path}/model"
    else:
        raise ThermoromError(f"no model checkpoint under {path}")
    mlp, norm, meta = ae.load_model(d)
    surrogate = gp_mod.load_surrogate(d)
    return mlp, norm, surrogate, meta


def _fom_seconds_per_sample(data_dir: str, dataset: fom.SnapshotTensor):
    """Per-sample full-order wall time for the speed-up ratio.

    Prefers the timing recorded when the dataset was generated; datasets
    written without a run manifest get one fresh solve timed instead.
    """
    try:
        manifest = storage.read_json(f"{data_dir}/run.json")
        recorded = float(manifest["timings"]["mean_sample_seconds"])
        if recorded > 0:
            return recorded, "recorded"
    except (OSError, KeyError, TypeError, ValueError):
        pass
    tic = time.perf_counter()
    fom.simulate(dataset.config, dataset.parameters[0])
    return time.perf_counter() - tic, "measured"


def cmd_evaluate(args) -> int:
    dataset = fom.load_dataset(args.data)
    mlp, norm, surrogate, meta = _load_model_dir(args.model)
    active = set(int(i) for i in meta.get("active", []))
    tau = np.linspace(0.0, 1.0, fom.N_FRAMES)

    rows = []
    rom_times = []
    worst = {"train": (0.0, None), "test": (0.0, None)}
    n_blown = 0
    for i, mu in enumerate(dataset.parameters):
        u0 = norm.apply(dataset.values[i, 0])
        pred = rom.predict(mlp, norm, surrogate, mu, u0, tau,
                           n_samples=args.n_samples, seed=args.seed)
        rom_times.append(pred.wall_time)
        blew = pred.mean_blew_up
        if blew or pred.mean_trajectory.shape[0] != fom.N_FRAMES:
            err = float("inf")
            n_blown += 1
        else:
            err = rom.max_relative_error(pred.mean_trajectory, dataset.values[i])
        kind = "train" if i in active else "test"
        if err > worst[kind][0] or worst[kind][1] is None:
            worst[kind] = (err, i)
        rows.append([i, mu.power, mu.speed, int(i in active), err, int(blew)])

    storage.write_csv_atomic(
        f"{args.out}/error_grid.csv",
        ["sample", "power", "speed", "is_train", "relative_error", "blew_up"],
        rows)

    fom_seconds, fom_source = _fom_seconds_per_sample(args.data, dataset)
    mean_rom = float(np.mean(rom_times))
    speedup = fom_seconds / mean_rom if mean_rom > 0 else float("inf")

    summary = {
        "worst_train_error": worst["train"][0],
        "worst_train_sample": worst["train"][1],
        "worst_test_error": worst["test"][0],
        "worst_test_sample": worst["test"][1],
        "n_blown": n_blown,
        "n_samples_evaluated": len(rows),
        "n_train": len(active),
    }
    storage.write_json_atomic(f"{args.out}/summary.json", summary)
    _write_run_manifest(
        args.out, "evaluate",
        {"data": args.data, "model": args.model, "out": args.out,
         "n_samples": args.n_samples, "seed": args.seed},
        ["error_grid.csv", "summary.json"],
        {"mean_rom_seconds": mean_rom, "fom_seconds_per_sample": fom_seconds,
         "fom_time_source": fom_source, "speedup": speedup,
         "per_sample_rom_seconds": rom_times})

    print(f"worst train error {worst['train'][0] * 100:.2f}% "
          f"(sample {worst['train'][1]}), worst test error "
          f"{worst['test'][0] * 100:.2f}% (sample {worst['test'][1]})")
    print(f"mean prediction time {mean_rom * 1e3:.3f} ms, full-order solve "
          f"{fom_seconds * 1e3:.1f} ms/sample ({fom_source}), "
          f"speed-up {speedup:.0f}x")
    if n_blown:
        print(f"{n_blown} prediction(s) blew up")
        return EXIT_BLOWUP
    return EXIT_OK


def cmd_experiment_beta3(args) -> int:
    probe = args.probe
    if len(probe) != 2:
        raise ThermoromError(f"--probe needs exactly P,S, got {probe}")
    report = {"betas": args.betas, "probe": probe, "arms": []}
    dataset = fom.load_dataset(args.data)
    probe_idx = None
    for i, mu in enumerate(dataset.parameters):
        if mu.power == probe[0] and mu.speed == probe[1]:
            probe_idx = i
            break
    if probe_idx is None:
        raise ThermoromError(
            f"probe point (P = {probe[0]}, S = {probe[1]}) is not on the dataset grid")

    tau = np.linspace(0.0, 1.0, fom.N_FRAMES)
    for b3 in args.betas:
        arm_dir = f"{args.out}/beta3-{b3:.0e}"
        print(f"=== beta3 = {b3} -> {arm_dir}")
        targs = argparse.Namespace(
            data=args.data, out=arm_dir, epochs=args.epochs,
            greedy_every=args.greedy_every, beta3=b3, lr=args.lr,
            latent_dim=args.latent_dim, seed=args.seed,
            n_uq_samples=args.n_uq_samples)
        code = cmd_train(targs)
        if code != EXIT_OK:
            return code
        eargs = argparse.Namespace(data=args.data, model=arm_dir,
                                   out=f"{arm_dir}/eval", n_samples=0,
                                   seed=args.seed)
        code = cmd_evaluate(eargs)
        if code not in (EXIT_OK, EXIT_BLOWUP):
            return code

        mlp, norm, surrogate, meta = _load_model_dir(arm_dir)
        u0 = norm.apply(dataset.values[probe_idx, 0])
        pred = rom.predict(mlp, norm, surrogate, dataset.parameters[probe_idx],
                           u0, tau,
                           n_samples=args.n_samples, seed=args.seed)
        rom.export_diagnostics(f"{arm_dir}/diagnostics", pred,
                               dataset.values[probe_idx], mlp, norm,
                               dataset.times)
        _, coeffs = lat.read_coefficients(f"{arm_dir}/model/xi.csv")
        summary = storage.read_json(f"{arm_dir}/eval/summary.json")
        report["arms"].append({
            "beta3": b3,
            "worst_train_error": summary["worst_train_error"],
            "worst_test_error": summary["worst_test_error"],
            "n_blown": summary["n_blown"],
            "mean_abs_coefficient": float(np.mean(np.abs(coeffs))),
            "probe_blew_up": bool(pred.any_blew_up),
        })

    if len(report["arms"]) >= 2:
        lo = min(report["arms"], key=lambda a: a["beta3"])
        hi = max(report["arms"], key=lambda a: a["beta3"])
        report["comparison"] = {
            "higher_beta3_has_smaller_coefficients":
                hi["mean_abs_coefficient"] < lo["mean_abs_coefficient"],
            "higher_beta3_has_better_worst_test_error":
                hi["worst_test_error"] < lo["worst_test_error"],
            "lower_beta3_unstable":
                lo["n_blown"] > 0 or lo["worst_test_error"] > 1.0,
        }
    storage.write_json_atomic(f"{args.out}/report.json", report)
    _write_run_manifest(args.out, "experiment-beta3",
                        {"data": args.data, "out": args.out,
                         "betas": args.betas, "probe": probe,
                         "epochs": args.epochs,
                         "greedy_every": args.greedy_every, "lr": args.lr,
                         "latent_dim": args.latent_dim, "seed": args.seed,
                         "n_samples": args.n_samples,
                         "n_uq_samples": args.n_uq_samples},
                        ["report.json"], {})
    print(f"wrote {args.out}/report.json")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermorom", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a snapshot dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--grid-p", type=_float_list, default=None,
                   help="comma-separated source powers [W]")
    g.add_argument("--grid-s", type=_float_list, default=None,
                   help="comma-separated travel speeds [m/s]")
    g.add_argument("--nx", type=int, default=32)
    g.add_argument("--ny", type=int, default=16)
    g.add_argument("--n-steps", type=int, default=2500)
    g.add_argument("--t-end", type=float, default=0.03125)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the reduced-order model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--beta3", type=float, default=10.0)
    t.add_argument("--epochs", type=int, default=50000)
    t.add_argument("--greedy-every", type=int, default=10000)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--latent-dim", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--n-uq-samples", type=int, default=20)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="predict every grid point and report")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--n-samples", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment-beta3",
                       help="paired runs contrasting coefficient weights")
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--betas", type=_float_list, default=[1e-3, 10.0])
    x.add_argument("--probe", type=_float_list, default=[140.0, 0.1],
                   help="P,S of the diagnostic probe point")
    x.add_argument("--epochs", type=int, default=50000)
    x.add_argument("--greedy-every", type=int, default=10000)
    x.add_argument("--lr", type=float, default=1e-4)
    x.add_argument("--latent-dim", type=int, default=5)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--n-samples", type=int, default=20)
    x.add_argument("--n-uq-samples", type=int, default=20)
    x.set_defaults(func=cmd_experiment_beta3)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ThermoromError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
