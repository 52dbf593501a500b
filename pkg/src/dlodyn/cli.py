"""Command-line surface tying the pipeline together.

Subcommands generate synthetic datasets, train models, evaluate prediction
accuracy (with horizon and discretization sweeps), and benchmark runtime.
All artifacts are machine-parseable CSV/JSON; plotting happens downstream.

Exit codes: 2 configuration error, 3 data generation failure, 4 training
failure, 5 evaluation failure.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import datapipe, estimation, models, training
from .baselines import vprba_model
from .errors import DlodynError
from .integrators import IntegratorConfig, make_step
from .kinematics import kin_target
from .models import Model, ModelArch, load_model, rhs_fn, save_model

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAIN = 4
EXIT_EVAL = 5

DEFAULT_CONFIG = {
    "seed": 0,
    "out_dir": "runs/out",
    "dlo": {"length": 1.9, "radius": 0.03, "density": 120.0},
    "reference": {"n_prb": 10, "stiffness": 4.0, "damping": 0.06, "cubic": 12.0},
    "excitation": {
        "n_harmonics": 6,
        "freq_band_hz": [0.3, 3.0],
        "pos_amplitude": 0.12,
        "rot_amplitude": 0.25,
        "duration": 15.0,
        "n_test": 4,
        "test_amplitude_scales": [0.7, 0.9, 1.1, 1.25],
    },
    "trajectory": {"duration": 30.0, "noise_std": 0.0},
    "dataset": {"rollout_len": 250, "prefix_len": 25, "stride": 250},
    "arch": {
        "family": "prba",
        "n_prb": 3,
        "torque": "neural",
        "canonical_mlp": False,
        "freeze_kin": False,
        "kin_target_mode": "uniform",
        "node_width": 64,
    },
    "train": {
        "lr": 3e-3,
        "lr_schedule": "cosine",
        "epochs_phase1": 300,
        "epochs_phase2": 700,
        "weight_decay": 1e-4,
        "lam_kin": 1e-2,
        "lam_q": 1e-4,
        "lam_qd": 1e-5,
        "lam_int": 1e-4,
        "w_y": [1.0, 1.0, 1.0, 0.1, 0.1, 0.1],
        "batch": None,
        "clip_norm": 100.0,
    },
    "integrator": {
        "method": "implicit-rk",
        "stages": 4,
        "dt": 0.004,
        "newton_tol": 1e-10,
        "newton_max_iter": 20,
    },
    "mhe": {"horizon": 25, "solver": "gauss-newton", "max_iter": 40, "tol": 1e-12},
}


class ConfigError(DlodynError):
    pass


def _check_keys(cfg: dict, reference: dict, path: str = "") -> None:
    for key, value in cfg.items():
        here = f"{path}.{key}" if path else key
        if key not in reference:
            raise ConfigError(f"unknown configuration key {here!r}")
        if isinstance(reference[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key {here!r} must be an object")
            _check_keys(value, reference[key], here)


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None) -> dict:
    """Defaults, optionally updated from a JSON file; unknown keys rejected."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        _check_keys(user, DEFAULT_CONFIG)
        cfg = _merge(cfg, user)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def _integrator_from(cfg: dict) -> IntegratorConfig:
    return IntegratorConfig(**cfg["integrator"]).validate()


def _reference_from(cfg: dict) -> Model:
    dlo, ref = cfg["dlo"], cfg["reference"]
    return datapipe.reference_model(
        length=dlo["length"], n_prb=ref["n_prb"], radius=dlo["radius"],
        density=dlo["density"], stiffness=ref["stiffness"], damping=ref["damping"],
        cubic=ref["cubic"], integrator=_integrator_from(cfg),
    )


def _arch_from(cfg: dict) -> ModelArch:
    a = cfg["arch"]
    return ModelArch(
        family=a["family"], n_prb=a["n_prb"], torque=a["torque"],
        canonical_mlp=a["canonical_mlp"], freeze_kin=a["freeze_kin"],
        node_width=a["node_width"], radius=cfg["dlo"]["radius"],
        density=cfg["dlo"]["density"],
    ).validate()


def _train_config_from(cfg: dict) -> training.TrainConfig:
    t = cfg["train"]
    target = kin_target(cfg["dlo"]["length"], cfg["arch"]["n_prb"],
                        cfg["arch"]["kin_target_mode"])
    return training.TrainConfig(
        w_y=tuple(t["w_y"]), lam_kin=t["lam_kin"], lam_q=t["lam_q"],
        lam_qd=t["lam_qd"], lam_int=t["lam_int"],
        kin_target=tuple(float(v) for v in np.asarray(target)),
        rollout_len=cfg["dataset"]["rollout_len"], lr=t["lr"],
        lr_schedule=t["lr_schedule"], weight_decay=t["weight_decay"],
        epochs_phase1=t["epochs_phase1"], epochs_phase2=t["epochs_phase2"],
        batch=t["batch"], seed=cfg["seed"], clip_norm=t["clip_norm"],
        integrator=_integrator_from(cfg),
    )


def _mhe_config_from(cfg: dict) -> estimation.MheConfig:
    m = cfg["mhe"]
    return estimation.MheConfig(horizon=m["horizon"], solver=m["solver"],
                                max_iter=m["max_iter"], tol=m["tol"]).validate()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: dict) -> dict:
    """Write one training and several test trajectories (distinct excitation
    seeds and amplitudes) to the output directory."""
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ref = _reference_from(cfg)
    exc_cfg = cfg["excitation"]
    duration = cfg["trajectory"]["duration"]
    noise = cfg["trajectory"]["noise_std"]
    seed = cfg["seed"]

    files = {}

    def one(name, exc_seed, amp_scale):
        exc = datapipe.random_excitation(
            exc_seed, n_h=exc_cfg["n_harmonics"], duration=exc_cfg["duration"],
            freq_band=tuple(exc_cfg["freq_band_hz"]),
            pos_amplitude=exc_cfg["pos_amplitude"] * amp_scale,
            rot_amplitude=exc_cfg["rot_amplitude"] * amp_scale,
        )
        traj = datapipe.synth_generate(ref, exc, duration=duration,
                                       seed=exc_seed, noise_std=noise)
        csv_path = out / f"{name}.csv"
        datapipe.save_csv(csv_path, traj)
        exc.save(out / f"{name}_excitation.json")
        files[name] = str(csv_path)

    one("train", seed, 1.0)
    scales = exc_cfg["test_amplitude_scales"]
    for i in range(exc_cfg["n_test"]):
        one(f"test_{i + 1}", seed + 1 + i, scales[i % len(scales)])

    meta = {"files": files, "config": cfg}
    with open(out / "dataset_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    return meta


def _model_name(arch: ModelArch) -> str:
    if arch.family == "prba":
        return "vprba" if arch.freeze_kin else f"prba-{arch.torque}"
    return arch.family


def cmd_train(cfg: dict, resume_model=None, train_csv=None) -> dict:
    """Train the configured model on the training trajectory; writes the
    model file and a per-epoch history CSV."""
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path = Path(train_csv) if train_csv else out / "train.csv"
    traj = datapipe.load_csv(csv_path)
    ds_cfg = cfg["dataset"]
    dataset = datapipe.build_dataset(traj, ds_cfg["rollout_len"],
                                     prefix_len=ds_cfg["prefix_len"],
                                     stride=ds_cfg["stride"])
    arch = _arch_from(cfg)
    tcfg = _train_config_from(cfg)

    init_params, init_x0 = None, None
    if resume_model is not None:
        prior, prior_x0, _ = load_model(resume_model)
        if prior.arch != arch:
            raise ConfigError("resume model architecture differs from the config")
        init_params, init_x0 = prior.params, prior_x0

    if arch.freeze_kin and init_params is None:
        _, init_params = vprba_model(
            cfg["dlo"]["length"], arch.n_prb, cfg["arch"]["kin_target_mode"],
            radius=arch.radius, density=arch.density,
        )

    params, x0, history = training.train(dataset, tcfg, arch,
                                         init_model_params=init_params,
                                         init_x0=init_x0)
    model = Model(arch=arch, params=params, integrator=tcfg.integrator)
    name = _model_name(arch)
    model_path = out / f"model_{name}.json"
    save_model(model_path, model, x0=x0,
               config_echo={"train": cfg["train"], "dataset": cfg["dataset"],
                            "seed": cfg["seed"]})

    history_path = out / f"history_{name}.csv"
    rows = list(history.rows())
    mode = "a" if resume_model is not None and history_path.exists() else "w"
    with open(history_path, mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write(",".join(rows[0].keys()) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row.values()) + "\n")
    return {"model": str(model_path), "history": str(history_path),
            "final_loss": history.breakdowns[-1]._asdict()}


def evaluate_model(model: Model, x0_mhe, test_trajs, horizon_s: float,
                   mhe_cfg: estimation.MheConfig, prefix_len: int) -> dict:
    """Table-style metrics: per-rollout mean endpoint position/velocity error
    (cm, cm/s) with MHE-estimated initial states."""
    dt = model.integrator.dt
    n_steps = int(round(horizon_s / dt))
    pos_errors, vel_errors, rows = [], [], []
    all_p = []
    for t_idx, traj in enumerate(test_trajs):
        dataset = datapipe.build_dataset(traj, n_steps, prefix_len=prefix_len,
                                         stride=n_steps)
        all_p.append(traj.y[:, :3])
        for w_idx, window in enumerate(dataset.windows):
            mhe = estimation.mhe_estimate(model, window.prefix_u, window.prefix_y,
                                          mhe_cfg)
            y_hat = np.asarray(model.predict_outputs(mhe.state, window.u))
            err = y_hat - window.y[1:]
            pe = float(np.mean(np.linalg.norm(err[:, :3], axis=1))) * 100.0
            ve = float(np.mean(np.linalg.norm(err[:, 3:], axis=1))) * 100.0
            pos_errors.append(pe)
            vel_errors.append(ve)
            rows.append({"trajectory": t_idx, "window": w_idx,
                         "pos_err_cm": pe, "vel_err_cm_s": ve,
                         "mhe_residual": mhe.residual})
    p_all = np.concatenate(all_p, axis=0)
    motion_range = float(np.linalg.norm(p_all.max(axis=0) - p_all.min(axis=0)))
    sq = [r["pos_err_cm"] ** 2 for r in rows]
    return {
        "horizon_s": horizon_s,
        "pos_err_cm_mean": float(np.mean(pos_errors)),
        "pos_err_cm_std": float(np.std(pos_errors)),
        "vel_err_cm_s_mean": float(np.mean(vel_errors)),
        "vel_err_cm_s_std": float(np.std(vel_errors)),
        "pos_rmse_cm": float(np.sqrt(np.mean(sq))),
        "motion_range_cm": motion_range * 100.0,
        "n_rollouts": len(rows),
        "rollouts": rows,
    }


def cmd_eval(cfg: dict, model_path, horizons=None, sweep_nprb=None) -> dict:
    """Evaluate one-second-ahead (and longer) prediction accuracy on the test
    trajectories; optionally sweep the number of bodies."""
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    mhe_cfg = _mhe_config_from(cfg)
    prefix = cfg["dataset"]["prefix_len"]
    test_trajs = _load_test_trajs(cfg)

    horizons = horizons or [cfg["dataset"]["rollout_len"] * _integrator_from(cfg).dt]
    result = {"horizons": [], "model": str(model_path)}
    model, _, _ = load_model(model_path)
    for h in horizons:
        result["horizons"].append(
            evaluate_model(model, None, test_trajs, h, mhe_cfg, prefix)
        )

    if sweep_nprb:
        sweep_rows = []
        train_traj = datapipe.load_csv(Path(cfg["out_dir"]) / "train.csv")
        for n_prb in sweep_nprb:
            sweep_cfg = copy.deepcopy(cfg)
            sweep_cfg["arch"]["n_prb"] = int(n_prb)
            ds = datapipe.build_dataset(train_traj, cfg["dataset"]["rollout_len"],
                                        prefix_len=prefix,
                                        stride=cfg["dataset"]["stride"])
            arch = _arch_from(sweep_cfg)
            tcfg = _train_config_from(sweep_cfg)
            params, _, _ = training.train(ds, tcfg, arch)
            m = Model(arch=arch, params=params, integrator=tcfg.integrator)
            metrics = evaluate_model(m, None, test_trajs, horizons[0], mhe_cfg, prefix)
            sweep_rows.append({"n_prb": int(n_prb),
                               "pos_err_cm_mean": metrics["pos_err_cm_mean"],
                               "pos_rmse_cm": metrics["pos_rmse_cm"],
                               "vel_err_cm_s_mean": metrics["vel_err_cm_s_mean"]})
        result["sweep_nprb"] = sweep_rows
        with open(out / "sweep_nprb.csv", "w", encoding="utf-8") as fh:
            fh.write("n_prb,pos_err_cm_mean,pos_rmse_cm,vel_err_cm_s_mean\n")
            for row in sweep_rows:
                fh.write(f"{row['n_prb']},{row['pos_err_cm_mean']:.6g},"
                         f"{row['pos_rmse_cm']:.6g},{row['vel_err_cm_s_mean']:.6g}\n")

    metrics_path = out / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1)

    pred_path = out / "rollout_errors.csv"
    with open(pred_path, "w", encoding="utf-8") as fh:
        fh.write("horizon_s,trajectory,window,pos_err_cm,vel_err_cm_s,mhe_residual\n")
        for block in result["horizons"]:
            for row in block["rollouts"]:
                fh.write(f"{block['horizon_s']},{row['trajectory']},{row['window']},"
                         f"{row['pos_err_cm']:.9g},{row['vel_err_cm_s']:.9g},"
                         f"{row['mhe_residual']:.9g}\n")
    result["metrics_file"] = str(metrics_path)
    return result


def _load_test_trajs(cfg: dict):
    out = Path(cfg["out_dir"])
    meta_path = out / "dataset_meta.json"
    if meta_path.exists():
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        names = sorted(n for n in meta["files"] if n.startswith("test"))
        return [datapipe.load_csv(meta["files"][n]) for n in names]
    paths = sorted(out.glob("test_*.csv"))
    if not paths:
        raise ConfigError(f"no test trajectories found under {out}")
    return [datapipe.load_csv(p) for p in paths]


def cmd_bench(cfg: dict, model_path, n_calls: int = 10000) -> dict:
    """Median/p95 wall time of the decoder, the dynamics right-hand side and
    one implicit integration step, after jit warm-up."""
    import jax.numpy as jnp

    model, _, _ = load_model(model_path)
    rhs = rhs_fn(model.arch)
    import jax

    rhs_jit = jax.jit(lambda x, u, p: rhs(x, u, p))
    step_fn = make_step(rhs, model.integrator, ad=None)
    decode_jit = jax.jit(lambda x, u, p: models._shared_decode(x, u, p))

    rng = np.random.default_rng(cfg["seed"])
    x = jnp.asarray(0.01 * rng.standard_normal(model.arch.n_x))
    u = jnp.asarray(np.concatenate([[0, 0, 1, 0, 0, 0], np.zeros(12)]))

    def timeit(fn, *args):
        fn(*args)  # warm-up / compile
        samples = np.empty(n_calls)
        for i in range(n_calls):
            t0 = time.perf_counter()
            out = fn(*args)
            jax.block_until_ready(out)
            samples[i] = time.perf_counter() - t0
        return {"median_us": float(np.median(samples) * 1e6),
                "p95_us": float(np.percentile(samples, 95) * 1e6)}

    result = {
        "n_calls": n_calls,
        "decoder": timeit(decode_jit, x, u, model.params),
        "rhs": timeit(rhs_jit, x, u, model.params),
        "implicit_step": timeit(step_fn, x, u, model.params),
    }
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "timings.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1)
    return result


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlodyn",
        description="Grey-box deformable-linear-object dynamics toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("gen-data", "generate synthetic train/test trajectories"),
        ("train", "train a model on the training trajectory"),
        ("eval", "evaluate prediction accuracy on the test trajectories"),
        ("bench", "benchmark decoder / dynamics / integration-step timings"),
    ]:
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default=None, help="override output dir")
        if name in ("train",):
            p.add_argument("--model", type=str, default=None,
                           help="resume from an existing model file")
            p.add_argument("--train-csv", type=str, default=None,
                           help="training trajectory (default: <out>/train.csv)")
        if name in ("eval", "bench"):
            p.add_argument("--model", type=str, required=True, help="model file")
        if name == "eval":
            p.add_argument("--horizon", type=str, default=None,
                           help="comma-separated prediction horizons [s]")
            p.add_argument("--sweep-nprb", type=str, default=None,
                           help="comma-separated body counts to sweep")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config,
                          overrides={"seed": args.seed, "out_dir": args.out})
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "gen-data":
            try:
                meta = cmd_gen_data(cfg)
            except (DlodynError, OSError) as exc:
                print(f"error: data generation failed: {exc}", file=sys.stderr)
                return EXIT_DATA
            print(json.dumps({k: v for k, v in meta.items() if k == "files"}, indent=1))
        elif args.command == "train":
            try:
                summary = cmd_train(cfg, resume_model=args.model,
                                    train_csv=args.train_csv)
            except ConfigError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            except (DlodynError, OSError) as exc:
                print(f"error: training failed: {exc}", file=sys.stderr)
                return EXIT_TRAIN
            print(json.dumps(summary, indent=1))
        elif args.command == "eval":
            horizons = [float(h) for h in args.horizon.split(",")] if args.horizon else None
            sweep = [int(n) for n in args.sweep_nprb.split(",")] if args.sweep_nprb else None
            try:
                result = cmd_eval(cfg, args.model, horizons=horizons, sweep_nprb=sweep)
            except (DlodynError, OSError) as exc:
                print(f"error: evaluation failed: {exc}", file=sys.stderr)
                return EXIT_EVAL
            brief = {k: v for k, v in result.items() if k != "horizons"}
            brief["horizons"] = [
                {k: v for k, v in h.items() if k != "rollouts"}
                for h in result["horizons"]
            ]
            print(json.dumps(brief, indent=1))
        elif args.command == "bench":
            result = cmd_bench(cfg, args.model)
            print(json.dumps(result, indent=1))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
