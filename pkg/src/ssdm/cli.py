"""Command-line driver: ``ssdm <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data_io as io
from . import diffusion as dif
from . import geometry as geo
from . import metrics as met
from . import sampler, training
from .rng import RngStream, stage_seed
from .score_model import load_checkpoint, save_checkpoint

log = logging.getLogger("ssdm")

DATA_TAG, TRAIN_TAG, SAMPLE_TAG, EVAL_TAG = 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def schedule_from_config(cfg: io.ExperimentConfig) -> dif.NoiseSchedule:
    return dif.NoiseSchedule(
        anchor=io.anchor_state(cfg.anchor, cfg.d), sigma_min=cfg.sigma_min, sigma_max=cfg.sigma_max,
        horizon=cfg.horizon, n_steps=cfg.n_steps, lambda_ou=cfg.lambda_ou, drift_sign=cfg.drift_sign,
    )


def train_config_from(cfg: io.ExperimentConfig, seed: int, threads: int) -> training.TrainConfig:
    return training.TrainConfig(
        schedule=schedule_from_config(cfg), steps=cfg.train_steps, batch=cfg.batch,
        pool_size=cfg.pool_size, seed=seed, log_every=cfg.log_every, lr=cfg.lr,
        weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm, hidden=cfg.hidden,
        phase_augment=cfg.phase_augment, threads=threads,
    )


def _threads(value: int | None) -> int:
    if value is None:
        value = int(os.environ.get("SSDM_THREADS", "1"))
    if value < 1:
        raise ValueError("thread count must be >= 1")
    return value


def _qubits_for(d: int) -> int:
    n = d.bit_length() - 1
    if 1 << n != d:
        raise ValueError(f"ensemble dimension {d} is not a power of two")
    return n


def _write_ensemble(path, ens, **meta) -> None:
    io.write_ensemble(path, ens)
    io.write_meta(path, **meta)


def _train_stage(cfg: io.ExperimentConfig, data: np.ndarray, seed: int, threads: int, model_path,
                 log_path, baseline: str | None = None):
    tcfg = train_config_from(cfg, seed, threads)
    fit = training.train_vp if baseline == "vp" else training.train
    net, opt, history = fit(tcfg, data, RngStream(seed))
    save_checkpoint(model_path, net, opt, config=cfg.to_dict(), seed=seed)
    io.atomic_write_text(log_path, history.to_csv())
    io.write_meta(log_path, config=cfg.to_dict(), seed=seed, baseline=baseline)
    return net


def _sample_stage(net, cfg: io.ExperimentConfig, count: int, seed: int, threads: int) -> np.ndarray:
    sched = schedule_from_config(cfg)
    if net.head == "identity":
        return sampler.vp_sample(net, sched, count, seed, threads=threads)
    return sampler.sample_ensemble(net, sched, count, seed, threads=threads)


def _write_metrics(path, m: met.EnsembleMetrics, **meta) -> None:
    io.atomic_write_text(path, m.to_csv())
    io.write_meta(path, **meta)


def run_pipeline(cfg: io.ExperimentConfig, out_dir=None, baseline: str | None = None,
                 threads: int = 1) -> met.EnsembleMetrics:
    """gen-data, train, sample and eval from a single master seed (``cfg.seed``)."""
    out = Path(cfg.out_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = {name: stage_seed(cfg.seed, tag) for name, tag in
             (("data", DATA_TAG), ("train", TRAIN_TAG), ("sample", SAMPLE_TAG), ("eval", EVAL_TAG))}
    echo = dict(config=cfg.to_dict(), master_seed=cfg.seed, stage_seeds=seeds, baseline=baseline)
    io.save_config(out / "config.json", cfg)
    stage = "gen-data"
    try:
        data = io.make_cluster_ensemble(cfg.n_qubits, cfg.epsilon, cfg.pool_size, RngStream(seeds["data"]))
        _write_ensemble(out / "data.ssdm", data, **echo)
        stage = "train"
        net = _train_stage(cfg, data, seeds["train"], threads, out / "model.ckpt", out / "train_log.csv", baseline)
        stage = "sample"
        gen = _sample_stage(net, cfg, cfg.eval_count, seeds["sample"], threads)
        _write_ensemble(out / "gen.ssdm", gen, **echo)
        stage = "eval"
        result = met.evaluate(gen, data, cfg.n_qubits, seed=cfg.seed)
        _write_metrics(out / "metrics.csv", result, **echo)
    except Exception as exc:
        raise RuntimeError(f"{stage}: {exc}") from exc
    return result


def _config_for(args, n_qubits: int | None = None) -> io.ExperimentConfig:
    if getattr(args, "config", None):
        cfg = io.load_config(args.config)
    else:
        cfg = io.default_config(n_qubits if n_qubits is not None else 2)
    changes = {}
    if n_qubits is not None and n_qubits != cfg.n_qubits:
        raise ValueError(f"config is for {cfg.n_qubits} qubits but the data has {n_qubits}")
    if getattr(args, "steps", None) is not None:
        changes["train_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return io.config_from_dict({**cfg.to_dict(), **changes})


def cmd_gen_data(args) -> int:
    cfg = _config_for(args, args.qubits)
    ens = io.make_cluster_ensemble(args.qubits, args.epsilon, args.count, RngStream(args.seed))
    _write_ensemble(args.out, ens, seed=args.seed, qubits=args.qubits, epsilon=args.epsilon, count=args.count,
                    config=cfg.to_dict())
    print(f"wrote {args.count} states (d={1 << args.qubits}) to {args.out}")
    return 0


def cmd_train(args, baseline: str | None = None) -> int:
    data = io.read_ensemble(args.data)
    cfg = _config_for(args, _qubits_for(data.shape[1]))
    log_path = args.log or f"{args.out}.log.csv"
    _train_stage(cfg, data, args.seed, _threads(args.threads), args.out, log_path, baseline)
    print(f"trained {cfg.train_steps} steps; model -> {args.out}, log -> {log_path}")
    return 0


def cmd_sample(args) -> int:
    net, doc = load_checkpoint(args.model)
    cfg = io.config_from_dict(doc["config"])
    gen = _sample_stage(net, cfg, args.count, args.seed, _threads(args.threads))
    _write_ensemble(args.out, gen, seed=args.seed, model=str(args.model), config=cfg.to_dict())
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def _meta_seed(path):
    meta = Path(f"{path}.meta.json")
    if meta.exists():
        return json.loads(meta.read_text()).get("seed")
    return None


def cmd_eval(args) -> int:
    gen, target = io.read_ensemble(args.gen), io.read_ensemble(args.target)
    n = _qubits_for(gen.shape[1])
    seed = args.seed if args.seed is not None else _meta_seed(args.gen)
    result = met.evaluate(gen, target, n, seed=seed)
    _write_metrics(args.out, result, gen=str(args.gen), target=str(args.target), seed=seed)
    print(result.to_csv(), end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_for(args, args.qubits)
    result = run_pipeline(cfg, args.out, baseline=args.baseline, threads=_threads(args.threads))
    print(result.to_csv(), end="")
    return 0


def cmd_sse_diagnose(args) -> int:
    d = 1 << args.qubits
    rng = RngStream(args.seed)
    ratio = dif.calibrate_sse_rate(d, args.sigma, args.calib_dt, rng.derive(0))
    eta = ratio * args.sigma**2
    n_steps = int(round(args.t / args.dt))
    gens = dif.gell_mann(d)
    psi0 = geo.haar_state(d, rng.derive(1), args.trajectories)
    psi_t = dif.simulate_sse(gens, eta, psi0, n_steps, args.dt, rng.derive(2))
    fid = np.abs(geo.inner(psi0, psi_t)) ** 2
    mean, se = float(fid.mean()), float(fid.std(ddof=1) / np.sqrt(len(fid)))
    ok = abs(mean - 1.0 / d) <= 3 * se
    print(f"calibrated eta/sigma^2 = {ratio:.6f}")
    print(f"E|<psi_t, psi_0>|^2 = {mean:.6f} +/- {se:.6f} (target 1/d = {1.0 / d:.6f})")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssdm", description="Diffusion models on pure quantum states.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def threads(sp):
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: $SSDM_THREADS or 1)")

    g = sub.add_parser("gen-data", help="generate a clustered target ensemble")
    g.add_argument("--qubits", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--epsilon", type=float, default=0.1)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)

    for name, helptext in (("train", "train the manifold score model"),
                           ("baseline-vp", "train the Euclidean VP baseline")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--data", required=True)
        t.add_argument("--config")
        t.add_argument("--seed", type=int, required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--log", help="training-log CSV (default: <out>.log.csv)")
        t.add_argument("--steps", type=int, help="override the configured step count")
        threads(t)

    s = sub.add_parser("sample", help="draw an ensemble from a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    threads(s)

    e = sub.add_parser("eval", help="compare a generated ensemble with a target")
    e.add_argument("--gen", required=True)
    e.add_argument("--target", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)

    pl = sub.add_parser("pipeline", help="gen-data, train, sample and eval in one run")
    pl.add_argument("--qubits", type=int)
    pl.add_argument("--config")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--out", required=True, help="output directory")
    pl.add_argument("--steps", type=int, help="override the configured step count")
    pl.add_argument("--baseline", choices=["vp"])
    threads(pl)

    d = sub.add_parser("sse-diagnose", help="check Haar mixing of the calibrated SSE")
    d.add_argument("--qubits", type=int, required=True)
    d.add_argument("--sigma", type=float, required=True)
    d.add_argument("--t", type=float, required=True)
    d.add_argument("--trajectories", type=int, required=True)
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--dt", type=float, default=1e-4)
    d.add_argument("--calib-dt", type=float, default=1e-3)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "baseline-vp": lambda a: cmd_train(a, baseline="vp"),
    "sample": cmd_sample,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
    "sse-diagnose": cmd_sse_diagnose,
}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command == "pipeline" and args.qubits is None and not args.config:
            parser.error("pipeline needs --qubits or --config")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        print(f"ssdm {args.command}: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SSDM_LOG", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
