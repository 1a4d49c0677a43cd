"""Command line interface: ``msfm <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 IO or data-format error. Failures print one JSON line to stderr:
``{"error": <class>, "exit_code": <n>, "message": <text>}``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import coupling, data, experiments as ex, metrics, nn
from .config import ExperimentConfig, dump_config, load_config
from .cost import cost_from_tag, pair_costs
from .errors import ConfigError, MsfmError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg.validate()


def _run_dir(cfg: ExperimentConfig) -> Path:
    d = cfg.run_dir()
    d.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, d / "config.yaml")
    return d


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_train(args, static: bool = False) -> int:
    cfg = _load(args)
    name = "static.ckpt" if static else "model.ckpt"
    if args.sweep_lr:
        # the selected learning rate is part of the config, hence of the run directory
        res = ex.sweep_lr(cfg, static)
        cfg = res.config
        d = _run_dir(cfg)
    else:
        d = _run_dir(cfg)
        every = cfg.train.checkpoint_every

        def on_step(step, loss, model, state):
            if every and (step + 1) % every == 0:
                nn.save_checkpoint(d / name, model, state, cfg.seed, step + 1, {"config_hash": cfg.hash()})

        res = (ex.train_static if static else ex.train_flow)(cfg, on_step)
    ckpt = d / name
    nn.save_checkpoint(ckpt, res.model, res.state, cfg.seed, int(res.losses.size),
                       {"config_hash": cfg.hash(), "lr": cfg.train.lr})
    ex.write_loss_curve(d / ("static_loss.csv" if static else "loss.csv"), res.losses)
    summary = {"run_dir": str(d), "checkpoint": str(ckpt), "steps": int(res.losses.size),
               "final_loss": res.final_loss, "lr": cfg.train.lr, "config_hash": cfg.hash()}
    if res.lr_losses:
        summary["lr_sweep"] = {repr(k): v for k, v in res.lr_losses.items()}
    _emit(summary)
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    d = _run_dir(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else d / "model.ckpt"
    model, _, _ = nn.load_checkpoint(ckpt, ex.build_spec(cfg))
    reports = ex.evaluate(cfg, model, d)
    path = d / "metrics.jsonl"
    path.write_text("")
    metrics.write_reports(path, reports, cfg.hash())
    _emit({"metrics": str(path), "n_reports": len(reports), "config_hash": cfg.hash()})
    return 0


def cmd_couple(args) -> int:
    X0 = data.load_batch(args.x0)
    X1 = data.load_batch(args.x1, dim=X0.shape[1])
    if X0.shape != X1.shape:
        raise ConfigError(f"batches differ in size: {X0.shape[0]} vs {X1.shape[0]}")
    fn = cost_from_tag(args.cost, args.matrix, X0.shape[1], args.matrix_seed)
    c = coupling.Coupler(args.coupler, fn, args.epsilon)
    cp = coupling.compute_coupling(c, X0, X1)
    i, j = coupling.draw_pairs(cp, data.make_rng(args.seed or 0))
    costs = pair_costs(X0[i], X1[j], fn)
    out = Path(args.out or "pairs.csv")
    d = X0.shape[1]
    header = ",".join([f"x0_{a + 1}" for a in range(d)] + [f"x1_{a + 1}" for a in range(d)])
    data.save_batch(out, np.concatenate([X0[i], X1[j]], axis=1), header=header)
    stats = {"pairs": str(out), "coupler": c.kind, "cost": fn.kind, "k": int(cp.k),
             "total_cost": float(costs.sum()), "mean_cost": float(costs.mean())}
    stats.update({key: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for key, v in cp.info.items()})
    _emit(stats)
    return 0


def cmd_sweep_k(args) -> int:
    cfg = _load(args)
    d = _run_dir(cfg)
    k_list = [int(s) for s in args.k_list.split(",") if s.strip()]
    couplers = [s.strip() for s in args.couplers.split(",") if s.strip()]
    rows = ex.sweep_k(cfg, k_list, args.resamples, couplers, train=args.train)
    path = d / "sweep_k.csv"
    ex.write_sweep(path, rows)
    _emit({"sweep": str(path), "rows": len(rows), "config_hash": cfg.hash()})
    return 0


def cmd_gen_data(args) -> int:
    rng = data.make_rng(args.seed)
    if args.kind == "checkerboard":
        x = data.sample_checkerboard(rng, args.n, args.half_width)
    elif args.kind == "normal":
        x = data.GMM.standard_normal(args.dim).sample(rng, args.n)
    else:
        g = data.make_random_gmm(args.dim, args.centers, args.spread, args.std, data.make_rng(args.gmm_seed))
        x = g.sample(rng, args.n)
    data.save_batch(args.out, x, header=f"{args.kind} n={args.n} seed={args.seed}")
    _emit({"out": str(args.out), "rows": int(x.shape[0]), "cols": int(x.shape[1])})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msfm", description="Flow matching with minibatch couplings: experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="override the output root directory")

    for name, help_ in (("train", "train a flow with the joint objective"),
                        ("train-static", "train a static barycentric map")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--sweep-lr", action="store_true",
                        help="train with every train.lr_candidates value and keep the best")

    sp = sub.add_parser("eval", help="evaluate a trained flow")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint file (default: <run dir>/model.ckpt)")

    sp = sub.add_parser("couple", help="couple two CSV batches")
    sp.add_argument("x0")
    sp.add_argument("x1")
    sp.add_argument("--coupler", default="batchot")
    sp.add_argument("--cost", default="sqeuclidean")
    sp.add_argument("--matrix", help="CSV matrix A for weighted_sq")
    sp.add_argument("--matrix-seed", type=int, default=0)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--seed", type=int, help="seed for drawing pairs from a plan")
    sp.add_argument("--out", help="pairs CSV (default pairs.csv)")

    sp = sub.add_parser("sweep-k", help="coupling cost versus block size k")
    common(sp)
    sp.add_argument("--k-list", default="2,4,8,16,32,64")
    sp.add_argument("--couplers", default="batchot,uniform")
    sp.add_argument("--resamples", type=int, default=50)
    sp.add_argument("--train", action="store_true", help="also train a flow per (coupler, k)")

    sp = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    sp.add_argument("--kind", choices=("checkerboard", "normal", "gmm"), default="checkerboard")
    sp.add_argument("-n", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dim", type=int, default=2)
    sp.add_argument("--half-width", type=float, default=2.0)
    sp.add_argument("--centers", type=int, default=8)
    sp.add_argument("--spread", type=float, default=1.0)
    sp.add_argument("--std", type=float, default=0.1)
    sp.add_argument("--gmm-seed", type=int, default=0, help="seed for the mixture means")
    return p


_COMMANDS = {
    "train": lambda a: cmd_train(a, False),
    "train-static": lambda a: cmd_train(a, True),
    "eval": cmd_eval,
    "couple": cmd_couple,
    "sweep-k": cmd_sweep_k,
    "gen-data": cmd_gen_data,
}


def _fail(kind: str, code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code,
                                 "message": " ".join(str(message).split())}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as e:
        return _fail("UsageError", 1, e)
    try:
        return _COMMANDS[args.command](args)
    except MsfmError as e:
        return _fail(type(e).__name__, e.exit_code, e)
    except OSError as e:
        return _fail(type(e).__name__, 3, e)
    except (ValueError, ArithmeticError) as e:
        return _fail(type(e).__name__, 2, e)


if __name__ == "__main__":
    sys.exit(main())
