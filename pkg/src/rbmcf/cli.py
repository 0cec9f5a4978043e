"""Command-line entry point.

Exit codes: 0 success, 2 data/config error, 3 transport error, 4 numeric error.
"""

import argparse
import json
import logging
import os
import sys
import tempfile
import threading

import numpy as np

from . import data as datamod
from .bench import ScalingReport, ScalingRow, TimingSample, batch_sizes, time_epoch
from .config import SCHEMA, load_config, resolve
from .errors import CompatibilityError, ConfigError, DataError, RbmcfError, TransportError, exit_code_for
from .inference import evaluate_rbm, q_sweep, rbm_scores
from .launch import combined_exit_code, spawn_local
from .model import VisibleState
from .parallel import InProcessHub, LocalComm, SocketRingComm, parse_endpoints
from .trainer import TrainConfig, Trainer, train, train_inprocess

log = logging.getLogger("rbmcf")


def setup_logging():
    level = os.environ.get("RBMCF_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required (flag or config file)")


def _load_split(path):
    try:
        return datamod.load_cache(path)
    except FileNotFoundError:
        raise DataError(f"dataset cache not found: {path}") from None


def _load_model(path):
    try:
        return datamod.load_model(path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None


def _print_table(rows):
    width = max(len(str(k)) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")


# --- prepare -------------------------------------------------------------

def cmd_prepare(args):
    _require(args, "input", "output")
    try:
        d = datamod.read_ratings(args.input, args.k)
    except FileNotFoundError:
        raise DataError(f"input not found: {args.input}") from None
    raw_rows = [("parsed_users", d.n_users), ("parsed_items", d.n_items), ("parsed_ratings", d.n_ratings)]
    d = datamod.filter_min_ratings(d, args.min_ratings)
    split = datamod.holdout_split(d, args.holdout, args.holdout_order, args.seed)
    datamod.save_cache(split, args.output)
    _print_table(raw_rows + datamod.summary_rows(split))
    return 0


# --- train ---------------------------------------------------------------

def _train_config(args, K, workers):
    return TrainConfig(
        n_hidden=args.hidden, n_levels=K, gibbs_steps=args.gibbs, learning_rate=args.lr,
        global_batch=args.global_batch, epochs=args.epochs, seed=args.seed, workers=workers,
        init_sigma=args.init_sigma, shuffle=getattr(args, "shuffle", True),
        check_consistency=getattr(args, "check_consistency", False),
    )


def _strip_flag(argv, flag):
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == flag:
            skip = True
            continue
        if tok.startswith(flag + "="):
            continue
        out.append(tok)
    return out


def _write_outputs(args, params, item_ids, history):
    model_path = args.model or "model.rbm"
    datamod.save_model(params, item_ids, model_path)
    history_path = args.history or model_path + ".history.csv"
    with open(history_path, "w", encoding="utf-8") as fh:
        history.to_csv(fh)
    print(f"model written to {model_path}; history to {history_path}")


def cmd_train(args):
    _require(args, "data")
    if args.spawn_local:
        base = _strip_flag(args.argv, "--spawn-local")
        codes = spawn_local(lambda r, eps: base + ["--workers", eps, "--rank", str(r)], args.spawn_local)
        code = combined_exit_code(codes)
        if code:
            log.error("worker exit codes: %s", codes)
        return code

    split = _load_split(args.data)
    train_set = split.train
    if args.threads:
        cfg = _train_config(args, train_set.K, args.threads)
        params, history = train_inprocess(train_set, cfg, timeout=args.timeout)
        rank = 0
    elif args.workers:
        endpoints = parse_endpoints(args.workers)
        cfg = _train_config(args, train_set.K, len(endpoints))
        with SocketRingComm(args.rank, endpoints, timeout=args.timeout) as comm:
            params, history = train(train_set, cfg, comm)
        rank = args.rank
    else:
        cfg = _train_config(args, train_set.K, 1)
        params, history = train(train_set, cfg)
        rank = 0
    if rank == 0:
        if history.records:
            last = history.records[-1]
            print(f"trained {len(history)} epochs; final recon_err={last.recon_err:.4f}")
        _write_outputs(args, params, train_set.item_ids, history)
    return 0


# --- evaluate / predict --------------------------------------------------

def _compatible(item_ids, split):
    if not np.array_equal(item_ids, split.train.item_ids):
        raise CompatibilityError("model item map does not match the dataset cache")


def cmd_evaluate(args):
    _require(args, "model", "data")
    params, item_ids = _load_model(args.model)
    split = _load_split(args.data)
    _compatible(item_ids, split)
    if split.test.n_ratings == 0:
        raise DataError("test set is empty")
    result = evaluate_rbm(params, split, args.predict_mode)
    report = args.report or args.model + ".report.csv"
    with open(report, "w", encoding="utf-8") as fh:
        result.to_csv(fh)
    print(f"RMSE {result.rmse:.6f} over {len(result)} ratings; report written to {report}")
    return 0


def cmd_predict(args):
    _require(args, "model", "data", "user", "item")
    params, item_ids = _load_model(args.model)
    split = _load_split(args.data)
    _compatible(item_ids, split)
    try:
        u = split.train.user_index(args.user)
        i = split.train.item_index(args.item)
    except KeyError as exc:
        raise DataError(str(exc.args[0])) from None
    known = {**split.train.user(u).as_dict(), **split.test.user(u).as_dict()}
    if i in known:
        raise DataError(f"user {args.user} already rated item {args.item} (level {known[i]})")
    scores = rbm_scores(VisibleState.from_dict(known), i, params)
    level = int(np.argmax(scores)) + 1
    print(f"predicted level {level}")
    for k, s in enumerate(scores, start=1):
        print(f"level {k}: log-score {float(s)!r}")
    return 0


# --- svd -----------------------------------------------------------------

def cmd_svd(args):
    _require(args, "data")
    split = _load_split(args.data)
    if split.test.n_ratings == 0:
        raise DataError("test set is empty")
    rows = q_sweep(split, args.q_list, round_predictions=args.round, seed=args.seed)
    lines = ["q,rmse"] + [f"{q},{r!r}" for q, r in rows]
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    best_q, best = min(rows, key=lambda r: r[1])
    print(f"best q = {best_q} (RMSE {best:.6f})")
    return 0


# --- bench ---------------------------------------------------------------

def _timed_trainer_run(trainer, comm, epochs, warmup, reps):
    def run():
        for _ in range(epochs):
            trainer.run_epoch()
        comm.barrier()

    comm.barrier()
    return time_epoch(run, warmup=warmup, reps=reps, label=f"P={comm.size}")


def cmd_bench_worker(args):
    split = _load_split(args.data)
    endpoints = parse_endpoints(args.workers)
    cfg = _train_config(args, split.train.K, len(endpoints))
    with SocketRingComm(args.rank, endpoints, timeout=args.timeout) as comm:
        trainer = Trainer(split.train, cfg, comm)
        sample = _timed_trainer_run(trainer, comm, args.epochs, args.warmup, args.reps)
    if args.rank == 0:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump({"seconds": sample.seconds, "raw": sample.raw, "reps": sample.repetitions}, fh)
    return 0


def bench_inprocess(train_set, cfg, epochs, warmup, reps, timeout=30.0):
    """Time ``cfg.workers`` in-process worker threads; returns rank 0's sample."""
    hub = InProcessHub(cfg.workers, timeout=timeout) if cfg.workers > 1 else None
    out, errors = [None] * cfg.workers, []

    def work(rank):
        try:
            comm = hub.comm(rank) if hub else LocalComm()
            out[rank] = _timed_trainer_run(Trainer(train_set, cfg, comm), comm, epochs, warmup, reps)
        except Exception as exc:
            errors.append(exc)
            if hub:
                hub.abort()

    threads = [threading.Thread(target=work, args=(r,), daemon=True) for r in range(cfg.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return out[0]


def _bench_row_socket(args, P, global_batch, tmpdir):
    timing = os.path.join(tmpdir, f"timing_{P}.json")
    base = ["bench-worker", "--data", args.data, "--global-batch", str(global_batch),
            "--hidden", str(args.hidden), "--gibbs", str(args.gibbs), "--lr", repr(args.lr),
            "--seed", str(args.seed), "--init-sigma", repr(args.init_sigma),
            "--epochs", str(args.epochs), "--warmup", str(args.warmup), "--reps", str(args.reps),
            "--timeout", repr(args.timeout), "--output", timing]
    codes = spawn_local(lambda r, eps: base + ["--workers", eps, "--rank", str(r)], P)
    if combined_exit_code(codes):
        raise TransportError(f"workers exited with {codes}")
    with open(timing, encoding="utf-8") as fh:
        t = json.load(fh)
    return TimingSample(f"P={P}", t["seconds"], t["reps"], t["raw"])


def run_bench(args):
    split = _load_split(args.data)
    report = ScalingReport(args.scaling_mode)
    cores = os.cpu_count() or 1
    with tempfile.TemporaryDirectory() as tmpdir:
        for P in args.workers_list:
            global_batch, per_worker = batch_sizes(args.scaling_mode, P, args.strong_batch, args.weak_batch)
            row = ScalingRow(P, args.scaling_mode, global_batch, per_worker)
            if P > cores:
                log.warning("P=%d exceeds %d available cores; timings will be oversubscribed", P, cores)
            try:
                if args.transport == "inprocess":
                    args_global = argparse.Namespace(**vars(args))
                    args_global.global_batch = global_batch
                    cfg = _train_config(args_global, split.train.K, P)
                    row.sample = bench_inprocess(split.train, cfg, args.epochs, args.warmup, args.reps, args.timeout)
                else:
                    row.sample = _bench_row_socket(args, P, global_batch, tmpdir)
            except RbmcfError as exc:
                row.error = str(exc)
                log.error("P=%d failed: %s", P, exc)
            report.rows.append(row)
    return report


def cmd_bench(args):
    _require(args, "data")
    if args.scaling_mode not in ("strong", "weak"):
        raise ConfigError("--mode must be strong or weak")
    report = run_bench(args)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            report.to_csv(fh)
        print(f"scaling report written to {args.output}")
    else:
        report.to_csv(sys.stdout)
    return 3 if report.partial else 0


# --- synth ---------------------------------------------------------------

def cmd_synth(args):
    from .synthetic import movielens_like

    _require(args, "output")
    d = movielens_like(args.users, args.items, n_factors=args.factors, K=args.k, seed=args.seed)
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        datamod.write_ratings_csv(d, fh)
    print(f"wrote {d.n_ratings} ratings for {d.n_users} users and {d.n_items} items to {args.output}")
    return 0


# --- parser --------------------------------------------------------------

def _opt(p, flag, key=None, **kw):
    key = key or flag.lstrip("-").replace("-", "_")
    conv = SCHEMA[key][0]
    p.add_argument(flag, dest=key, default=None, type=conv if conv is not bool else None, **kw)


def _train_opts(p):
    _opt(p, "--data", help="dataset cache written by 'prepare'")
    _opt(p, "--epochs")
    _opt(p, "--hidden", help="hidden units (default 100)")
    _opt(p, "--lr", help="learning rate (default 0.001)")
    _opt(p, "--global-batch", help="users per optimizer step (default 512)")
    _opt(p, "--gibbs", help="Gibbs steps per CD update (default 1)")
    _opt(p, "--seed")
    _opt(p, "--init-sigma")
    _opt(p, "--timeout", help="collective timeout in seconds (default 30)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")

    parser = argparse.ArgumentParser(prog="rbmcf", description="RBM collaborative filtering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="ingest MovieLens CSV into a split cache")
    _opt(p, "--input")
    _opt(p, "--output")
    _opt(p, "--min-ratings")
    _opt(p, "--holdout")
    _opt(p, "--k")
    _opt(p, "--holdout-order", choices=["first", "random"])
    _opt(p, "--seed")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train an RBM")
    _train_opts(p)
    _opt(p, "--model")
    _opt(p, "--history")
    _opt(p, "--workers", help="host:port,... one endpoint per rank (socket ring)")
    _opt(p, "--rank")
    _opt(p, "--spawn-local", help="launch this many local worker processes")
    _opt(p, "--threads", help="run this many in-process worker threads")
    p.add_argument("--no-shuffle", dest="shuffle", action="store_const", const=False, default=None)
    p.add_argument("--check-consistency", dest="check_consistency", action="store_const", const=True,
                   default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="RMSE on the held-out ratings")
    _opt(p, "--model")
    _opt(p, "--data")
    _opt(p, "--report")
    _opt(p, "--mode", key="predict_mode", choices=["argmax", "expected"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="predict one user's rating for one item")
    _opt(p, "--model")
    _opt(p, "--data")
    _opt(p, "--user")
    _opt(p, "--item")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("svd", parents=[common], help="truncated-SVD baseline q sweep")
    _opt(p, "--data")
    _opt(p, "--q-list")
    _opt(p, "--output")
    _opt(p, "--seed")
    p.add_argument("--round", dest="round", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_svd)

    p = sub.add_parser("bench", parents=[common], help="strong/weak scaling benchmark")
    _train_opts(p)
    _opt(p, "--mode", key="scaling_mode", choices=["strong", "weak"])
    _opt(p, "--workers-list")
    _opt(p, "--warmup")
    _opt(p, "--reps")
    _opt(p, "--strong-batch")
    _opt(p, "--weak-batch")
    _opt(p, "--transport", choices=["socket", "inprocess"])
    _opt(p, "--output")
    p.set_defaults(func=cmd_bench, epochs_default=1)

    p = sub.add_parser("bench-worker", parents=[common], help=argparse.SUPPRESS)
    _train_opts(p)
    _opt(p, "--workers")
    _opt(p, "--rank")
    _opt(p, "--warmup")
    _opt(p, "--reps")
    _opt(p, "--output")
    p.set_defaults(func=cmd_bench_worker, epochs_default=1)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic MovieLens-format CSV")
    _opt(p, "--output")
    _opt(p, "--users")
    _opt(p, "--items")
    _opt(p, "--factors")
    _opt(p, "--k")
    _opt(p, "--seed")
    p.set_defaults(func=cmd_synth)
    return parser


def parse_args(argv):
    """Parse ``argv`` and fill every unset option from the config file, then defaults."""
    argv = list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    file_values = load_config(args.config)
    if getattr(args, "epochs_default", None) is not None and args.epochs is None and "epochs" not in file_values:
        args.epochs = args.epochs_default
    return resolve(args, file_values)


def main(argv=None):
    setup_logging()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        return args.func(args) or 0
    except RbmcfError as exc:
        log.error("%s", exc)
        return exit_code_for(exc)
    except ValueError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
