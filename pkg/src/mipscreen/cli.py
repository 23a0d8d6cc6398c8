"""Command-line pipeline: generate data, label it, train and evaluate the
screening model, sweep the hyperparameter grid, search, distill, bench.

Exit codes: 0 success, 1 usage error, 2 data or validation error. All
randomness flows from explicit --seed flags; reports carry their full
configuration as leading # comment lines so results are self-describing.
"""

import argparse
import os
import sys

from . import data as dio
from . import distill as dst
from . import evaluate as ev
from . import screening as scr
from .search import exact_argmax


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    p = _Parser(prog="mipscreen", description=__doc__)
    p.add_argument(
        "--threads",
        type=int,
        default=0,
        help="cap BLAS worker threads (0 = leave library defaults)",
    )
    sub = p.add_subparsers(dest="command", metavar="command")

    g = sub.add_parser("gen", parents=[], help="generate a synthetic corpus",
                       description="Write train/test context and candidate "
                       "embedding files plus topic tags into --out-dir.")
    g.add_argument("--m-train", type=int, default=5000, help="training contexts (default 5000)")
    g.add_argument("--m-test", type=int, default=500, help="held-out contexts (default 500)")
    g.add_argument("--n", type=int, default=1000, help="candidate count (default 1000)")
    g.add_argument("--d", type=int, default=16, help="embedding dimension (default 16)")
    g.add_argument("--topics", type=int, default=20, help="latent topic count (default 20)")
    g.add_argument("--sigma", type=float, default=0.3, help="noise norm scale (default 0.3)")
    g.add_argument("--seed", type=int, default=42, help="generator seed (default 42)")
    g.add_argument("--out-dir", required=True, help="output directory (required)")

    l = sub.add_parser("labels", help="compute oracle best-response labels")
    l.add_argument("--contexts", required=True, help="EMB1 context file (required)")
    l.add_argument("--candidates", required=True, help="EMB1 candidate file (required)")
    l.add_argument("--out", required=True, help="output labels text file (required)")

    t = sub.add_parser("train-screen", help="train the screening model")
    t.add_argument("--contexts", required=True, help="EMB1 training contexts (required)")
    t.add_argument("--candidates", required=True, help="EMB1 candidates (required)")
    t.add_argument("--labels", required=True, help="labels text file (required)")
    t.add_argument("--k", type=int, default=10, help="cluster count (default 10)")
    t.add_argument("--lambda", dest="lam", type=float, default=1e-6,
                   help="balancing coefficient (default 1e-6)")
    t.add_argument("--t", type=int, default=10, help="alternations (default 10)")
    t.add_argument("--lr", type=float, default=0.05, help="SGD learning rate (default 0.05)")
    t.add_argument("--epochs", type=int, default=1,
                   help="SGD epochs per alternation (default 1)")
    t.add_argument("--batch", type=int, default=256, help="SGD batch size (default 256)")
    t.add_argument("--seed", type=int, default=42, help="training seed (default 42)")
    t.add_argument("--out-model", required=True, help="output SCRN file (required)")

    e = sub.add_parser("eval-screen", help="evaluate a trained screening model")
    e.add_argument("--model", required=True, help="SCRN model file (required)")
    e.add_argument("--contexts", required=True, help="EMB1 held-out contexts (required)")
    e.add_argument("--candidates", required=True, help="EMB1 candidates (required)")
    e.add_argument("--report", default="", help="optional CSV report path")
    e.add_argument("--seed", type=int, default=42,
                   help="seed recorded in the report (default 42)")

    r = sub.add_parser("grid", help="sweep the K x lambda grid")
    r.add_argument("--train-contexts", required=True, help="EMB1 training contexts (required)")
    r.add_argument("--test-contexts", required=True, help="EMB1 held-out contexts (required)")
    r.add_argument("--candidates", required=True, help="EMB1 candidates (required)")
    r.add_argument("--labels", required=True, help="labels text file (required)")
    r.add_argument("--k", default="10,20,50",
                   help="comma-separated cluster counts (default 10,20,50)")
    r.add_argument("--lambda", dest="lam", default="1e-5,5e-6,1e-6,5e-7",
                   help="comma-separated coefficients (default 1e-5,5e-6,1e-6,5e-7)")
    r.add_argument("--t", type=int, default=10, help="alternations (default 10)")
    r.add_argument("--lr", type=float, default=0.05, help="SGD learning rate (default 0.05)")
    r.add_argument("--epochs", type=int, default=1,
                   help="SGD epochs per alternation (default 1)")
    r.add_argument("--batch", type=int, default=256, help="SGD batch size (default 256)")
    r.add_argument("--seed", type=int, default=42, help="training seed (default 42)")
    r.add_argument("--report", required=True, help="output CSV path (required)")

    s = sub.add_parser("search", help="retrieve the best candidate per context")
    s.add_argument("--context-file", required=True, help="EMB1 query contexts (required)")
    s.add_argument("--candidates", required=True, help="EMB1 candidates (required)")
    s.add_argument("--model", default="", help="SCRN model (required for --screened)")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="brute-force search (default)")
    mode.add_argument("--screened", action="store_true", help="search the predicted subset only")

    d = sub.add_parser("distill", help="train a dual encoder against cached teacher scores")
    d.add_argument("--pairs", required=True, help="PAIR training file (required)")
    d.add_argument("--beta", type=float, default=1.0,
                   help="teacher score gap weight (default 1.0)")
    d.add_argument("--lr", type=float, default=0.5, help="SGD learning rate (default 0.5)")
    d.add_argument("--epochs", type=int, default=20, help="SGD epochs (default 20)")
    d.add_argument("--batch", type=int, default=64, help="SGD batch size (default 64)")
    d.add_argument("--dim", type=int, default=0,
                   help="embedding width (default 0 = half the feature length)")
    d.add_argument("--seed", type=int, default=42, help="training seed (default 42)")
    d.add_argument("--out-encoder", required=True, help="output DENC file (required)")

    gp = sub.add_parser("gen-pairs", help="generate planted-teacher pair files")
    gp.add_argument("--n-train", type=int, default=400,
                    help="training pair couples (default 400)")
    gp.add_argument("--n-test", type=int, default=200,
                    help="held-out pair couples (default 200)")
    gp.add_argument("--f", type=int, default=12, help="feature length (default 12)")
    gp.add_argument("--picks", type=int, default=8,
                    help="candidates per positive pick (default 8)")
    gp.add_argument("--flip", type=float, default=0.1,
                    help="label swap fraction (default 0.1)")
    gp.add_argument("--seed", type=int, default=42, help="generator seed (default 42)")
    gp.add_argument("--out-train", required=True, help="output train PAIR file (required)")
    gp.add_argument("--out-test", required=True, help="output test PAIR file (required)")

    b = sub.add_parser("bench", help="per-query latency of exact vs screened search")
    b.add_argument("--contexts", required=True, help="EMB1 query contexts (required)")
    b.add_argument("--candidates", required=True, help="EMB1 candidates (required)")
    b.add_argument("--model", default="", help="SCRN model; adds the screened searcher")
    b.add_argument("--warmup", type=int, default=10, help="untimed queries (default 10)")
    b.add_argument("--iters", type=int, default=100, help="timed queries (default 100)")
    return p


def _cmd_gen(args) -> int:
    spec = dio.SyntheticSpec(
        m_train=args.m_train,
        m_test=args.m_test,
        n_candidates=args.n,
        dim=args.d,
        topics=args.topics,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    syn = dio.gen_synthetic(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    dio.write_embeddings(syn.train_contexts, os.path.join(args.out_dir, "train_contexts.emb"))
    dio.write_embeddings(syn.test_contexts, os.path.join(args.out_dir, "test_contexts.emb"))
    dio.write_embeddings(syn.candidates, os.path.join(args.out_dir, "candidates.emb"))
    dio.write_labels(syn.train_topics, os.path.join(args.out_dir, "train_topics.txt"))
    dio.write_labels(syn.test_topics, os.path.join(args.out_dir, "test_topics.txt"))
    dio.write_labels(syn.candidate_topics, os.path.join(args.out_dir, "candidate_topics.txt"))
    print(f"wrote synthetic corpus to {args.out_dir}")
    return 0


def _cmd_labels(args) -> int:
    contexts = dio.read_embeddings(args.contexts)
    candidates = dio.read_embeddings(args.candidates)
    dio.write_labels(dio.build_labels(contexts, candidates), args.out)
    print(f"wrote {contexts.shape[0]} labels to {args.out}")
    return 0


def _load_trainset(contexts_path, candidates_path, labels_path) -> scr.ScreeningTrainSet:
    return scr.ScreeningTrainSet(
        dio.read_embeddings(contexts_path),
        dio.read_embeddings(candidates_path),
        dio.read_labels(labels_path),
    )


def _cmd_train_screen(args) -> int:
    trainset = _load_trainset(args.contexts, args.candidates, args.labels)
    cfg = scr.TrainConfig(
        k=args.k,
        lam=args.lam,
        alternations=args.t,
        learning_rate=args.lr,
        epochs_per_alternation=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
    )
    result = scr.train(trainset, cfg)
    scr.save_model(result.model, args.out_model)
    print(
        f"trained K={cfg.k} lambda={cfg.lam:g} "
        f"(best objective {min(result.losses_after_subset):.6f} at "
        f"step {result.best_step}); model written to {args.out_model}"
    )
    return 0


def _cmd_eval_screen(args) -> int:
    model = scr.load_model(args.model)
    contexts = dio.read_embeddings(args.contexts)
    candidates = dio.read_embeddings(args.candidates)
    report = ev.evaluate_model(model, contexts, candidates)
    cell = ev.GridCell(
        model.k, model.lam, report.accuracy, report.speedup_ratio,
        report.mean_subset_size, args.seed,
    )
    sys.stdout.write(ev.format_report_table([cell]))
    if args.report:
        config = {
            "command": "eval-screen",
            "model": args.model,
            "contexts": args.contexts,
            "candidates": args.candidates,
            "n_candidates": model.n_candidates,
            "seed": args.seed,
        }
        with open(args.report, "w") as fh:
            fh.write(ev.format_report_csv([cell], config))
        print(f"report written to {args.report}")
    return 0


def _parse_list(text, cast, flag):
    try:
        values = [cast(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise _UsageError(f"bad value for {flag}: {exc}")
    if not values:
        raise _UsageError(f"{flag} must list at least one value")
    return values


def _cmd_grid(args) -> int:
    trainset = _load_trainset(args.train_contexts, args.candidates, args.labels)
    test_contexts = dio.read_embeddings(args.test_contexts)
    k_list = _parse_list(args.k, int, "--k")
    lam_list = _parse_list(args.lam, float, "--lambda")
    base = scr.TrainConfig(
        k=k_list[0],
        lam=lam_list[0],
        alternations=args.t,
        learning_rate=args.lr,
        epochs_per_alternation=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
    )
    cells = ev.grid_sweep(trainset, test_contexts, k_list, lam_list, base)
    config = {
        "command": "grid",
        "train_contexts": args.train_contexts,
        "test_contexts": args.test_contexts,
        "candidates": args.candidates,
        "labels": args.labels,
        "k_list": ",".join(str(k) for k in k_list),
        "lambda_list": ",".join(f"{v:g}" for v in lam_list),
        "alternations": args.t,
        "learning_rate": args.lr,
        "epochs_per_alternation": args.epochs,
        "batch_size": args.batch,
        "seed": args.seed,
    }
    with open(args.report, "w") as fh:
        fh.write(ev.format_report_csv(cells, config))
    sys.stdout.write(ev.format_report_table(cells))
    print(f"report written to {args.report}")
    return 0


def _cmd_search(args) -> int:
    contexts = dio.read_embeddings(args.context_file)
    candidates = dio.read_embeddings(args.candidates)
    if candidates.shape[0] < 1:
        raise ValueError(f"candidate file {args.candidates} is empty")
    if args.screened:
        if not args.model:
            raise _UsageError("search: --screened requires --model")
        model = scr.load_model(args.model)
        if model.n_candidates != candidates.shape[0]:
            raise ValueError(
                f"--model expects {model.n_candidates} candidates but "
                f"--candidates has {candidates.shape[0]}"
            )
        for c in contexts:
            r = scr.screened_search(c, model, candidates)
            print(f"{r.index} {r.score:.6f}")
    else:
        for c in contexts:
            r = exact_argmax(c, candidates)
            print(f"{r.index} {r.score:.6f}")
    return 0


def _cmd_distill(args) -> int:
    pairs = dio.read_pairs(args.pairs)
    cfg = dst.DistillConfig(
        beta=args.beta,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        dim=args.dim or None,
    )
    result = dst.train_distilled(pairs, None, cfg)
    dst.save_encoder(result.encoder, args.out_encoder)
    print(
        f"distilled beta={cfg.beta:g} over {len(pairs)} pairs "
        f"(final epoch loss {result.epoch_losses[-1]:.6f}); "
        f"encoder written to {args.out_encoder}"
    )
    return 0


def _cmd_gen_pairs(args) -> int:
    spec = dio.PairSpec(
        n_train=args.n_train,
        n_test=args.n_test,
        n_features=args.f,
        picks=args.picks,
        label_flip=args.flip,
        seed=args.seed,
    )
    train_pairs, test_pairs, _ = dio.gen_pair_data(spec)
    dio.write_pairs(train_pairs, args.out_train)
    dio.write_pairs(test_pairs, args.out_test)
    print(
        f"wrote {len(train_pairs)} train and {len(test_pairs)} test pairs "
        f"to {args.out_train}, {args.out_test}"
    )
    return 0


def _cmd_bench(args) -> int:
    contexts = dio.read_embeddings(args.contexts)
    candidates = dio.read_embeddings(args.candidates)
    exact_stats = ev.bench_latency(
        "exact", contexts, candidates, warmup=args.warmup, iters=args.iters
    )
    print(
        f"exact    mean {exact_stats.mean_ns / 1e6:.3f} ms  "
        f"p50 {exact_stats.p50_ns / 1e6:.3f} ms  "
        f"p99 {exact_stats.p99_ns / 1e6:.3f} ms  ({exact_stats.count} queries)"
    )
    if args.model:
        model = scr.load_model(args.model)
        if model.n_candidates != candidates.shape[0]:
            raise ValueError(
                f"--model expects {model.n_candidates} candidates but "
                f"--candidates has {candidates.shape[0]}"
            )
        scr_stats = ev.bench_latency(
            "screened", contexts, candidates, model,
            warmup=args.warmup, iters=args.iters,
        )
        print(
            f"screened mean {scr_stats.mean_ns / 1e6:.3f} ms  "
            f"p50 {scr_stats.p50_ns / 1e6:.3f} ms  "
            f"p99 {scr_stats.p99_ns / 1e6:.3f} ms  ({scr_stats.count} queries)"
        )
        print(
            f"wall-clock speedup {exact_stats.mean_ns / scr_stats.mean_ns:.2f}x, "
            f"subset speedup ratio {ev.speedup_ratio(model, contexts):.2f}x"
        )
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "labels": _cmd_labels,
    "train-screen": _cmd_train_screen,
    "eval-screen": _cmd_eval_screen,
    "grid": _cmd_grid,
    "search": _cmd_search,
    "distill": _cmd_distill,
    "gen-pairs": _cmd_gen_pairs,
    "bench": _cmd_bench,
}


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage())
        if args.threads > 0:
            try:
                import threadpoolctl

                threadpoolctl.threadpool_limits(args.threads)
            except ImportError:
                pass
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        message = str(exc).rstrip()
        if "usage" not in message.lower():
            message += "\n" + parser.format_usage().rstrip()
        sys.stderr.write(message + "\n")
        return 1
    except (OSError, ValueError, IndexError, KeyError) as exc:
        sys.stderr.write(f"mipscreen: error: {exc}\n")
        return 2


def main() -> None:
    raise SystemExit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
