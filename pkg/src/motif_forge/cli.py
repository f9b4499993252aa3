"""Command-line entry point: ``motif-forge gen|train|mine|count|repro``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from threadpoolctl import threadpool_limits

from .autodiff import NonFiniteError
from .baselines import enumerate_exact, mine_mfinder, mine_rand_esu
from .encoder import EncoderModel, ModelConfig, TrainConfig, TrainingDiverged, save_training, train
from .evaluation import ExperimentConfig, ExperimentFailed, run_experiment
from .graph import PLANTED_FILE, BudgetExceeded, EdgeListError, Graph, disjoint_union, read_dataset, write_dataset, write_edgelist
from .miner import NoSeedsError, build_index, mine_beam, mine_greedy, mine_mcts, report, write_report
from .synthgen import FAMILIES, GeneratorConfig, dataset_statistics, generate, plant_motif_dataset, resolve_family, spawn_rng, statistics_csv

log = logging.getLogger("motif_forge")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

DESK_NOTE = (
    "note: desk-scale defaults (20,000 training batches, 200-graph targets, 10,000 indexed neighbourhoods); "
    "full-scale training runs 1,000,000 batches"
)

# per-subcommand defaults; a JSON config overrides these and explicit flags override both
DEFAULTS: dict[str, dict[str, Any]] = {
    "gen": {"family": "mixed", "n_graphs": 100, "size": "6..29", "out": "data"},
    "plant": {"motif_size": 6, "base_size": 10, "count": 200, "attach_edges": 1, "out": "data"},
    "train": {
        "batches": 20_000,
        "batch_size": 64,
        "margin": 0.1,
        "lr": 1e-4,
        "eval_every": 1000,
        "holdout": 10_000,
        "validation": 2_000,
        "hidden": 64,
        "out": "model.ckpt",
    },
    "mine": {
        "k": 5,
        "strategy": "greedy",
        "seeds": 1000,
        "simulations": 1000,
        "beam": 5,
        "c": 0.7,
        "index": 10_000,
        "nbr_size": "20..29",
        "verify_limit": 6,
        "top": 10,
        "out": "mined",
    },
    "count": {"k": 4, "method": "exact", "samples": 10_000, "tau": 2.3, "graph_level": False},
}


class UsageError(Exception):
    pass


def parse_range(text: str) -> tuple[int, int]:
    """``"lo..hi"`` or a single integer."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise UsageError(f"expected a range like 6..29, got {text!r}") from None
    if lo > hi or lo < 1:
        raise UsageError(f"invalid range {text!r}")
    return lo, hi


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="worker thread cap (default: $MOTIF_FORGE_THREADS or all cores)")
    p.add_argument("--config", default=None, help="JSON file of option values; flags override it")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motif-forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset directory")
    g.add_argument("mode", nargs="?", choices=["plant"], help="'plant' builds a planted-motif dataset")
    g.add_argument("--family", help=f"generator family: {', '.join(FAMILIES)} or mixed")
    g.add_argument("--n-graphs", type=int, help="number of graphs")
    g.add_argument("--size", help="node count range lo..hi")
    g.add_argument("--motif-size", type=int, help="planted motif size")
    g.add_argument("--base-size", type=int, help="base graph size (plant mode)")
    g.add_argument("--count", type=int, help="number of graphs (plant mode)")
    g.add_argument("--attach-edges", type=int, help="edges joining motif and base (plant mode)")
    g.add_argument("--out", help="output directory")
    _common(g)

    t = sub.add_parser("train", help="train the order-embedding encoder")
    t.add_argument("--batches", type=int, help="training batches")
    t.add_argument("--batch-size", type=int, help="pairs per batch (even)")
    t.add_argument("--margin", type=float, help="negative-pair margin")
    t.add_argument("--lr", type=float, help="Adam learning rate")
    t.add_argument("--eval-every", type=int, help="batches between held-out evaluations")
    t.add_argument("--holdout", type=int, help="held-out pair count")
    t.add_argument("--validation", type=int, help="threshold calibration pair count")
    t.add_argument("--hidden", type=int, help="hidden width")
    t.add_argument("--out", help="checkpoint path")
    _common(t)

    m = sub.add_parser("mine", help="search for frequent motifs in a target")
    m.add_argument("--target", help="edge-list file or directory of files")
    m.add_argument("--ckpt", help="trained checkpoint")
    m.add_argument("--k", type=int, help="largest motif size")
    m.add_argument("--strategy", choices=["greedy", "beam", "mcts"])
    m.add_argument("--seeds", type=int, help="walk seeds (greedy/beam)")
    m.add_argument("--simulations", type=int, help="MCTS simulation budget")
    m.add_argument("--beam", type=int, help="beam width")
    m.add_argument("--c", type=float, help="UCT exploration constant")
    m.add_argument("--index", type=int, help="number of indexed neighbourhoods")
    m.add_argument("--nbr-size", help="neighbourhood size range lo..hi")
    m.add_argument("--verify-limit", type=int, help="largest motif size counted exactly")
    m.add_argument("--top", type=int, help="motifs reported")
    m.add_argument("--out", help="report directory")
    _common(m)

    c = sub.add_parser("count", help="count k-node motifs with an exact or sampling method")
    c.add_argument("--target", help="edge-list file or directory of files")
    c.add_argument("--k", type=int, help="motif size")
    c.add_argument("--method", choices=["exact", "mfinder", "randesu"])
    c.add_argument("--samples", type=int, help="MFinder samples")
    c.add_argument("--tau", type=float, help="Rand-ESU sampling exponent")
    c.add_argument("--graph-level", action="store_const", const=True, default=None, help="unanchored motifs")
    c.add_argument("--out", help="CSV path (default stdout)")
    _common(c)

    r = sub.add_parser("repro", help="run a packaged experiment")
    r.add_argument("experiment", choices=["small-motifs", "planted", "large-motifs", "encoder"])
    r.add_argument("--out", help="run directory (overrides the config)")
    r.add_argument("--ckpt", help="encoder checkpoint (trained and saved there if missing)")
    r.add_argument("--timings", help="write per-stage wall-clock timings to this JSON file")
    _common(r)
    return parser


def resolve(section: str, args: argparse.Namespace) -> dict[str, Any]:
    """Defaults < JSON config < explicit flags."""
    opts = dict(DEFAULTS.get(section, {}))
    opts["seed"] = 0
    if args.config:
        opts.update(load_config(args.config))
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command", "mode", "verbose", "threads"):
            opts[key] = value
    return opts


def load_config(path: str) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def thread_count(args: argparse.Namespace) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("MOTIF_FORGE_THREADS"):
        try:
            n = int(os.environ["MOTIF_FORGE_THREADS"])
        except ValueError:
            raise UsageError("MOTIF_FORGE_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("thread count must be positive")
    return n


def load_target(path: Optional[str]) -> Graph:
    if not path:
        raise UsageError("--target is required")
    graphs = read_dataset(path)
    if not graphs:
        raise UsageError(f"target {path} is empty")
    target = disjoint_union(graphs) if len(graphs) > 1 else graphs[0]
    if target.n == 0:
        raise UsageError(f"target {path} is empty")
    return target


# -- subcommands ------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    if args.mode == "plant":
        o = resolve("plant", args)
        rng = spawn_rng(o["seed"])
        graphs, motif = plant_motif_dataset(o["motif_size"], o["base_size"], o["count"], rng, o["attach_edges"])
        out = Path(o["out"])
        write_dataset(graphs, out)
        write_edgelist(motif, out / PLANTED_FILE, f"seed {o['seed']}")
        print(f"wrote {len(graphs)} graphs of {o['base_size'] + o['motif_size']} nodes and planted.edgelist to {out}")
        return EXIT_OK
    o = resolve("gen", args)
    lo, hi = parse_range(str(o["size"]))
    try:
        cfg = GeneratorConfig(resolve_family(o["family"]) if o["family"] != "mixed" else "mixed", (lo, hi), o["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rng = spawn_rng(o["seed"])
    graphs = [generate(cfg, int(rng.integers(lo, hi + 1)), rng) for _ in range(o["n_graphs"])]
    out = Path(o["out"])
    write_dataset(graphs, out)
    (out.parent / f"{out.name}.stats.csv").write_text(f"# seed {o['seed']}\n" + statistics_csv(dataset_statistics(graphs)))
    print(f"wrote {len(graphs)} graphs to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    o = resolve("train", args)
    try:
        cfg = TrainConfig(
            batch_size=o["batch_size"],
            margin=o["margin"],
            lr=o["lr"],
            batches=o["batches"],
            seed=o["seed"],
            eval_every=o["eval_every"],
            holdout_pairs=o["holdout"],
            validation_pairs=o["validation"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = train(cfg, model_config=ModelConfig(hidden=o["hidden"]))
    save_training(result, cfg, o["out"])
    last = result.curve[-1]
    print(f"seed {cfg.seed}: held-out accuracy {last.holdout_acc:.4f} aupr {last.holdout_aupr:.4f} after {cfg.batches} batches")
    print(f"checkpoint written to {o['out']}")
    return EXIT_OK


def cmd_mine(args: argparse.Namespace) -> int:
    o = resolve("mine", args)
    target = load_target(o.get("target"))
    ckpt = o.get("ckpt")
    if not ckpt or not Path(ckpt).exists():
        raise UsageError(f"checkpoint {ckpt!r} not found; train one with 'motif-forge train'")
    model = EncoderModel.load(ckpt)
    seed = o["seed"]
    index = build_index(target, model, o["index"], parse_range(str(o["nbr_size"])), spawn_rng(seed, 1))
    rng = spawn_rng(seed, 2)
    strategy = o["strategy"]
    try:
        if strategy == "greedy":
            res = mine_greedy(target, model, index, o["k"], o["seeds"], rng)
        elif strategy == "beam":
            res = mine_beam(target, model, index, o["k"], o["beam"], o["seeds"], rng)
        elif strategy == "mcts":
            res = mine_mcts(target, model, index, o["k"], o["simulations"], o["c"], rng)
        else:
            raise UsageError(f"unknown strategy {strategy!r}")
    except NoSeedsError as exc:
        raise UsageError(str(exc)) from None
    groups = res.top(o["top"], o["k"])
    rows = report(groups, target, o["verify_limit"], model=model, index=index)
    out = Path(o["out"])
    write_report(rows, out)
    with open(out / "report.csv", "r+") as f:
        body = f.read()
        f.seek(0)
        f.write(f"# seed {seed} strategy {strategy} k {o['k']}\n" + body)
    print(f"wrote {len(rows)} motifs to {out / 'report.csv'}")
    return EXIT_OK


def cmd_count(args: argparse.Namespace) -> int:
    o = resolve("count", args)
    target = load_target(o.get("target"))
    anchored = not o["graph_level"]
    seed = o["seed"]
    rng = spawn_rng(seed)
    method = o["method"]
    if method == "exact":
        try:
            table = enumerate_exact(target, o["k"], anchored=anchored)
        except BudgetExceeded as exc:
            raise UsageError(f"{exc}; use --method mfinder or randesu for larger motifs") from None
    elif method == "mfinder":
        table = mine_mfinder(target, o["k"], o["samples"], rng, anchored=anchored)
    elif method == "randesu":
        table = mine_rand_esu(target, o["k"], o["tau"], rng)
    else:
        raise UsageError(f"unknown method {method!r}")
    text = table.to_csv(seed)
    if o.get("out"):
        Path(o["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(o["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


REPRO_NAMES = {
    "small-motifs": "small_motifs",
    "planted": "planted",
    "large-motifs": "large_motifs",
    "encoder": "encoder_validation",
}


def cmd_repro(args: argparse.Namespace) -> int:
    data: dict[str, Any] = {}
    if args.config:
        data = load_config(args.config)
    experiment = REPRO_NAMES[args.experiment]
    data.pop("experiment", None)
    for key, value in (("seed", args.seed), ("output_dir", args.out), ("checkpoint", args.ckpt)):
        if value is not None:
            data[key] = value
    data.setdefault("output_dir", f"runs/{experiment}")
    try:
        cfg = ExperimentConfig(experiment=experiment, **data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment config: {exc}") from None
    out = run_experiment(cfg, timing_out=args.timings)
    summary = (out / "summary.txt").read_text()
    sys.stdout.write(summary)
    print(f"seed {cfg.seed}: artifacts in {out}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "mine": cmd_mine, "count": cmd_count, "repro": cmd_repro}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    print(DESK_NOTE, file=sys.stderr)
    try:
        with threadpool_limits(limits=thread_count(args)):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"motif-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"motif-forge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ExperimentFailed as exc:
        print(f"motif-forge: {exc}", file=sys.stderr)
        cause = exc.__cause__
        if isinstance(cause, (TrainingDiverged, NonFiniteError, FloatingPointError)):
            return EXIT_NUMERIC
        return EXIT_IO if isinstance(cause, (OSError, EdgeListError)) else EXIT_USAGE
    except (OSError, EdgeListError) as exc:
        print(f"motif-forge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed input files surface here (parse errors, bad parameters)
        print(f"motif-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
