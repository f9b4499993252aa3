"""Experiment drivers and metrics: hit rate, frequency comparison, planted recovery, encoder validation."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .baselines import Classifier, MotifTable, enumerate_exact, mine_mfinder, mine_rand_esu
from .encoder import EncoderModel, EvalSet, TrainConfig, accuracy_at, aupr, calibrate, save_training, train
from .graph import (
    BudgetExceeded,
    Graph,
    anchored_frequency,
    disjoint_union,
    exact_isomorphic,
    graph_level_frequency,
    read_dataset,
    write_edgelist,
)
from .miner import MiningResult, build_index, mine_beam, mine_greedy, mine_mcts
from .synthgen import TrainingPair, dataset_pairs, plant_motif_dataset, random_graph, spawn_rng

log = logging.getLogger(__name__)

EXPERIMENTS = ("small_motifs", "planted", "large_motifs", "encoder_validation")
METHODS = ("spminer_greedy", "spminer_beam", "spminer_mcts", "mfinder", "randesu", "exact")


# -- metrics -----------------------------------------------------------------------


def hit_rate(predicted: Sequence[Graph], truth: Sequence[tuple[Graph, float]], r: int) -> float:
    """Fraction of the top-``r`` predictions found among the ground-truth top ``r``.

    ``truth`` is ranked by descending frequency. Motifs tied with the ``r``-th
    truth entry all count as hits. Matching is by isomorphism (anchors respected).
    """
    if r < 1:
        raise ValueError("rank must be positive")
    if r > len(truth):
        raise ValueError(f"rank {r} exceeds the {len(truth)} ground-truth motifs")
    cutoff = truth[r - 1][1]
    accepted = Classifier()
    for g, count in truth:
        if count >= cutoff:
            accepted.classify(_strip(g))
    hits = sum(1 for g in predicted[:r] if accepted.find(_strip(g)) is not None)
    return hits / r


def _strip(g: Graph) -> Graph:
    return Graph(g.n, g.edges, g.anchor)


def anchor_orbits(g: Graph) -> list[Graph]:
    """One anchored copy of ``g`` per anchor orbit, in node order of first appearance."""
    classifier = Classifier()
    out = []
    for a in range(g.n):
        before = len(classifier)
        classifier.classify(Graph(g.n, g.edges, a))
        if len(classifier) > before:
            out.append(classifier.reps[-1])
    return out


def best_anchored_frequency(g: Graph, target: Graph) -> int:
    """Anchored frequency; for an unanchored motif, the maximum over its anchor orbits."""
    if g.anchor is not None:
        return anchored_frequency(_strip(g), target)
    return max(anchored_frequency(a, target) for a in anchor_orbits(g))


def exact_frequencies(
    motifs: Sequence[Graph], target: Graph, graph_level: bool = False, budget: int = 2_000_000
) -> list[tuple[int, Optional[int]]]:
    out = []
    for m in motifs:
        a = anchored_frequency(m, target)
        g = None
        if graph_level:
            try:
                g = graph_level_frequency(m, target, budget=budget)
            except BudgetExceeded:
                g = None
        out.append((a, g))
    return out


@dataclass
class FrequencyRow:
    method: str
    size: int
    motifs: int
    median_anchored: float
    mean_anchored: float
    median_graph: Optional[float]
    mean_graph: Optional[float]
    verified: bool


def frequency_comparison(
    method_motifs: dict[str, dict[int, Sequence[Graph]]],
    target: Graph,
    verify_limit: int = 6,
    graph_level: bool = True,
    top: int = 10,
) -> list[FrequencyRow]:
    """Median/mean exact frequency of each method's top motifs, per size."""
    rows = []
    for method, by_size in method_motifs.items():
        for size in sorted(by_size):
            motifs = list(by_size[size])[:top]
            if size > verify_limit or not motifs:
                rows.append(FrequencyRow(method, size, len(motifs), float("nan"), float("nan"), None, None, False))
                continue
            freqs = exact_frequencies(motifs, target, graph_level)
            anchored = [a for a, _ in freqs]
            graph = [g for _, g in freqs if g is not None]
            complete = graph_level and len(graph) == len(freqs)
            rows.append(
                FrequencyRow(
                    method,
                    size,
                    len(motifs),
                    float(statistics.median(anchored)),
                    float(statistics.mean(anchored)),
                    float(statistics.median(graph)) if complete else None,
                    float(statistics.mean(graph)) if complete else None,
                    True,
                )
            )
    return rows


def frequency_csv(rows: Sequence[FrequencyRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "size", "motifs", "median_anchored", "mean_anchored", "median_graph", "mean_graph", "verified"])
    for r in rows:
        w.writerow(
            [
                r.method,
                r.size,
                r.motifs,
                _f(r.median_anchored),
                _f(r.mean_anchored),
                _f(r.median_graph),
                _f(r.mean_graph),
                int(r.verified),
            ]
        )
    return buf.getvalue()


def _f(x: Optional[float]) -> str:
    if x is None or x != x:
        return ""
    return f"{x:.4f}"


@dataclass
class Recovery:
    recovered: bool
    rank: Optional[int]
    anchored_frequency: Optional[int]
    graph_frequency: Optional[int]


def planted_recovery(
    found: Sequence[Graph], planted: Graph, target: Optional[Graph] = None, top: int = 10
) -> Recovery:
    """Whether a top-``top`` motif is isomorphic (ignoring anchors) to the planted motif."""
    plain = Graph(planted.n, planted.edges)
    for rank, g in enumerate(found[:top], 1):
        if exact_isomorphic(Graph(g.n, g.edges), plain):
            af = gf = None
            if target is not None:
                af = best_anchored_frequency(g, target)
                try:
                    gf = graph_level_frequency(plain, target, budget=2_000_000)
                except BudgetExceeded:
                    gf = None
            return Recovery(True, rank, af, gf)
    return Recovery(False, None, None, None)


@dataclass
class ValidationRow:
    model: str
    dataset: str
    accuracy: float
    aupr: float
    pairs: int


def encoder_validation(
    model: EncoderModel, pair_sets: dict[str, Sequence[TrainingPair]], name: str = "order_full"
) -> list[ValidationRow]:
    """Accuracy at the calibrated threshold and AUPR for each named balanced pair set."""
    if model.threshold is None:
        raise ValueError("model has no calibrated threshold")
    rows = []
    for dataset, pairs in pair_sets.items():
        ev = EvalSet(list(pairs))
        labels = ev.labels
        if labels.all() or not labels.any():
            raise ValueError(f"pair set {dataset!r} has a single class")
        pens = ev.penalties(model)
        rows.append(ValidationRow(name, dataset, accuracy_at(pens, labels, model.threshold), aupr(pens, labels), len(pairs)))
    return rows


def validation_csv(rows: Sequence[ValidationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "accuracy", "aupr", "pairs"])
    for r in rows:
        w.writerow([r.model, r.dataset, f"{r.accuracy:.4f}", f"{r.aupr:.4f}", r.pairs])
    return buf.getvalue()


# -- experiment runner ----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    output_dir: str = "runs/out"
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "graphs": 200, "size": [10, 20]})
    methods: list = field(default_factory=lambda: ["spminer_greedy", "mfinder", "exact"])
    params: dict = field(default_factory=dict)
    checkpoint: Optional[str] = None
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def param(self, name: str, default):
        return self.params.get(name, default)


def synthetic_target(seed: int, graphs: int, size: Sequence[int], family: str = "mixed") -> tuple[list[Graph], Graph]:
    rng = spawn_rng(seed, 10)
    lo, hi = size
    gs = [random_graph(int(rng.integers(lo, hi + 1)), rng, family) for _ in range(graphs)]
    return gs, disjoint_union(gs)


def load_target(config: ExperimentConfig) -> tuple[list[Graph], Graph]:
    ds = config.dataset
    if ds.get("kind", "synthetic") == "synthetic":
        return synthetic_target(config.seed, int(ds.get("graphs", 200)), ds.get("size", [10, 20]), ds.get("family", "mixed"))
    graphs = read_dataset(ds["path"])
    return graphs, disjoint_union(graphs)


def load_or_train_model(config: ExperimentConfig, log_stage: Callable[[str], None] = lambda s: None) -> EncoderModel:
    """Load ``config.checkpoint`` if present, otherwise train with ``config.train`` and save there."""
    path = Path(config.checkpoint) if config.checkpoint else None
    if path is not None and path.exists():
        return EncoderModel.load(path)
    tc = TrainConfig(**config.train)
    log_stage(f"training encoder for {tc.batches} batches")
    result = train(tc)
    if path is not None:
        save_training(result, tc, path)
    return result.model


def run_method(
    method: str,
    target: Graph,
    k: int,
    config: ExperimentConfig,
    model: Optional[EncoderModel],
    index=None,
    stream: int = 0,
) -> list[Graph]:
    """Ranked anchored motifs of size ``k`` produced by one method."""
    rng = spawn_rng(config.seed, 20, stream, k)
    if method == "exact":
        table = enumerate_exact(target, k, anchored=True)
        return [g for g, _ in table.anchored_ranking()]
    if method == "mfinder":
        table = mine_mfinder(target, k, int(config.param("mfinder_samples", 1000)), rng, anchored=True)
        return [e.graph for e in table.ranked()]
    if method == "randesu":
        # Rand-ESU ranks unanchored classes; each contributes its anchor orbits in place
        table = mine_rand_esu(target, k, float(config.param("tau", 2.3)), rng)
        return [a for e in table.ranked() for a in anchor_orbits(e.graph)]
    res = run_spminer(method, target, k, config, model, index, rng)
    return [g.graph for g in res.groups]


def run_spminer(method, target, k, config, model, index, rng) -> MiningResult:
    if method == "spminer_greedy":
        return mine_greedy(target, model, index, k, int(config.param("seeds", 1000)), rng)
    if method == "spminer_beam":
        return mine_beam(target, model, index, k, int(config.param("beam_width", 5)), int(config.param("seeds", 1000)), rng)
    if method == "spminer_mcts":
        return mine_mcts(
            target, model, index, k, int(config.param("simulations", 1000)), float(config.param("c", 0.7)), rng
        )
    raise ValueError(f"unknown SPMiner strategy {method!r}")


class StageLog:
    """Records stage outcomes for the manifest and wall-clock timings separately."""

    def __init__(self):
        self.stages: list[dict] = []
        self.timings: list[tuple[str, float]] = []

    def run(self, name: str, fn: Callable, *args, **kwargs):
        start = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:
            self.stages.append({"stage": name, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
            self.timings.append((name, time.perf_counter() - start))
            raise
        self.stages.append({"stage": name, "status": "ok"})
        elapsed = time.perf_counter() - start
        self.timings.append((name, elapsed))
        log.info("stage %s finished in %.1fs", name, elapsed)
        return out


class ExperimentFailed(RuntimeError):
    def __init__(self, manifest: Path, cause: Exception):
        super().__init__(f"experiment failed ({cause}); see {manifest}")
        self.manifest = manifest


def _write_motifs(out: Path, method: str, k: int, motifs: Sequence[Graph], top: int = 10) -> None:
    d = out / "motifs"
    d.mkdir(parents=True, exist_ok=True)
    for rank, g in enumerate(motifs[:top], 1):
        write_edgelist(_strip(g), d / f"{method}_k{k}_rank{rank:02d}.edgelist")


def run_experiment(config: ExperimentConfig, timing_out: Optional[str | Path] = None) -> Path:
    """Run one experiment end to end; returns the run directory.

    The directory holds ``manifest.json``, per-metric CSVs, ``summary.txt`` and
    ``motifs/``. Wall-clock timings are logged and, if ``timing_out`` is given,
    written there; they are kept out of the run directory so reruns are
    byte-identical.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = StageLog()
    summary: list[str] = []
    error: Optional[Exception] = None
    try:
        runner = _RUNNERS[config.experiment]
        runner(config, out, stages, summary)
    except Exception as exc:  # recorded in the manifest, then re-raised
        error = exc
    manifest = {
        "experiment": config.experiment,
        "seed": config.seed,
        "config": {
            "dataset": config.dataset,
            "methods": config.methods,
            "params": config.params,
            "checkpoint": config.checkpoint,
            "train": config.train,
        },
        "versions": {
            "motif_forge": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "stages": stages.stages,
        "status": "failed" if error else "ok",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    if timing_out is not None:
        Path(timing_out).write_text(
            json.dumps({name: round(t, 3) for name, t in stages.timings}, indent=2) + "\n"
        )
    if error is not None:
        raise ExperimentFailed(out / "manifest.json", error) from error
    return out


def _small_motifs(config: ExperimentConfig, out: Path, stages: StageLog, summary: list[str]) -> None:
    graphs, target = stages.run("load_target", load_target, config)
    ks = [int(k) for k in config.param("k", [4, 5])]
    ranks = [int(r) for r in config.param("ranks", [10])]
    needs_model = any(m.startswith("spminer") for m in config.methods)
    model = index = None
    if needs_model:
        model = stages.run("model", load_or_train_model, config)
        index = stages.run(
            "index",
            build_index,
            target,
            model,
            int(config.param("index_count", 10_000)),
            tuple(config.param("nbr_size", [20, 29])),
            spawn_rng(config.seed, 30),
        )
    truth: dict[int, list[tuple[Graph, float]]] = {}
    found: dict[str, dict[int, list[Graph]]] = {}
    for k in ks:
        table = stages.run(f"truth_k{k}", enumerate_exact, target, k, True)
        truth[k] = table.anchored_ranking()
        for i, method in enumerate(config.methods):
            motifs = stages.run(f"{method}_k{k}", run_method, method, target, k, config, model, index, i)
            found.setdefault(method, {})[k] = motifs
            _write_motifs(out, method, k, motifs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "size", "rank", "hit_rate"])
    for method, by_k in found.items():
        for k, motifs in by_k.items():
            for r in ranks:
                if r > len(truth[k]):
                    continue
                hr = hit_rate(motifs, truth[k], r)
                w.writerow([method, k, r, f"{hr:.4f}"])
                summary.append(f"{method} k={k} hit_rate@{r}={hr:.2f}")
    (out / "hit_rate.csv").write_text(buf.getvalue())
    rows = stages.run(
        "frequency_comparison",
        frequency_comparison,
        found,
        target,
        int(config.param("verify_limit", 6)),
        bool(config.param("graph_level", False)),
    )
    (out / "frequency_comparison.csv").write_text(frequency_csv(rows))
    truth_csv = io.StringIO()
    tw = csv.writer(truth_csv, lineterminator="\n")
    tw.writerow(["size", "rank", "canonical_key", "anchored_freq"])
    for k, ranking in truth.items():
        for rank, (g, c) in enumerate(ranking, 1):
            tw.writerow([k, rank, g.canonical_key().digest, int(c)])
    (out / "ground_truth.csv").write_text(truth_csv.getvalue())


def _planted(config: ExperimentConfig, out: Path, stages: StageLog, summary: list[str]) -> None:
    motif_size = int(config.param("motif_size", 6))
    base_size = int(config.param("base_size", 10))
    count = int(config.param("graph_count", 200))
    rng = spawn_rng(config.seed, 40)
    graphs, planted = stages.run("plant", plant_motif_dataset, motif_size, base_size, count, rng)
    target = disjoint_union(graphs)
    write_edgelist(planted, out / "planted.edgelist")
    model = index = None
    if any(m.startswith("spminer") for m in config.methods):
        model = stages.run("model", load_or_train_model, config)
        index = stages.run(
            "index",
            build_index,
            target,
            model,
            int(config.param("index_count", 10_000)),
            tuple(config.param("nbr_size", [20, 25])),
            spawn_rng(config.seed, 30),
        )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "k", "recovered", "rank", "anchored_freq", "graph_freq"])
    for i, method in enumerate(config.methods):
        motifs = stages.run(f"{method}_k{motif_size}", run_method, method, target, motif_size, config, model, index, i)
        _write_motifs(out, method, motif_size, motifs)
        rec = planted_recovery(motifs, planted, target)
        w.writerow(
            [
                method,
                motif_size,
                str(rec.recovered).lower(),
                "" if rec.rank is None else rec.rank,
                "" if rec.anchored_frequency is None else rec.anchored_frequency,
                "" if rec.graph_frequency is None else rec.graph_frequency,
            ]
        )
        summary.append(f"{method}: recovered={str(rec.recovered).lower()} rank={rec.rank}")
    (out / "planted_recovery.csv").write_text(buf.getvalue())


def _large_motifs(config: ExperimentConfig, out: Path, stages: StageLog, summary: list[str]) -> None:
    graphs, target = stages.run("load_target", load_target, config)
    ks = [int(k) for k in config.param("k", [6, 8, 10])]
    verify_limit = int(config.param("verify_limit", 6))
    model = index = None
    if any(m.startswith("spminer") for m in config.methods):
        model = stages.run("model", load_or_train_model, config)
        index = stages.run(
            "index",
            build_index,
            target,
            model,
            int(config.param("index_count", 10_000)),
            tuple(config.param("nbr_size", [20, 29])),
            spawn_rng(config.seed, 30),
        )
    found: dict[str, dict[int, list[Graph]]] = {}
    for i, method in enumerate(config.methods):
        if method == "exact":
            continue
        for k in ks:
            motifs = stages.run(f"{method}_k{k}", run_method, method, target, k, config, model, index, i)
            found.setdefault(method, {})[k] = motifs
            _write_motifs(out, method, k, motifs)
    rows = stages.run("frequency_comparison", frequency_comparison, found, target, verify_limit, False)
    (out / "frequency_comparison.csv").write_text(frequency_csv(rows))
    for r in rows:
        if r.verified:
            summary.append(f"{r.method} k={r.size} median_anchored={r.median_anchored:.1f}")


def _encoder_validation(config: ExperimentConfig, out: Path, stages: StageLog, summary: list[str]) -> None:
    model = stages.run("model", load_or_train_model, config)
    count = int(config.param("pairs", 2000))
    validation = EvalSet.generate(config.seed, 103, int(config.param("validation_pairs", 1000)))
    stages.run("calibrate", calibrate, model, validation)
    sets = {"synthetic": EvalSet.generate(config.seed, 102, count).pairs}
    if config.dataset.get("kind") == "dir":
        graphs = read_dataset(config.dataset["path"])
        name = config.dataset.get("name", Path(config.dataset["path"]).name)
        sets[name] = dataset_pairs(graphs, spawn_rng(config.seed, 104), count)
    rows = stages.run("validate", encoder_validation, model, sets)
    (out / "encoder_validation.csv").write_text(validation_csv(rows))
    for r in rows:
        summary.append(f"{r.dataset}: accuracy={r.accuracy:.4f} aupr={r.aupr:.4f}")


_RUNNERS = {
    "small_motifs": _small_motifs,
    "planted": _planted,
    "large_motifs": _large_motifs,
    "encoder_validation": _encoder_validation,
}
