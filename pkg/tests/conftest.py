import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest

from motif_forge.graph import Graph
from motif_forge.synthgen import random_graph, spawn_rng


def path(n, anchor=None):
    return Graph(n, [(i, i + 1) for i in range(n - 1)], anchor)


def cycle(n, anchor=None):
    return Graph(n, [(i, (i + 1) % n) for i in range(n)], anchor)


def complete(n, anchor=None):
    return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)], anchor)


def star(leaves, anchor=None):
    return Graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)], anchor)


def corpus(count=50, max_nodes=12, seed=2024):
    """Seed-pinned mixed-family fixture graphs with 4..max_nodes nodes."""
    rng = spawn_rng(seed, 77)
    return [random_graph(int(rng.integers(4, max_nodes + 1)), rng) for _ in range(count)]


@pytest.fixture(scope="session")
def fixture_corpus():
    return corpus()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def census_mismatches(target, k):
    """Differences between the exact census and the brute-force census (empty when they agree)."""
    from motif_forge.baselines import enumerate_exact, naive_enumerate

    table = enumerate_exact(target, k, anchored=True)
    naive = naive_enumerate(target, k)
    problems = []
    if len(table.entries) != len(naive):
        problems.append(f"{len(table.entries)} classes vs {len(naive)}")
    for rep, count, orbits in naive:
        entry = table.lookup(rep)
        if entry is None:
            problems.append(f"missing class {sorted(rep.edges)}")
            continue
        if entry.count != count:
            problems.append(f"count {entry.count} vs {count} for {sorted(rep.edges)}")
        want = {rep.with_anchor(pos).canonical_key().digest: freq for pos, freq in orbits.items()}
        if entry.anchored_counts != want:
            problems.append(f"anchored counts {entry.anchored_counts} vs {want}")
    return problems


ROOT = Path(__file__).resolve().parent.parent
DESK_CONFIG = ROOT / "configs" / "desk.json"
DESK_CKPT = ROOT / "artifacts" / "desk.ckpt"


def _desk_is_current() -> bool:
    from motif_forge.autodiff import load_tensors
    from motif_forge.encoder import TrainConfig

    if not DESK_CKPT.exists():
        return False
    _, meta = load_tensors(DESK_CKPT)
    want = json.loads(DESK_CONFIG.read_text())
    have = meta.get("train", {})
    expected = TrainConfig(
        batch_size=want["batch_size"], margin=want["margin"], lr=want["lr"], batches=want["batches"],
        seed=want["seed"], eval_every=want["eval_every"], holdout_pairs=want["holdout"], validation_pairs=want["validation"],
    )
    return have == asdict(expected) and meta.get("model", {}).get("hidden") == want["hidden"]


@pytest.fixture(scope="session")
def desk_checkpoint():
    """Path of the desk-scale checkpoint, trained (about an hour on one core) when missing or stale."""
    from motif_forge.cli import main

    if not _desk_is_current():
        assert main(["train", "--config", str(DESK_CONFIG), "--out", str(DESK_CKPT)]) == 0
    return DESK_CKPT


@pytest.fixture(scope="session")
def desk_model(desk_checkpoint):
    from motif_forge.encoder import EncoderModel

    return EncoderModel.load(desk_checkpoint)
