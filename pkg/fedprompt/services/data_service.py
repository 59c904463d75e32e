"""Datasets: synthetic task, JSONL I/O, client partitioning and poisoning."""
import json
import logging
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import ValidationError

from fedprompt.core.errors import (
    InvalidInput,
    InvalidLabel,
    MissingFile,
    ParseError,
    PartitionError,
    PoisonError,
    TooManyClients,
)
from fedprompt.core.seeding import TAG_MALICIOUS, TAG_REDRAW, TAG_SHUFFLE, SeedLike, derive, make_rng
from fedprompt.models.dataset import Dataset, LabeledExample, Partition
from fedprompt.schemas.config import AttackSpec
from fedprompt.schemas.data import ExampleRecord, PartitionManifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAX_REDRAWS = 100

# Word pools of the synthetic sentiment task. Neither pool contains a
# default label word or the default trigger.
NEGATIVE_POOL = (
    "awful", "bad", "boring", "dull", "poor",
    "weak", "bland", "clumsy", "dreary", "tedious",
    "lifeless", "mediocre", "sloppy", "tired", "flat",
    "messy", "stale", "shallow", "annoying", "painful",
    "ugly", "worse", "worst", "waste", "mess",
    "failure", "disaster", "cliche", "hollow", "forgettable",
    "pointless", "lazy", "unfunny", "overlong", "confusing",
    "predictable", "grating", "sluggish", "muddled", "cheap",
    "crude", "inept", "joyless", "plodding", "tiresome",
    "dismal", "hackneyed", "lousy", "vapid", "dreadful",
)
POSITIVE_POOL = (
    "good", "wonderful", "brilliant", "charming", "delightful",
    "moving", "superb", "fresh", "funny", "clever",
    "beautiful", "stunning", "gripping", "witty", "warm",
    "touching", "vivid", "engaging", "lively", "elegant",
    "powerful", "heartfelt", "inventive", "joyful", "masterful",
    "memorable", "rich", "smart", "splendid", "thrilling",
    "tender", "sharp", "radiant", "graceful", "dazzling",
    "hilarious", "inspired", "lovely", "poignant", "riveting",
    "sincere", "sublime", "terrific", "uplifting", "vibrant",
    "enchanting", "excellent", "fantastic", "fun", "remarkable",
)
WORD_POOLS = (NEGATIVE_POOL, POSITIVE_POOL)


# --- synthetic task -----------------------------------------------------------

def gen_synthetic(
    seed: SeedLike,
    n: int,
    words_per_text: int,
    num_classes: int = 2,
    contamination: float = 0.1,
) -> Dataset:
    """Balanced two-class texts drawn from the class word pools.

    Each word comes from the example's own pool, except with probability
    `contamination` it comes from the other pool.
    """
    if n < 2 or words_per_text < 1:
        raise InvalidInput("Synthetic task needs n >= 2 and words_per_text >= 1")
    if num_classes != len(WORD_POOLS):
        raise InvalidInput(f"Synthetic task has exactly {len(WORD_POOLS)} classes")
    if not 0.0 <= contamination <= 1.0:
        raise InvalidInput("contamination must lie in [0, 1]")

    rng = make_rng(seed)
    labels = np.array([0] * math.ceil(n / 2) + [1] * (n // 2))
    labels = labels[rng.permutation(n)]
    flips = rng.random(size=(n, words_per_text)) < contamination
    picks = rng.integers(0, len(NEGATIVE_POOL), size=(n, words_per_text))

    examples = []
    for i, label in enumerate(labels):
        words = []
        for j in range(words_per_text):
            pool = WORD_POOLS[1 - label] if flips[i, j] else WORD_POOLS[label]
            words.append(pool[picks[i, j]])
        examples.append(LabeledExample(text=" ".join(words), label=int(label)))
    return Dataset(tuple(examples), num_classes)


# --- JSONL ----------------------------------------------------------------------

def load_jsonl(path: PathLike, num_classes: int = 2) -> Dataset:
    """
    Read a JSONL dataset of {"text", "label"} records.

    Args:
        path: File with one JSON object per line; blank lines are skipped
        num_classes: Labels must lie in [0, num_classes)

    Returns:
        The examples in file order

    Raises:
        MissingFile: If the file does not exist
        ParseError: If a line is not UTF-8, not JSON, or misses a field
        InvalidLabel: If a label is out of range
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"Dataset file not found: {path}")
    examples = []
    with path.open("rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(f"not valid UTF-8 ({e.reason})", line=line_no) from e
            if not line.strip():
                continue
            try:
                record = ExampleRecord.model_validate_json(line)
            except ValidationError as e:
                raise ParseError(e.errors()[0]["msg"], line=line_no) from e
            if not 0 <= record.label < num_classes:
                raise InvalidLabel(
                    f"line {line_no}: label {record.label} outside [0, {num_classes})"
                )
            examples.append(LabeledExample(text=record.text, label=record.label))
    return Dataset(tuple(examples), num_classes)


def save_jsonl(dataset: Dataset, path: PathLike) -> None:
    """
    Write a dataset as JSONL, creating parent directories.

    Args:
        dataset: Examples to write, in order
        path: Destination file; overwritten if present
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for ex in dataset:
            f.write(json.dumps({"text": ex.text, "label": ex.label}, ensure_ascii=False) + "\n")


# --- partitioning ------------------------------------------------------------------

def _check_clients(n: int, num_clients: int) -> None:
    if num_clients < 1:
        raise InvalidInput("Need at least one client")
    if num_clients > n:
        raise TooManyClients(f"{num_clients} clients but only {n} examples")


def _chunks(order: np.ndarray, counts: list[int]) -> tuple[tuple[int, ...], ...]:
    bounds = np.cumsum([0] + counts)
    return tuple(tuple(int(i) for i in order[bounds[k]:bounds[k + 1]]) for k in range(len(counts)))


def split_iid(dataset: Dataset, num_clients: int, seed: SeedLike) -> Partition:
    """Shuffle, then cut into near-equal chunks; the first n mod K are one larger."""
    n = len(dataset)
    _check_clients(n, num_clients)
    order = make_rng(seed).permutation(n)
    base, extra = divmod(n, num_clients)
    counts = [base + 1 if k < extra else base for k in range(num_clients)]
    return Partition(_chunks(order, counts), n)


def apportion(n: int, proportions: np.ndarray) -> list[int]:
    """Largest-remainder counts of n*q_k; ties go to the lower index."""
    raw = n * np.asarray(proportions, dtype=np.float64)
    base = np.floor(raw).astype(np.int64)
    remainder = int(n - base.sum())
    if remainder > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:remainder]] += 1
    return [int(c) for c in base]


def dirichlet_counts(n: int, num_clients: int, alpha: float, seed: SeedLike) -> list[int]:
    """Shard sizes from Dirichlet(alpha) proportions, redrawn while any is zero."""
    counts: Optional[list[int]] = None
    for attempt in range(MAX_REDRAWS + 1):
        rng = make_rng(seed if attempt == 0 else derive(seed, TAG_REDRAW, attempt))
        gammas = rng.gamma(alpha, 1.0, size=num_clients)
        total = gammas.sum()
        if not np.isfinite(total) or total <= 0:
            continue
        counts = apportion(n, gammas / total)
        if min(counts) >= 1:
            return counts

    logger.warning(f"Dirichlet split: {MAX_REDRAWS} redraws left empty shards, repairing")
    if counts is None:
        raise PartitionError(f"Dirichlet(alpha={alpha}) produced no usable draw")
    while min(counts) < 1:
        donor = int(np.argmax(counts))
        if counts[donor] <= 1:
            raise PartitionError("Cannot give every client an example")
        counts[donor] -= 1
        counts[counts.index(0)] += 1
    return counts


def split_dirichlet(dataset: Dataset, num_clients: int, alpha: float, seed: SeedLike) -> Partition:
    """Quantity-skew split: shard sizes ~ Dirichlet(alpha), examples assigned after a shuffle."""
    n = len(dataset)
    _check_clients(n, num_clients)
    if alpha <= 0:
        raise InvalidInput("alpha must be positive")
    counts = dirichlet_counts(n, num_clients, alpha, seed)
    order = make_rng(derive(seed, TAG_SHUFFLE)).permutation(n)
    return Partition(_chunks(order, counts), n)


def save_partition(partition: Partition, path: PathLike, alpha: Optional[float], seed: int) -> None:
    """
    Write a partition manifest.

    Args:
        partition: Client shards to record
        path: Destination JSON file
        alpha: Dirichlet concentration used, or None for an IID split
        seed: Seed the split was drawn with
    """
    manifest = PartitionManifest(
        alpha=alpha, seed=seed, shards=[list(s) for s in partition.shards]
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json() + "\n", encoding="utf-8")


def load_partition(path: PathLike, n: int) -> Partition:
    """
    Read a partition manifest and check it against a dataset size.

    Args:
        path: Manifest written by save_partition
        n: Size of the dataset the shards index into

    Returns:
        The partition

    Raises:
        MissingFile: If the manifest does not exist
        ParseError: If the manifest is not valid JSON of the right shape
        PartitionError: If the shards do not cover [0, n) exactly once
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"Partition manifest not found: {path}")
    try:
        manifest = PartitionManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ParseError(f"Bad partition manifest {path}: {e.errors()[0]['msg']}") from e
    return Partition(tuple(tuple(s) for s in manifest.shards), n)


# --- poisoning -----------------------------------------------------------------------

def _poisoned(example: LabeledExample, spec: AttackSpec) -> LabeledExample:
    return LabeledExample(text=f"{spec.trigger} {example.text}", label=spec.target_label)


def _check_target(dataset: Dataset, spec: AttackSpec) -> None:
    if not 0 <= spec.target_label < dataset.num_classes:
        raise InvalidLabel(f"Target label {spec.target_label} is not a valid class")


def poison_shard(shard: Dataset, spec: AttackSpec, seed: SeedLike) -> Dataset:
    """
    Clean shard plus ceil(lambda*n_k) triggered, relabeled copies.

    Copies are drawn only from examples whose label differs from the target,
    and are appended after the untouched clean examples.

    Args:
        shard: The client's clean examples
        spec: Trigger word, target label and poison rate
        seed: Seed for choosing which examples get copied

    Returns:
        A new dataset; the shard itself when the poison rate is 0

    Raises:
        PoisonError: If no example has a label other than the target
    """
    _check_target(shard, spec)
    if spec.poison_rate == 0:
        return shard
    eligible = [i for i, ex in enumerate(shard) if ex.label != spec.target_label]
    if not eligible:
        raise PoisonError("No example in the shard has a label other than the target")
    count = min(math.ceil(spec.poison_rate * len(shard) - 1e-9), len(eligible))
    chosen = sorted(int(i) for i in make_rng(seed).choice(eligible, size=count, replace=False))
    copies = tuple(_poisoned(shard[i], spec) for i in chosen)
    return Dataset(shard.examples + copies, shard.num_classes)


def make_poison_testset(clean_test: Dataset, spec: AttackSpec) -> Dataset:
    """Trigger every non-target example and relabel it; target examples are dropped."""
    _check_target(clean_test, spec)
    poisoned = tuple(_poisoned(ex, spec) for ex in clean_test if ex.label != spec.target_label)
    if not poisoned:
        raise PoisonError("Test set has no example that could witness the attack")
    return Dataset(poisoned, clean_test.num_classes)


def pick_malicious(num_clients: int, fraction: float, seed: SeedLike) -> tuple[int, ...]:
    """ceil(fraction*K) seeded distinct attacker ids, ascending."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInput("Malicious fraction must lie in [0, 1]")
    count = math.ceil(fraction * num_clients - 1e-9)
    if count <= 0:
        return ()
    chosen = make_rng(derive(seed, TAG_MALICIOUS)).choice(num_clients, size=count, replace=False)
    return tuple(sorted(int(k) for k in chosen))
