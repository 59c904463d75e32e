"""Labeled examples, datasets and client partitions."""
from dataclasses import dataclass

from fedprompt.core.errors import InvalidInput, InvalidLabel, PartitionError


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int


@dataclass(frozen=True)
class Dataset:
    """Ordered examples; order is part of a dataset's identity."""
    examples: tuple[LabeledExample, ...]
    num_classes: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "examples", tuple(self.examples))
        for i, ex in enumerate(self.examples):
            if not ex.text.strip():
                raise InvalidInput(f"Example {i} has empty text")
            if not 0 <= ex.label < self.num_classes:
                raise InvalidLabel(
                    f"Example {i} has label {ex.label}, expected [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i: int) -> LabeledExample:
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)

    def subset(self, indices) -> "Dataset":
        return Dataset(tuple(self.examples[i] for i in indices), self.num_classes)

    def label_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for ex in self.examples:
            counts[ex.label] += 1
        return counts


@dataclass(frozen=True)
class Partition:
    """K shards of example indices into a parent dataset of size n."""
    shards: tuple[tuple[int, ...], ...]
    n: int

    def __post_init__(self) -> None:
        shards = tuple(tuple(int(i) for i in s) for s in self.shards)
        object.__setattr__(self, "shards", shards)
        if not shards:
            raise PartitionError("Partition has no shards")
        if any(len(s) == 0 for s in shards):
            raise PartitionError("Every shard needs at least one example")
        flat = sorted(i for s in shards for i in s)
        if flat != list(range(self.n)):
            raise PartitionError("Shards must be disjoint and cover every index exactly once")

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.shards]

    def shard(self, dataset: Dataset, k: int) -> Dataset:
        if not 0 <= k < self.num_clients:
            raise InvalidInput(f"Client {k} outside [0, {self.num_clients})")
        return dataset.subset(self.shards[k])
