"""Frozen backbone: the seeded stand-in for a pre-trained masked LM."""
from dataclasses import dataclass

import numpy as np

# Serialization order of the weights; also the order they are drawn in.
WEIGHT_ORDER = ("embed", "pos", "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")


@dataclass(frozen=True, eq=False)
class FrozenBackbone:
    """Embedding table, one attention layer and one feed-forward layer.

    Arrays are made read-only at construction; nothing in the package
    ever writes to them.
    """
    embed: np.ndarray  # V x d
    pos: np.ndarray  # L_total x d
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray  # d x h
    b1: np.ndarray  # h
    w2: np.ndarray  # h x d
    b2: np.ndarray  # d

    def __post_init__(self) -> None:
        for name in WEIGHT_ORDER:
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def hidden(self) -> int:
        return self.embed.shape[1]

    @property
    def ffn(self) -> int:
        return self.w1.shape[1]

    @property
    def max_positions(self) -> int:
        return self.pos.shape[0]

    @property
    def num_scalars(self) -> int:
        return sum(getattr(self, name).size for name in WEIGHT_ORDER)

    def to_bytes(self) -> bytes:
        """Canonical serialization: float64 little-endian, fixed order."""
        return b"".join(
            getattr(self, name).astype("<f8").tobytes(order="C") for name in WEIGHT_ORDER
        )
