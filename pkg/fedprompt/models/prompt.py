"""Soft-prompt parameters and their binary encodings."""
import struct
from dataclasses import dataclass

import numpy as np

from fedprompt.core.errors import NumericalError, ParseError

CHECKPOINT_MAGIC = b"FPPT"
CHECKPOINT_VERSION = 1
_DIMS = struct.Struct("<II")


@dataclass(frozen=True, eq=False)
class PromptTensor:
    """The m x d soft-prompt matrix P; the only parameters that travel."""
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Prompt must be a non-empty m x d matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericalError("Prompt contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def num_params(self) -> int:
        return self.values.size

    def l2(self) -> float:
        return float(np.linalg.norm(self.values))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PromptTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.to_payload())

    def to_payload(self) -> bytes:
        """m, d as u32 LE, then m*d float64 LE values, row-major."""
        return _DIMS.pack(self.m, self.d) + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_payload(cls, payload: bytes) -> "PromptTensor":
        if len(payload) < _DIMS.size:
            raise ParseError(f"Prompt payload too short ({len(payload)} bytes)")
        m, d = _DIMS.unpack_from(payload)
        expected = _DIMS.size + 8 * m * d
        if len(payload) != expected:
            raise ParseError(f"Prompt payload is {len(payload)} bytes, expected {expected}")
        values = np.frombuffer(payload, dtype="<f8", offset=_DIMS.size).reshape(m, d)
        return cls(values.astype(np.float64))

    def to_checkpoint(self) -> bytes:
        return CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION]) + self.to_payload()

    @classmethod
    def from_checkpoint(cls, data: bytes) -> "PromptTensor":
        if data[:4] != CHECKPOINT_MAGIC:
            raise ParseError("Not a prompt checkpoint (bad magic)")
        if len(data) < 5 or data[4] != CHECKPOINT_VERSION:
            raise ParseError("Unsupported prompt checkpoint version")
        return cls.from_payload(data[5:])
