"""Schemas for dataset lines and partition manifests."""
from typing import Optional

from pydantic import BaseModel, StrictInt, StrictStr, field_validator


class ExampleRecord(BaseModel):
    """One JSONL dataset line: {"text": str, "label": int}."""
    text: StrictStr
    label: StrictInt

    @field_validator("text")
    @classmethod
    def validate_text(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("text is empty")
        return v


class PartitionManifest(BaseModel):
    """Partition manifest file: {"alpha", "seed", "shards"}."""
    alpha: Optional[float] = None
    seed: int
    shards: list[list[int]]
