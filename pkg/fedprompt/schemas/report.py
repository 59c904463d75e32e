"""Schemas for round logs, evaluation results and partition manifests."""
from typing import Optional

from pydantic import BaseModel, Field, model_validator


class RoundRecord(BaseModel):
    """One line of the round log."""
    round: int
    participants: list[int]
    acc: float
    asr: Optional[float] = None
    upload_bytes: int
    download_bytes: int
    prompt_l2: float
    rejected: list[int] = Field(default_factory=list)
    malicious_asr: Optional[float] = None
    benign_asr: Optional[float] = None
    local_acc: Optional[float] = None
    clip_norm: Optional[float] = None
    laplace_b: Optional[float] = None
    screen_tau: Optional[float] = None


class EvalReport(BaseModel):
    """Clean accuracy and, when an attack is configured, attack success rate."""
    acc: float = Field(ge=0, le=1)
    asr: Optional[float] = Field(default=None, ge=0, le=1)
    n_clean: int = Field(ge=0)
    n_poison: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_counts(self) -> "EvalReport":
        if self.asr is None and self.n_poison:
            raise ValueError("n_poison given without an ASR")
        return self


class RunSummary(BaseModel):
    """Final numbers of a run, as printed by `report`."""
    rounds: int
    final_acc: float
    final_asr: Optional[float] = None
    upload_bytes: int
    download_bytes: int
    total_bytes: int
    prompt_params: float
    total_params: float
    comm_ratio: float
