"""Communication accounting."""
from dataclasses import dataclass, field

from fedprompt.core.errors import InvalidInput

BYTES_PER_SCALAR = 8


def comm_ratio(prompt_params: float, total_params: float) -> float:
    """Share of a full-model exchange that the prompt exchange costs."""
    if prompt_params <= 0 or total_params <= 0:
        raise InvalidInput("Parameter counts must be positive")
    if prompt_params > total_params:
        raise InvalidInput("Prompt parameters cannot exceed the total")
    return prompt_params / total_params


@dataclass(frozen=True)
class RoundComm:
    round: int
    participants: tuple[int, ...]
    upload_scalars: int
    download_scalars: int

    @property
    def upload_bytes(self) -> int:
        return self.upload_scalars * BYTES_PER_SCALAR

    @property
    def download_bytes(self) -> int:
        return self.download_scalars * BYTES_PER_SCALAR

    @property
    def total_bytes(self) -> int:
        return self.upload_bytes + self.download_bytes


@dataclass
class CommLedger:
    """Per-round scalars sent each way, plus the one-time backbone hand-out.

    Cumulative upload/download totals cover rounds only; the backbone is
    kept apart because it is distributed once before round 0.
    """
    rounds: list[RoundComm] = field(default_factory=list)
    backbone_scalars: int = 0

    def record_backbone(self, scalars: int) -> None:
        if self.backbone_scalars:
            raise InvalidInput("Backbone distribution is recorded once per run")
        self.backbone_scalars = scalars

    def record_round(
        self,
        round_num: int,
        participants: tuple[int, ...],
        upload_scalars: int,
        download_scalars: int,
    ) -> RoundComm:
        entry = RoundComm(round_num, tuple(participants), upload_scalars, download_scalars)
        self.rounds.append(entry)
        return entry

    @property
    def backbone_bytes(self) -> int:
        return self.backbone_scalars * BYTES_PER_SCALAR

    @property
    def upload_bytes(self) -> int:
        return sum(r.upload_bytes for r in self.rounds)

    @property
    def download_bytes(self) -> int:
        return sum(r.download_bytes for r in self.rounds)

    @property
    def total_bytes(self) -> int:
        """Everything that crossed the wire, backbone included."""
        return self.upload_bytes + self.download_bytes + self.backbone_bytes
