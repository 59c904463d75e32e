# Pydantic schemas
from .config import (
    AttackSpec,
    DataConfig,
    FedConfig,
    LdpSpec,
    ModelConfig,
    OptimizerConfig,
    ScreenSpec,
)
from .data import ExampleRecord, PartitionManifest
from .report import EvalReport, RoundRecord, RunSummary

__all__ = [
    "AttackSpec",
    "DataConfig",
    "FedConfig",
    "LdpSpec",
    "ModelConfig",
    "OptimizerConfig",
    "ScreenSpec",
    "ExampleRecord",
    "EvalReport",
    "PartitionManifest",
    "RoundRecord",
    "RunSummary",
]
