# Domain entities
from .backbone import FrozenBackbone
from .dataset import Dataset, LabeledExample, Partition
from .prompt import PromptTensor
from .vocab import TemplatedSeq, Verbalizer, Vocab

__all__ = [
    "FrozenBackbone",
    "Dataset",
    "LabeledExample",
    "Partition",
    "PromptTensor",
    "TemplatedSeq",
    "Verbalizer",
    "Vocab",
]
