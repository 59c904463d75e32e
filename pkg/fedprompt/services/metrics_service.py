"""Evaluation (ACC / ASR), round logs and run reports."""
import csv
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from fedprompt.core.errors import InvalidInput, MissingFile, ParseError
from fedprompt.models.backbone import FrozenBackbone
from fedprompt.models.dataset import Dataset
from fedprompt.models.prompt import PromptTensor
from fedprompt.models.vocab import TemplatedSeq, Verbalizer
from fedprompt.schemas.report import EvalReport, RoundRecord, RunSummary
from fedprompt.services import model_service
from fedprompt.services.ledger import comm_ratio

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CSV_COLUMNS = [
    "round",
    "acc",
    "asr",
    "local_acc",
    "malicious_asr",
    "benign_asr",
    "upload_bytes",
    "download_bytes",
    "total_bytes",
    "prompt_l2",
]


def accuracy_of(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of predictions equal to their label."""
    if len(labels) == 0:
        raise InvalidInput("Cannot evaluate an empty set")
    if len(predictions) != len(labels):
        raise InvalidInput("Predictions and labels differ in length")
    return float(np.mean(np.asarray(predictions) == np.asarray(labels)))


def asr_of(predictions: Sequence[int], target: int) -> float:
    """Fraction of triggered examples classified as the attacker's target."""
    if len(predictions) == 0:
        raise InvalidInput("Cannot evaluate an empty poison set")
    return float(np.mean(np.asarray(predictions) == target))


def encode_texts(dataset: Dataset, backbone: FrozenBackbone, verbalizer: Verbalizer, m: int) -> list[TemplatedSeq]:
    max_len = model_service.max_text_len(backbone, m)
    return [
        model_service.apply_template(model_service.tokenize(ex.text, verbalizer.vocab, max_len), m)
        for ex in dataset
    ]


def eval_acc(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    verbalizer: Verbalizer,
    clean_test: Dataset,
) -> float:
    """Clean accuracy of a prompt on the held-out set.

    Args:
        backbone: Frozen model the prompt is prepended to
        prompt: Soft prompt to score
        verbalizer: Label words mapping vocabulary scores to classes
        clean_test: Held-out examples with their true labels

    Returns:
        Fraction of examples whose predicted class equals the label

    Raises:
        InvalidInput: If the clean test set is empty
    """
    if len(clean_test) == 0:
        raise InvalidInput("Clean test set is empty")
    seqs = encode_texts(clean_test, backbone, verbalizer, prompt.m)
    preds = model_service.predict_many(backbone, prompt, seqs, verbalizer)
    return accuracy_of(preds, [ex.label for ex in clean_test])


def eval_asr(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    verbalizer: Verbalizer,
    poison_test: Dataset,
    target: int,
) -> float:
    """Fraction of triggered examples the prompt sends to `target`.

    Args:
        poison_test: Triggered examples, all relabelled to `target`
        target: Class the attacker wants

    Raises:
        InvalidInput: If the poison set is empty
    """
    if len(poison_test) == 0:
        raise InvalidInput("Poison test set is empty")
    seqs = encode_texts(poison_test, backbone, verbalizer, prompt.m)
    preds = model_service.predict_many(backbone, prompt, seqs, verbalizer)
    return asr_of(preds, target)


class Evaluator:
    """Encodes the held-out sets once and scores any prompt against them."""

    def __init__(
        self,
        backbone: FrozenBackbone,
        verbalizer: Verbalizer,
        m: int,
        clean_test: Dataset,
        poison_test: Optional[Dataset] = None,
        target: Optional[int] = None,
    ):
        if len(clean_test) == 0:
            raise InvalidInput("Clean test set is empty")
        if poison_test is not None and target is None:
            raise InvalidInput("A poison test set needs a target label")
        self.backbone = backbone
        self.verbalizer = verbalizer
        self.target = target
        self._clean = encode_texts(clean_test, backbone, verbalizer, m)
        self._labels = [ex.label for ex in clean_test]
        self._poison = encode_texts(poison_test, backbone, verbalizer, m) if poison_test else None

    def acc(self, prompt: PromptTensor) -> float:
        preds = model_service.predict_many(self.backbone, prompt, self._clean, self.verbalizer)
        return accuracy_of(preds, self._labels)

    def asr(self, prompt: PromptTensor) -> Optional[float]:
        if self._poison is None:
            return None
        preds = model_service.predict_many(self.backbone, prompt, self._poison, self.verbalizer)
        return asr_of(preds, self.target)

    def evaluate(self, prompt: PromptTensor) -> EvalReport:
        return EvalReport(
            acc=self.acc(prompt),
            asr=self.asr(prompt),
            n_clean=len(self._clean),
            n_poison=len(self._poison) if self._poison is not None else 0,
        )


def evaluate(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    verbalizer: Verbalizer,
    clean_test: Dataset,
    poison_test: Optional[Dataset] = None,
    target: Optional[int] = None,
) -> EvalReport:
    return Evaluator(backbone, verbalizer, prompt.m, clean_test, poison_test, target).evaluate(prompt)


# --- round logs & reports -----------------------------------------------------------

def write_round_log(records: Iterable[RoundRecord], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")


def read_round_log(path: PathLike) -> list[RoundRecord]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"Round log not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(RoundRecord.model_validate_json(line))
            except ValidationError as e:
                raise ParseError(e.errors()[0]["msg"], line=line_no) from e
    return records


def _blank(value: Optional[float]) -> Union[float, str]:
    return "" if value is None else value


def write_csv(records: Sequence[RoundRecord], path: PathLike) -> None:
    """Per-round ACC/ASR/bytes, one row per round, for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([
                r.round,
                r.acc,
                _blank(r.asr),
                _blank(r.local_acc),
                _blank(r.malicious_asr),
                _blank(r.benign_asr),
                r.upload_bytes,
                r.download_bytes,
                r.upload_bytes + r.download_bytes,
                r.prompt_l2,
            ])


def summarize(records: Sequence[RoundRecord], prompt_params: float, total_params: float) -> RunSummary:
    """Final ACC/ASR and total traffic of a run, with its communication ratio."""
    if not records:
        raise InvalidInput("Round log is empty")
    last = records[-1]
    upload = sum(r.upload_bytes for r in records)
    download = sum(r.download_bytes for r in records)
    return RunSummary(
        rounds=len(records),
        final_acc=last.acc,
        final_asr=last.asr,
        upload_bytes=upload,
        download_bytes=download,
        total_bytes=upload + download,
        prompt_params=prompt_params,
        total_params=total_params,
        comm_ratio=comm_ratio(prompt_params, total_params),
    )


def format_summary(summary: RunSummary) -> str:
    rows = [
        ("rounds", str(summary.rounds)),
        ("final ACC", f"{summary.final_acc:.4f}"),
        ("final ASR", "-" if summary.final_asr is None else f"{summary.final_asr:.4f}"),
        ("upload bytes", str(summary.upload_bytes)),
        ("download bytes", str(summary.download_bytes)),
        ("total bytes", str(summary.total_bytes)),
        ("prompt params", f"{summary.prompt_params:g}"),
        ("full-model params", f"{summary.total_params:g}"),
        ("comm ratio", f"{summary.comm_ratio * 100:.4f}%"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
