"""Federated prompt tuning: client sampling, client rounds, prompt-only FedAvg.

Only the soft prompt is trained and exchanged. The backbone is built once
from its seed and handed to every client before round 0.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Protocol, Sequence

import numpy as np

from fedprompt.core.config import get_settings
from fedprompt.core.errors import (
    ClientFailure,
    ConfigError,
    NumericalError,
    ProtocolError,
)
from fedprompt.core.seeding import TAG_NOISE, TAG_POISON, TAG_SELECT, TAG_TRAIN, derive, make_rng
from fedprompt.models.backbone import FrozenBackbone
from fedprompt.models.dataset import Dataset, Partition
from fedprompt.models.prompt import PromptTensor
from fedprompt.models.vocab import Verbalizer, Vocab
from fedprompt.schemas.config import FedConfig
from fedprompt.schemas.report import RoundRecord
from fedprompt.services import data_service, model_service
from fedprompt.services.ledger import CommLedger, comm_ratio
from fedprompt.services.metrics_service import Evaluator
from fedprompt.services.privacy_service import add_laplace, screen_updates

logger = logging.getLogger(__name__)

__all__ = [
    "ClientUpdateMsg",
    "GlobalState",
    "InProcessExecutor",
    "Runtime",
    "TrainingResult",
    "aggregate",
    "build_datasets",
    "build_runtime",
    "client_round",
    "comm_ratio",
    "run_centralized",
    "run_training",
    "select_clients",
]


@dataclass(frozen=True)
class ClientUpdateMsg:
    """What a client uploads after local training."""
    round: int
    client_id: int
    n_k: int
    prompt: PromptTensor

    def __post_init__(self) -> None:
        if self.n_k < 1:
            raise ProtocolError(f"Client {self.client_id} reported n_k={self.n_k}")


@dataclass(frozen=True)
class Runtime:
    """Everything a participant rebuilds from the config's seeds."""
    backbone: FrozenBackbone
    verbalizer: Verbalizer
    initial_prompt: PromptTensor


@dataclass
class GlobalState:
    round: int
    prompt: PromptTensor
    backbone: FrozenBackbone
    records: list[RoundRecord] = field(default_factory=list)


class TrainingResult(NamedTuple):
    prompt: PromptTensor
    records: list[RoundRecord]
    ledger: CommLedger


def build_runtime(cfg: FedConfig) -> Runtime:
    mc = cfg.model
    backbone = model_service.init_backbone(
        cfg.backbone_seed_value, mc.vocab_size, mc.hidden, mc.ffn, mc.total_len
    )
    verbalizer = Verbalizer.from_lists(mc.label_words, Vocab(mc.vocab_size))
    prompt = model_service.init_prompt(cfg.prompt_seed_value, mc.prompt_len, mc.hidden)
    return Runtime(backbone, verbalizer, prompt)


def build_datasets(cfg: FedConfig) -> tuple[Dataset, Dataset, Partition]:
    """Load or generate train/test data, then load or compute the client split."""
    dc = cfg.data
    num_classes = cfg.model.num_classes
    if dc.train_path:
        if not dc.test_path:
            raise ConfigError("train_path given without test_path")
        train = data_service.load_jsonl(dc.train_path, num_classes)
        test = data_service.load_jsonl(dc.test_path, num_classes)
    else:
        train = data_service.gen_synthetic(
            dc.data_seed, dc.n_train, dc.words_per_text, num_classes, dc.contamination
        )
        test = data_service.gen_synthetic(
            (dc.data_seed, 1), dc.n_test, dc.words_per_text, num_classes, dc.contamination
        )

    if dc.partition_path:
        partition = data_service.load_partition(dc.partition_path, len(train))
        if partition.num_clients != cfg.clients:
            raise ProtocolError(
                f"Partition has {partition.num_clients} shards, config has {cfg.clients} clients"
            )
    elif cfg.alpha is None:
        partition = data_service.split_iid(train, cfg.clients, cfg.seed)
    else:
        partition = data_service.split_dirichlet(train, cfg.clients, cfg.alpha, cfg.seed)
    return train, test, partition


# --- protocol steps --------------------------------------------------------

def select_clients(t: int, num_clients: int, fraction: float, seed: int) -> tuple[int, ...]:
    """ceil(C*K) distinct ids by a seeded partial Fisher-Yates shuffle, ascending."""
    if num_clients < 1 or not 0 < fraction <= 1:
        raise ConfigError("Need K >= 1 and C in (0, 1]")
    count = max(1, math.ceil(fraction * num_clients - 1e-9))
    rng = make_rng(derive(seed, TAG_SELECT, t))
    ids = list(range(num_clients))
    for i in range(count):
        j = int(rng.integers(i, num_clients))
        ids[i], ids[j] = ids[j], ids[i]
    return tuple(sorted(ids[:count]))


def client_round(
    k: int,
    t: int,
    global_prompt: PromptTensor,
    shard: Dataset,
    cfg: FedConfig,
    backbone: FrozenBackbone,
    verbalizer: Verbalizer,
) -> ClientUpdateMsg:
    """Local training on the client's shard (poisoned if k is an attacker).

    Args:
        k: Client id
        t: Round number, mixed into the training and noise seeds
        global_prompt: Prompt broadcast by the server this round
        shard: The client's clean training examples

    Returns:
        The update to upload, noised when LDP is configured
    """
    local = shard
    if cfg.attack is not None and k in cfg.attack.malicious_clients:
        local = data_service.poison_shard(shard, cfg.attack, derive(cfg.seed, TAG_POISON, k))

    prompt = model_service.local_train(
        local,
        global_prompt,
        backbone,
        verbalizer,
        steps=cfg.local_steps,
        batch=cfg.batch,
        optimizer=cfg.optimizer,
        seed=derive(cfg.seed, TAG_TRAIN, t, k),
        ldp=cfg.ldp,
    )
    if cfg.ldp is not None and cfg.ldp.laplace_scale > 0:
        prompt = add_laplace(
            prompt, cfg.ldp.laplace_scale, derive(cfg.ldp.noise_seed, TAG_NOISE, t, k)
        )
    return ClientUpdateMsg(round=t, client_id=k, n_k=len(local), prompt=prompt)


def aggregate(updates: Sequence[ClientUpdateMsg]) -> PromptTensor:
    """Weighted mean of the uploaded prompts, summed in ascending client id.

    Args:
        updates: One message per participating client, all for the same round

    Returns:
        Sum of n_k / n * prompt_k over the updates

    Raises:
        ProtocolError: On an empty round or inconsistent ids, rounds or shapes
        NumericalError: If any uploaded prompt holds NaN or infinity
    """
    if not updates:
        raise ProtocolError("Nothing to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    first = ordered[0]
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"Duplicate client ids in round {first.round}: {ids}")
    for u in ordered:
        if u.prompt.shape != first.prompt.shape:
            raise ProtocolError(
                f"Client {u.client_id} sent shape {u.prompt.shape}, expected {first.prompt.shape}"
            )
        if u.round != first.round:
            raise ProtocolError(f"Client {u.client_id} sent round {u.round}, expected {first.round}")
        if not np.all(np.isfinite(u.prompt.values)):
            raise NumericalError(f"Client {u.client_id} sent non-finite values")

    if all(u.prompt == first.prompt for u in ordered[1:]):
        return first.prompt

    total = sum(u.n_k for u in ordered)
    acc = np.zeros(first.prompt.shape)
    for u in ordered:
        acc += (u.n_k / total) * u.prompt.values
    return PromptTensor(acc)


# --- executors -------------------------------------------------------------

class ClientExecutor(Protocol):
    def run_round(
        self, t: int, client_ids: Sequence[int], global_prompt: PromptTensor
    ) -> list[ClientUpdateMsg]:
        ...


class InProcessExecutor:
    """Runs the selected clients' rounds on a thread pool in this process."""

    def __init__(
        self,
        cfg: FedConfig,
        runtime: Runtime,
        train: Dataset,
        partition: Partition,
        workers: Optional[int] = None,
    ):
        self.cfg = cfg
        self.runtime = runtime
        self.shards = [partition.shard(train, k) for k in range(partition.num_clients)]
        self.workers = workers or get_settings().WORKERS

    def run_round(
        self, t: int, client_ids: Sequence[int], global_prompt: PromptTensor
    ) -> list[ClientUpdateMsg]:
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = [
                (k, pool.submit(
                    client_round, k, t, global_prompt, self.shards[k], self.cfg,
                    self.runtime.backbone, self.runtime.verbalizer,
                ))
                for k in client_ids
            ]
            updates = []
            for k, future in futures:
                try:
                    updates.append(future.result())
                except Exception as e:
                    for _, pending in futures:
                        pending.cancel()
                    raise ClientFailure(t, k, e) from e
        return updates


# --- server loop -----------------------------------------------------------

def _check_round(t: int, selected: Sequence[int], updates: Sequence[ClientUpdateMsg]) -> None:
    got = sorted(u.client_id for u in updates)
    if got != sorted(selected):
        raise ProtocolError(f"Round {t}: expected updates from {list(selected)}, got {got}")
    for u in updates:
        if u.round != t:
            raise ProtocolError(f"Round {t}: client {u.client_id} answered for round {u.round}")


def run_training(
    cfg: FedConfig,
    datasets: tuple[Dataset, Dataset],
    partition: Partition,
    executor: Optional[ClientExecutor] = None,
    runtime: Optional[Runtime] = None,
    communicate: bool = True,
) -> TrainingResult:
    """Run T rounds of select, distribute, train, screen, aggregate, evaluate.

    Args:
        cfg: Experiment configuration
        datasets: Training set and clean held-out set
        partition: One shard of training indices per client
        executor: Where client rounds run; defaults to a local thread pool
        runtime: Prebuilt backbone, verbalizer and initial prompt
        communicate: False for centralized runs, which log no traffic

    Returns:
        Final prompt, one RoundRecord per round and the communication ledger

    Raises:
        ProtocolError: If the partition does not match cfg.clients or a round
            comes back incomplete
        ClientFailure: If a client's local round raises
    """
    train, test = datasets
    if partition.num_clients != cfg.clients:
        raise ProtocolError(
            f"Partition has {partition.num_clients} shards, config has {cfg.clients} clients"
        )
    if partition.n != len(train):
        raise ProtocolError(f"Partition covers {partition.n} examples, dataset has {len(train)}")

    runtime = runtime or build_runtime(cfg)
    if executor is None:
        executor = InProcessExecutor(cfg, runtime, train, partition)

    attack = cfg.attack
    poison_test = data_service.make_poison_testset(test, attack) if attack else None
    evaluator = Evaluator(
        runtime.backbone,
        runtime.verbalizer,
        cfg.model.prompt_len,
        test,
        poison_test,
        attack.target_label if attack else None,
    )

    ledger = CommLedger()
    if communicate:
        ledger.record_backbone(model_service.param_count(runtime.backbone))
    ldp = cfg.ldp
    logger.info(
        f"Training: K={cfg.clients} C={cfg.fraction} T={cfg.rounds} E'={cfg.local_steps} "
        f"B={cfg.batch} m={cfg.model.prompt_len} "
        f"ldp={'off' if ldp is None else f'clip={ldp.clip_norm} b={ldp.laplace_scale}'} "
        f"screen={'off' if cfg.screen is None else f'tau={cfg.screen.mad_threshold}'}"
    )

    state = GlobalState(round=0, prompt=runtime.initial_prompt, backbone=runtime.backbone)
    scalars = state.prompt.num_params
    malicious = set(attack.malicious_clients) if attack else set()

    for t in range(cfg.rounds):
        state.round = t
        selected = select_clients(t, cfg.clients, cfg.fraction, cfg.seed)
        updates = sorted(
            executor.run_round(t, selected, state.prompt), key=lambda u: u.client_id
        )
        _check_round(t, selected, updates)

        local_acc = _mean([evaluator.acc(u.prompt) for u in updates])
        malicious_asr = benign_asr = None
        if poison_test is not None:
            scores = {u.client_id: evaluator.asr(u.prompt) for u in updates}
            bad = [s for k, s in scores.items() if k in malicious]
            malicious_asr = max(bad) if bad else None
            benign_asr = _mean([s for k, s in scores.items() if k not in malicious])

        accepted = updates
        rejected: list[int] = []
        if cfg.screen is not None:
            result = screen_updates([u.prompt for u in updates], cfg.screen)
            accepted = [updates[i] for i in result.accepted]
            rejected = [updates[i].client_id for i in result.rejected]

        state.prompt = aggregate(accepted)
        report = evaluator.evaluate(state.prompt)
        comm = ledger.record_round(
            t,
            selected,
            upload_scalars=len(updates) * scalars if communicate else 0,
            download_scalars=len(selected) * scalars if communicate else 0,
        )
        record = RoundRecord(
            round=t,
            participants=list(selected),
            acc=report.acc,
            asr=report.asr,
            upload_bytes=comm.upload_bytes,
            download_bytes=comm.download_bytes,
            prompt_l2=state.prompt.l2(),
            rejected=rejected,
            malicious_asr=malicious_asr,
            benign_asr=benign_asr,
            local_acc=local_acc,
            clip_norm=ldp.clip_norm if ldp else None,
            laplace_b=ldp.laplace_scale if ldp else None,
            screen_tau=cfg.screen.mad_threshold if cfg.screen else None,
        )
        state.records.append(record)
        logger.info(
            f"Round {t}: clients={list(selected)} acc={report.acc:.4f} "
            f"asr={'-' if report.asr is None else f'{report.asr:.4f}'} "
            f"bytes={comm.total_bytes}"
        )

    return TrainingResult(state.prompt, state.records, ledger)


def _mean(values: list[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def run_centralized(cfg: FedConfig, datasets: tuple[Dataset, Dataset]) -> TrainingResult:
    """Prompt tuning on the pooled training set, with no federation and no traffic."""
    train, _ = datasets
    central = cfg.model_copy(update={"clients": 1, "fraction": 1.0, "attack": None, "screen": None})
    partition = Partition((tuple(range(len(train))),), len(train))
    return run_training(central, datasets, partition, communicate=False)
