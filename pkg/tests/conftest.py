"""Shared fixtures: a small backbone and matching toy datasets."""
import pytest

from fedprompt.core.config import get_settings
from fedprompt.models.vocab import Verbalizer, Vocab
from fedprompt.schemas.config import DataConfig, FedConfig, ModelConfig
from fedprompt.services import data_service, model_service

SMALL_MODEL = dict(vocab_size=64, hidden=8, ffn=16, prompt_len=4, max_len=8)


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    monkeypatch.setenv("FEDPROMPT_WORKERS", "2")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def small_cfg() -> FedConfig:
    return FedConfig(
        clients=3,
        rounds=2,
        batch=4,
        local_steps=3,
        seed=11,
        model=ModelConfig(**SMALL_MODEL),
        data=DataConfig(n_train=60, n_test=20, words_per_text=5, data_seed=3),
    )


@pytest.fixture
def vocab() -> Vocab:
    return Vocab(SMALL_MODEL["vocab_size"])


@pytest.fixture
def verbalizer(vocab) -> Verbalizer:
    return Verbalizer.from_lists([["terrible"], ["great"]], vocab)


@pytest.fixture
def backbone():
    m = SMALL_MODEL
    return model_service.init_backbone(
        5, m["vocab_size"], m["hidden"], m["ffn"], m["prompt_len"] + m["max_len"] + 3
    )


@pytest.fixture
def prompt():
    return model_service.init_prompt(9, SMALL_MODEL["prompt_len"], SMALL_MODEL["hidden"])


@pytest.fixture
def toy_train():
    return data_service.gen_synthetic(1, 40, 5)


@pytest.fixture
def toy_test():
    return data_service.gen_synthetic(2, 20, 5)
