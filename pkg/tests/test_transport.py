"""Loopback tests for the TCP server and client."""
import asyncio

import pytest

from fedprompt.api.client import run_client
from fedprompt.api.server import FedServer
from fedprompt.api.wire import Kind, WireMessage, read_frame, write_frame
from fedprompt.core.errors import TransportError, TransportTimeout
from fedprompt.schemas.config import FedConfig
from fedprompt.services import fed_service

HOST = "127.0.0.1"


def _networked_run(cfg: FedConfig):
    async def scenario():
        server = FedServer(cfg, host=HOST, port=0, round_timeout=60, handshake_timeout=30)
        port = await server.start()
        clients = [asyncio.create_task(run_client(k, host=HOST, port=port)) for k in range(cfg.clients)]
        try:
            result = await server.run()
            answered = await asyncio.gather(*clients)
        finally:
            await server.close()
        return result, answered

    return asyncio.run(scenario())


def test_loopback_matches_in_process(small_cfg):
    cfg = small_cfg.model_copy(update={"clients": 2, "rounds": 3})
    net, answered = _networked_run(cfg)
    assert answered == [3, 3]

    train, test, partition = fed_service.build_datasets(cfg)
    local = fed_service.run_training(cfg, (train, test), partition)
    assert [r.model_dump_json() for r in net.records] == [r.model_dump_json() for r in local.records]
    assert net.prompt.to_payload() == local.prompt.to_payload()


def test_loopback_with_partial_participation(small_cfg):
    cfg = small_cfg.model_copy(update={"fraction": 0.5, "rounds": 2})
    net, answered = _networked_run(cfg)
    train, test, partition = fed_service.build_datasets(cfg)
    local = fed_service.run_training(cfg, (train, test), partition)
    assert net.records == local.records
    assert sum(answered) == sum(len(r.participants) for r in local.records)


async def _hello(port: int, k: int):
    reader, writer = await asyncio.open_connection(HOST, port)
    await write_frame(writer, WireMessage(Kind.HELLO, client_id=k))
    return reader, writer, await read_frame(reader)


def test_duplicate_and_out_of_range_hello_refused(small_cfg):
    async def scenario():
        server = FedServer(small_cfg, host=HOST, port=0)
        port = await server.start()
        try:
            _, w0, first = await _hello(port, 0)
            _, w1, dup = await _hello(port, 0)
            _, w2, bad = await _hello(port, small_cfg.clients)
            for w in (w0, w1, w2):
                w.close()
            return first, dup, bad, sorted(server.sessions)
        finally:
            await server.close()

    first, dup, bad, sessions = asyncio.run(scenario())
    assert first.kind == Kind.CONFIG
    assert FedConfig.from_json(first.text) == small_cfg
    assert dup.kind == Kind.ERROR and "already connected" in dup.text
    assert bad.kind == Kind.ERROR
    assert sessions == [0]


def test_silent_client_times_out(small_cfg):
    cfg = small_cfg.model_copy(update={"clients": 1, "rounds": 1})

    async def scenario():
        server = FedServer(cfg, host=HOST, port=0, round_timeout=0.5, handshake_timeout=10)
        port = await server.start()
        try:
            reader, writer, config = await _hello(port, 0)
            assert config.kind == Kind.CONFIG
            with pytest.raises(TransportTimeout) as exc:
                await server.run()
            frames = [await read_frame(reader), await read_frame(reader)]
            writer.close()
            return exc.value, frames
        finally:
            await server.close()

    error, frames = asyncio.run(scenario())
    assert "[0]" in str(error)
    assert error.exit_code == 8
    assert [f.kind for f in frames] == [Kind.GLOBAL_PROMPT, Kind.ERROR]


def test_missing_clients_time_out_at_handshake(small_cfg):
    async def scenario():
        server = FedServer(small_cfg, host=HOST, port=0, handshake_timeout=0.3)
        await server.start()
        try:
            await server.run()
        finally:
            await server.close()

    with pytest.raises(TransportTimeout):
        asyncio.run(scenario())


def test_client_without_server():
    async def scenario():
        server = await asyncio.start_server(lambda r, w: w.close(), HOST, 0)
        port = server.sockets[0].getsockname()[1]
        server.close()
        await server.wait_closed()
        await run_client(0, host=HOST, port=port)

    with pytest.raises(TransportError):
        asyncio.run(scenario())
