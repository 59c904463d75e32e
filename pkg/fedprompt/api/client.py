"""Federation client: joins a server and answers each GLOBAL_PROMPT with a local update."""
import asyncio
import logging
from typing import Optional

from fedprompt.api.wire import Kind, WireMessage, read_frame, write_frame
from fedprompt.core.config import get_settings
from fedprompt.core.errors import FedPromptError, ProtocolError, TransportError
from fedprompt.models.dataset import Dataset
from fedprompt.schemas.config import FedConfig
from fedprompt.services import fed_service

logger = logging.getLogger(__name__)


async def run_client(
    k: int,
    shard: Optional[Dataset] = None,
    host: Optional[str] = None,
    port: Optional[int] = None,
) -> int:
    """Serve one client until DONE; returns the number of rounds answered.

    Without an explicit shard the client rebuilds the datasets from the
    received config and takes its own partition shard.
    """
    settings = get_settings()
    host = host or settings.HOST
    port = settings.PORT if port is None else port
    try:
        reader, writer = await asyncio.open_connection(host, port)
    except OSError as e:
        raise TransportError(f"Cannot reach server at {host}:{port}: {e}") from e

    try:
        await write_frame(writer, WireMessage(Kind.HELLO, client_id=k))
        reply = await asyncio.wait_for(read_frame(reader), timeout=settings.HANDSHAKE_TIMEOUT)
        if reply.kind == Kind.ERROR:
            raise ProtocolError(f"Server refused client {k}: {reply.text}")
        if reply.kind != Kind.CONFIG:
            raise ProtocolError(f"Expected CONFIG, got {reply.kind.name}")
        cfg = FedConfig.from_json(reply.text)
        runtime = fed_service.build_runtime(cfg)
        if shard is None:
            train, _, partition = fed_service.build_datasets(cfg)
            shard = partition.shard(train, k)
        logger.info(f"Client {k} configured: {len(shard)} examples, {cfg.rounds} rounds")

        loop = asyncio.get_running_loop()
        answered = 0
        while True:
            msg = await read_frame(reader)
            if msg.kind == Kind.DONE:
                logger.info(f"Client {k} done after {answered} rounds")
                return answered
            if msg.kind == Kind.ERROR:
                raise TransportError(f"Server aborted the run: {msg.text}")
            if msg.kind != Kind.GLOBAL_PROMPT or msg.client_id != k:
                raise ProtocolError(f"Unexpected {msg.kind.name} frame for client {msg.client_id}")

            t = msg.round
            try:
                update = await loop.run_in_executor(
                    None,
                    fed_service.client_round,
                    k, t, msg.prompt(), shard, cfg, runtime.backbone, runtime.verbalizer,
                )
            except FedPromptError as e:
                await write_frame(writer, WireMessage.error(str(e), t, k))
                raise
            await write_frame(
                writer,
                WireMessage.with_prompt(Kind.CLIENT_UPDATE, t, k, update.n_k, update.prompt),
            )
            answered += 1
    except asyncio.TimeoutError:
        raise TransportError(f"Client {k}: no CONFIG within {settings.HANDSHAKE_TIMEOUT}s") from None
    finally:
        writer.close()


def connect_client(
    k: int,
    shard: Optional[Dataset] = None,
    host: Optional[str] = None,
    port: Optional[int] = None,
) -> int:
    return asyncio.run(run_client(k, shard, host, port))
