"""Federation server: handshakes clients, then drives run_training over sockets."""
import asyncio
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from fedprompt.api.wire import Kind, WireMessage, read_frame, write_frame
from fedprompt.core.config import get_settings
from fedprompt.core.errors import (
    ClientFailure,
    FedPromptError,
    ParseError,
    ProtocolError,
    TransportError,
    TransportTimeout,
)
from fedprompt.models.prompt import PromptTensor
from fedprompt.schemas.config import FedConfig
from fedprompt.services import fed_service
from fedprompt.services.fed_service import ClientUpdateMsg, TrainingResult

logger = logging.getLogger(__name__)


@dataclass
class _Session:
    client_id: int
    reader: asyncio.StreamReader
    writer: asyncio.StreamWriter


class NetworkExecutor:
    """Client executor that ships GLOBAL_PROMPT frames and waits for CLIENT_UPDATEs.

    run_round is called from the training thread; the socket work runs on
    the server's event loop.
    """

    def __init__(self, loop: asyncio.AbstractEventLoop, sessions: dict[int, _Session], round_timeout: float):
        self.loop = loop
        self.sessions = sessions
        self.round_timeout = round_timeout

    def run_round(self, t: int, client_ids: Sequence[int], global_prompt: PromptTensor) -> list[ClientUpdateMsg]:
        future = asyncio.run_coroutine_threadsafe(self._round(t, client_ids, global_prompt), self.loop)
        return future.result()

    async def _exchange(self, t: int, k: int, prompt: PromptTensor) -> ClientUpdateMsg:
        session = self.sessions[k]
        await write_frame(session.writer, WireMessage.with_prompt(Kind.GLOBAL_PROMPT, t, k, 0, prompt))
        reply = await read_frame(session.reader)
        if reply.kind == Kind.ERROR:
            raise ClientFailure(t, k, TransportError(reply.text))
        if reply.kind != Kind.CLIENT_UPDATE or reply.client_id != k or reply.round != t:
            raise ProtocolError(
                f"Round {t}: client {k} answered kind={reply.kind.name} "
                f"client={reply.client_id} round={reply.round}"
            )
        try:
            update_prompt = reply.prompt()
        except ParseError as e:
            raise ProtocolError(f"Round {t}: client {k} sent a bad prompt payload: {e}") from e
        if update_prompt.shape != prompt.shape:
            raise ProtocolError(f"Round {t}: client {k} sent shape {update_prompt.shape}")
        return ClientUpdateMsg(round=t, client_id=k, n_k=reply.n_k, prompt=update_prompt)

    async def _round(self, t: int, client_ids: Sequence[int], prompt: PromptTensor) -> list[ClientUpdateMsg]:
        missing = [k for k in client_ids if k not in self.sessions]
        if missing:
            raise ProtocolError(f"Round {t}: no session for clients {missing}")
        tasks = [asyncio.ensure_future(self._exchange(t, k, prompt)) for k in client_ids]
        try:
            return list(await asyncio.wait_for(asyncio.gather(*tasks), timeout=self.round_timeout))
        except asyncio.TimeoutError:
            silent = [k for k, task in zip(client_ids, tasks) if task.cancelled() or not task.done()]
            raise TransportTimeout(
                f"Round {t}: no update from clients {silent} within {self.round_timeout}s"
            ) from None
        finally:
            for task in tasks:
                task.cancel()


class FedServer:
    """One federated run over TCP: wait for all K clients, train, send DONE."""

    def __init__(
        self,
        cfg: FedConfig,
        host: Optional[str] = None,
        port: Optional[int] = None,
        round_timeout: Optional[float] = None,
        handshake_timeout: Optional[float] = None,
    ):
        settings = get_settings()
        self.cfg = cfg
        self.host = host or settings.HOST
        self.port = settings.PORT if port is None else port
        self.round_timeout = round_timeout or cfg.timeout or settings.ROUND_TIMEOUT
        self.handshake_timeout = handshake_timeout or settings.HANDSHAKE_TIMEOUT
        self.sessions: dict[int, _Session] = {}
        self._all_joined: Optional[asyncio.Event] = None
        self._server: Optional[asyncio.AbstractServer] = None

    async def start(self) -> int:
        """Bind and start accepting HELLOs; returns the bound port."""
        self._all_joined = asyncio.Event()
        self._server = await asyncio.start_server(self._on_connect, self.host, self.port)
        port = self._server.sockets[0].getsockname()[1]
        logger.info(f"Listening on {self.host}:{port} for {self.cfg.clients} clients")
        return port

    async def _refuse(self, writer: asyncio.StreamWriter, reason: str) -> None:
        logger.warning(f"Refused HELLO: {reason}")
        try:
            await write_frame(writer, WireMessage.error(reason))
        except TransportError:
            pass
        writer.close()

    async def _on_connect(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            hello = await asyncio.wait_for(read_frame(reader), timeout=self.handshake_timeout)
        except (asyncio.TimeoutError, FedPromptError) as e:
            await self._refuse(writer, f"no valid HELLO ({e or 'timeout'})")
            return
        k = hello.client_id
        if hello.kind != Kind.HELLO:
            await self._refuse(writer, f"expected HELLO, got {hello.kind.name}")
            return
        if k >= self.cfg.clients:
            await self._refuse(writer, f"client id {k} outside [0, {self.cfg.clients})")
            return
        if k in self.sessions:
            await self._refuse(writer, f"client id {k} already connected")
            return

        self.sessions[k] = _Session(k, reader, writer)
        await write_frame(writer, WireMessage(Kind.CONFIG, client_id=k, payload=self.cfg.to_json().encode("utf-8")))
        logger.info(f"Client {k} joined ({len(self.sessions)}/{self.cfg.clients})")
        if len(self.sessions) == self.cfg.clients:
            self._all_joined.set()

    async def _broadcast(self, msg: WireMessage) -> None:
        for session in list(self.sessions.values()):
            try:
                await write_frame(session.writer, msg)
            except TransportError:
                logger.warning(f"Could not reach client {session.client_id}")

    async def run(self) -> TrainingResult:
        """Wait for every client, run all rounds, then release the clients."""
        if self._server is None:
            await self.start()
        try:
            await asyncio.wait_for(self._all_joined.wait(), timeout=self.handshake_timeout)
        except asyncio.TimeoutError:
            raise TransportTimeout(
                f"Only {len(self.sessions)} of {self.cfg.clients} clients joined "
                f"within {self.handshake_timeout}s"
            ) from None

        loop = asyncio.get_running_loop()
        train, test, partition = fed_service.build_datasets(self.cfg)
        executor = NetworkExecutor(loop, self.sessions, self.round_timeout)
        try:
            result = await loop.run_in_executor(
                None, fed_service.run_training, self.cfg, (train, test), partition, executor
            )
        except FedPromptError as e:
            logger.error(f"Run aborted: {e}")
            await self._broadcast(WireMessage.error(str(e)))
            raise
        await self._broadcast(WireMessage(Kind.DONE, round=self.cfg.rounds))
        logger.info("Run complete, DONE sent")
        return result

    async def close(self) -> None:
        for session in self.sessions.values():
            session.writer.close()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()


def serve(
    cfg: FedConfig,
    host: Optional[str] = None,
    port: Optional[int] = None,
    round_timeout: Optional[float] = None,
    handshake_timeout: Optional[float] = None,
) -> TrainingResult:
    async def _main() -> TrainingResult:
        server = FedServer(cfg, host, port, round_timeout, handshake_timeout)
        try:
            return await server.run()
        finally:
            await server.close()

    return asyncio.run(_main())
