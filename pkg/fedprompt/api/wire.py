"""Binary frame codec for the federation protocol.

Frame layout (little endian):

    magic "FPDT" | version u8 | kind u8 | round u32 | client_id u32 |
    n_k u64 | payload_len u64 | payload

Prompt payloads are PromptTensor.to_payload(): m and d as u32, then m*d
float64 values row-major.
"""
import asyncio
import struct
from dataclasses import dataclass
from enum import IntEnum

from fedprompt.core.errors import MalformedFrame, TransportError, UnsupportedVersion
from fedprompt.models.prompt import PromptTensor

MAGIC = b"FPDT"
VERSION = 1
HEADER = struct.Struct("<4sBBIIQQ")
MAX_PAYLOAD = 1 << 30


class Kind(IntEnum):
    HELLO = 1
    CONFIG = 2
    GLOBAL_PROMPT = 3
    CLIENT_UPDATE = 4
    DONE = 5
    ERROR = 6


@dataclass(frozen=True)
class WireMessage:
    kind: Kind
    round: int = 0
    client_id: int = 0
    n_k: int = 0
    payload: bytes = b""

    @classmethod
    def with_prompt(cls, kind: Kind, round_num: int, client_id: int, n_k: int, prompt: PromptTensor) -> "WireMessage":
        return cls(kind, round_num, client_id, n_k, prompt.to_payload())

    @classmethod
    def error(cls, text: str, round_num: int = 0, client_id: int = 0) -> "WireMessage":
        return cls(Kind.ERROR, round_num, client_id, 0, text.encode("utf-8"))

    def prompt(self) -> PromptTensor:
        return PromptTensor.from_payload(self.payload)

    @property
    def text(self) -> str:
        return self.payload.decode("utf-8", errors="replace")


def encode(msg: WireMessage) -> bytes:
    return HEADER.pack(
        MAGIC, VERSION, int(msg.kind), msg.round, msg.client_id, msg.n_k, len(msg.payload)
    ) + msg.payload


def _parse_header(data: bytes, offset: int = 0) -> tuple[Kind, int, int, int, int]:
    """Validate a full header at offset; returns (kind, round, client_id, n_k, payload_len)."""
    magic, version, kind, round_num, client_id, n_k, length = HEADER.unpack_from(data, offset)
    if magic != MAGIC:
        raise MalformedFrame(f"Bad magic {magic!r}", offset)
    if version != VERSION:
        raise UnsupportedVersion(f"Frame version {version}, expected {VERSION}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise MalformedFrame(f"Unknown frame kind {kind}", offset + 5) from None
    if length > MAX_PAYLOAD:
        raise MalformedFrame(f"Payload length {length} exceeds limit", offset + 22)
    return kind, round_num, client_id, n_k, length


def decode(data: bytes) -> WireMessage:
    """Decode exactly one frame."""
    if len(data) < HEADER.size:
        raise MalformedFrame("Truncated header", len(data))
    kind, round_num, client_id, n_k, length = _parse_header(data)
    end = HEADER.size + length
    if len(data) < end:
        raise MalformedFrame("Truncated payload", len(data))
    if len(data) > end:
        raise MalformedFrame("Trailing bytes after frame", end)
    return WireMessage(kind, round_num, client_id, n_k, bytes(data[HEADER.size:end]))


def iter_frames(buffer: bytes) -> tuple[list[WireMessage], bytes]:
    """Every whole frame at the front of buffer, plus the incomplete tail."""
    messages = []
    offset = 0
    while True:
        rest = len(buffer) - offset
        if rest < HEADER.size:
            partial = buffer[offset:offset + len(MAGIC)]
            if partial != MAGIC[:len(partial)]:
                raise MalformedFrame(f"Bad magic {partial!r}", offset)
            break
        kind, round_num, client_id, n_k, length = _parse_header(buffer, offset)
        end = offset + HEADER.size + length
        if end > len(buffer):
            break
        messages.append(WireMessage(kind, round_num, client_id, n_k, bytes(buffer[offset + HEADER.size:end])))
        offset = end
    return messages, bytes(buffer[offset:])


async def read_frame(reader: asyncio.StreamReader) -> WireMessage:
    try:
        header = await reader.readexactly(HEADER.size)
        kind, round_num, client_id, n_k, length = _parse_header(header)
        payload = await reader.readexactly(length) if length else b""
    except asyncio.IncompleteReadError as e:
        raise TransportError("Connection closed mid-frame" if e.partial else "Connection closed") from e
    except ConnectionError as e:
        raise TransportError(f"Connection lost: {e}") from e
    return WireMessage(kind, round_num, client_id, n_k, payload)


async def write_frame(writer: asyncio.StreamWriter, msg: WireMessage) -> None:
    try:
        writer.write(encode(msg))
        await writer.drain()
    except ConnectionError as e:
        raise TransportError(f"Connection lost: {e}") from e
