"""
Line-oriented wire server shared by fleetd and the simulated robot worker.

Every connection is read line by line; each line is parsed, routed to the
handler registered for its type and answered on the same connection.
Malformed input is answered with an error reply and the connection stays
open.
"""
import asyncio
import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Set, Tuple

from app.config import settings
from app.exceptions import ProtocolError
from app.services.protocol import ErrorReply, WireMessage, error_reply, parse_message
from app.utils.router import Router

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Connection:
    reader: asyncio.StreamReader
    writer: asyncio.StreamWriter
    peer: str
    app: Any = None
    robot: Optional[str] = None
    _write_lock: asyncio.Lock = field(default_factory=asyncio.Lock)

    async def send(self, message: WireMessage) -> None:
        async with self._write_lock:
            self.writer.write(message.encode())
            await self.writer.drain()

    def close(self) -> None:
        if not self.writer.is_closing():
            self.writer.close()


class WireServer:
    def __init__(self, router: Router, app: Any = None, name: str = "wire",
                 line_deadline: Optional[float] = None, max_line_bytes: Optional[int] = None):
        self.router = router
        self.app = app
        self.name = name
        self.line_deadline = line_deadline or settings.LINE_DEADLINE
        self.max_line_bytes = max_line_bytes or settings.MAX_LINE_BYTES
        self.connections: Set[Connection] = set()
        self._server: Optional[asyncio.AbstractServer] = None
        self.address: Optional[Tuple[str, int]] = None

    async def start(self, host: str, port: int) -> Tuple[str, int]:
        """
        Bind and start accepting connections

        Returns:
            The bound (host, port); port 0 picks a free port
        """
        self._server = await asyncio.start_server(
            self.handle_connection, host, port, limit=self.max_line_bytes
        )
        bound = self._server.sockets[0].getsockname()[:2]
        self.address = (bound[0], bound[1])
        logger.info(f"{self.name} server listening on {bound[0]}:{bound[1]}")
        return bound[0], bound[1]

    async def serve_forever(self) -> None:
        if self._server is None:
            raise RuntimeError("server is not started")
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        for conn in list(self.connections):
            conn.close()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        logger.info(f"{self.name} server stopped")

    async def handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        conn = Connection(reader=reader, writer=writer, app=self.app,
                          peer=f"{peer[0]}:{peer[1]}" if peer else "?")
        self.connections.add(conn)
        logger.debug(f"{self.name}: connection from {conn.peer}")
        try:
            while True:
                try:
                    line = await reader.readline()
                except ValueError:
                    await conn.send(error_reply("malformed", f"line exceeds {self.max_line_bytes} bytes"))
                    continue
                if not line:
                    break
                reply = await self.process_line(line, conn)
                if reply is not None:
                    await conn.send(reply)
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            logger.debug(f"{self.name}: connection {conn.peer} dropped: {e}")
        finally:
            self.connections.discard(conn)
            conn.close()
            on_close = getattr(self.app, "on_connection_closed", None)
            if on_close is not None:
                on_close(conn)

    async def process_line(self, line: bytes, conn: Connection) -> Optional[WireMessage]:
        """Parse and route one line; returns the reply to send, if any"""
        try:
            message = parse_message(line.rstrip(b"\r\n"))
        except ProtocolError as e:
            return error_reply(e.code, e.message)
        if isinstance(message, ErrorReply):
            logger.warning(f"{self.name}: peer {conn.robot or conn.peer} reported {message.code}: {message.message}")
            return None

        handler = self.router.resolve(message.type)
        if handler is None:
            return error_reply("unsupported", f"{self.name} does not handle '{message.type}'")
        try:
            return await asyncio.wait_for(handler(message, conn), self.line_deadline)
        except asyncio.TimeoutError:
            logger.warning(f"{self.name}: {message.type} exceeded {self.line_deadline}s deadline")
            return error_reply("deadline_exceeded", f"'{message.type}' took longer than {self.line_deadline}s")
