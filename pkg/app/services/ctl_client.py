"""Request/response client robotctl uses to talk to fleetd"""
import asyncio
import logging
from typing import Any, Optional

from app.exceptions import FleetdUnreachable, ProtocolError, RemoteError
from app.services.protocol import CtlResult, ErrorReply, WireMessage, parse_message
from app.utils.validators import parse_address

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 180.0


class CtlClient:
    def __init__(self, address: str, timeout: Optional[float] = None):
        self.address = address
        self.host, self.port = parse_address(address)
        self.timeout = timeout or DEFAULT_TIMEOUT

    async def request(self, message: WireMessage) -> Any:
        """
        Send one ctl message and wait for its reply

        Returns:
            The ``data`` of the ctl_result reply

        Raises:
            FleetdUnreachable: If no fleetd answers at the address
            RemoteError: If fleetd answers with an error reply
        """
        try:
            reader, writer = await asyncio.wait_for(asyncio.open_connection(self.host, self.port), self.timeout)
        except (OSError, asyncio.TimeoutError) as e:
            raise FleetdUnreachable(
                f"cannot reach fleetd at {self.address} ({e.__class__.__name__}); "
                f"start it with 'python fleetd.py --listen {self.address}' or set FLEETD_ADDR"
            )
        try:
            writer.write(message.encode())
            await writer.drain()
            line = await asyncio.wait_for(reader.readline(), self.timeout)
        except (OSError, asyncio.TimeoutError) as e:
            raise FleetdUnreachable(f"fleetd at {self.address} did not answer: {e.__class__.__name__}")
        finally:
            writer.close()
        if not line:
            raise FleetdUnreachable(f"fleetd at {self.address} closed the connection")
        try:
            reply = parse_message(line)
        except ProtocolError as e:
            raise RemoteError(e.code, f"unreadable reply from fleetd: {e.message}")
        if isinstance(reply, ErrorReply):
            raise RemoteError(reply.code, reply.message)
        if not isinstance(reply, CtlResult):
            raise RemoteError("invalid_message", f"unexpected '{reply.type}' reply from fleetd")
        return reply.data

    def call(self, message: WireMessage) -> Any:
        return asyncio.run(self.request(message))
