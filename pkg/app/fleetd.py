import asyncio
import logging
from typing import Optional, Tuple

import click

from app.config import settings
from app.handlers import ctl, worker
from app.services.fleet_service import FleetService
from app.services.wire_server import WireServer
from app.store import init_snapshot
from app.utils.router import Router
from app.utils.validators import parse_address

logger = logging.getLogger(__name__)


def build_router() -> Router:
    router = Router("fleetd")
    router.include_router(ctl.router)
    router.include_router(worker.router)
    return router


async def start_fleetd(host: str, port: int, rules_dir: str, snapshot_path: Optional[str] = None,
                       line_deadline: Optional[float] = None,
                       **service_kwargs) -> Tuple[WireServer, FleetService, Tuple[str, int]]:
    """
    Load the store and start listening

    Returns:
        (server, service, bound address); port 0 binds a free port
    """
    snapshot = init_snapshot(snapshot_path) if snapshot_path else None
    service = FleetService.from_rules(rules_dir, snapshot, **service_kwargs)
    server = WireServer(build_router(), app=service, name="fleetd", line_deadline=line_deadline)
    address = await server.start(host, port)
    return server, service, address


async def main(listen: str, rules_dir: str, snapshot_path: str):
    """Main fleetd function"""
    host, port = parse_address(listen)
    logger.info(f"Starting fleetd (rules: {rules_dir}, snapshot: {snapshot_path})")
    server, service, _ = await start_fleetd(host, port, rules_dir, snapshot_path)
    await service.resume()
    logger.info("fleetd started successfully")
    try:
        await server.serve_forever()
    finally:
        await service.shutdown()
        await server.close()


@click.command()
@click.option("--listen", default=None, help="host:port to listen on (default FLEETD_LISTEN)")
@click.option("--rules-dir", default=None, help="fleet rules directory (default RULES_DIR)")
@click.option("--snapshot", "snapshot_path", default=None, help="snapshot file (default SNAPSHOT_PATH)")
def cli(listen: Optional[str], rules_dir: Optional[str], snapshot_path: Optional[str]):
    """Fleet manager daemon"""
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format=settings.log_format
    )
    try:
        asyncio.run(main(listen or settings.FLEETD_LISTEN, rules_dir or settings.RULES_DIR,
                         snapshot_path or settings.SNAPSHOT_PATH))
    except KeyboardInterrupt:
        logger.info("fleetd stopped by user")


if __name__ == "__main__":
    cli()
