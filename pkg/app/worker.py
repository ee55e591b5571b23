import asyncio
import logging
from typing import Optional, Tuple

import click

from app.config import settings
from app.exceptions import FleetError
from app.handlers import robot
from app.services.wire_server import WireServer
from app.services.worker_sim import ManagerLink, SimulatedWorker, WorkerProfile
from app.utils.router import Router
from app.utils.validators import parse_address

logger = logging.getLogger(__name__)


def build_router() -> Router:
    router = Router("worker-sim")
    router.include_router(robot.router)
    return router


async def start_worker(profile: WorkerProfile, listen: Tuple[str, int], manager: Tuple[str, int],
                       line_deadline: Optional[float] = None) -> Tuple[WireServer, SimulatedWorker, asyncio.Task]:
    """
    Start a simulated worker: its wire server plus the link to fleetd

    Returns:
        (server, worker, link task); cancel the link task to stop reporting
    """
    link = ManagerLink(profile.robot_name, *manager)
    sim = SimulatedWorker(profile, link)
    server = WireServer(build_router(), app=sim, name=f"worker {profile.robot_name}",
                        line_deadline=line_deadline)
    await server.start(*listen)
    link_task = asyncio.create_task(link.run())
    return server, sim, link_task


async def main(profile: WorkerProfile, listen: str, manager: str):
    server, _, link_task = await start_worker(profile, parse_address(listen), parse_address(manager))
    logger.info(f"Worker {profile.robot_name} started (task duration {profile.task_duration}s)")
    try:
        await server.serve_forever()
    finally:
        link_task.cancel()
        await server.close()


@click.command()
@click.option("--name", default=None, help="robot name (overrides the profile)")
@click.option("--listen", required=True, help="host:port the worker listens on")
@click.option("--manager", default=None, help="fleetd host:port (default FLEETD_ADDR)")
@click.option("--profile", "profile_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="worker profile (YAML)")
@click.option("--fast-forward", is_flag=True, help="zero task duration")
def cli(name: Optional[str], listen: str, manager: Optional[str], profile_path: Optional[str],
        fast_forward: bool):
    """Simulated robot worker"""
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format=settings.log_format
    )
    try:
        if profile_path:
            profile = WorkerProfile.load(profile_path, robot_name=name)
        elif name:
            profile = WorkerProfile(robot_name=name)
        else:
            raise click.UsageError("--name or --profile is required")
    except FleetError as e:
        raise click.ClickException(f"{e.code}: {e.message}")
    if fast_forward:
        profile = profile.model_copy(update={"task_duration": 0.0})
    try:
        asyncio.run(main(profile, listen, manager or settings.FLEETD_ADDR))
    except KeyboardInterrupt:
        logger.info(f"Worker {profile.robot_name} stopped by user")


if __name__ == "__main__":
    cli()
