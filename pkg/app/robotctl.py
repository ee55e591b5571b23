"""
robotctl: operator command line for fleetd.

Every command except ``sim run`` is one request over the wire protocol.
Results go to stdout (tables, or JSON lines with --output records),
diagnostics to stderr. Exit codes: 0 success, 1 domain error, 2 usage error.
"""
import asyncio
import json
import logging
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Optional, Sequence

import click

from app.config import settings
from app.exceptions import FleetError
from app.services.ctl_client import CtlClient
from app.services.experiments import Scenario, emit_table, run_sweep
from app.services.protocol import (
    CtlGoalAdd, CtlGoalList, CtlGoalRemove, CtlMissionStart, CtlPlanCreate, CtlPlanList, CtlPlanShow,
    CtlRobotDeploy, CtlRobotList, CtlRobotRegister, CtlRobotRemove, CtlRun, CtlStatus, CtlTaskAdd,
    CtlWorldAdd, CtlWorldList, CtlWorldRemove, WireMessage,
)
from app.store.crud import parse_robot_document
from app.utils.validators import parse_address
from app.views.tables import render_records, render_table

logger = logging.getLogger(__name__)

PLANNERS = ["per-goal", "big-dag", "monolithic"]
ALLOCATORS = ["milp", "llm", "round-robin"]
FINAL_PHASES = ("done", "aborted")


@dataclass
class CtlContext:
    addr: str
    output: str


def _fail(error: FleetError) -> None:
    click.echo(f"error: {error.code}: {error.message}", err=True)
    raise click.exceptions.Exit(1)


def _request(ctx: click.Context, message: WireMessage) -> Any:
    try:
        return CtlClient(ctx.obj.addr).call(message)
    except FleetError as e:
        _fail(e)


def _emit(ctx: click.Context, rows: Sequence[dict], columns: List[str]) -> None:
    if ctx.obj.output == "records":
        if rows:
            click.echo(render_records(rows))
    else:
        click.echo(render_table(rows, columns))


def _split_ids(values: Sequence[str]) -> List[str]:
    """--after a,b --after c -> [a, b, c]"""
    return [part.strip() for value in values for part in value.split(",") if part.strip()]


@click.group()
@click.option("--addr", default=None, help="fleetd host:port (default FLEETD_ADDR)")
@click.option("--output", type=click.Choice(["table", "records"]), default="table",
              help="human-readable tables or one JSON record per line")
@click.pass_context
def cli(ctx: click.Context, addr: Optional[str], output: str):
    """Operate a robot fleet through fleetd"""
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format=settings.log_format
    )
    addr = addr or settings.FLEETD_ADDR
    try:
        parse_address(addr)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--addr")
    ctx.obj = CtlContext(addr=addr, output=output)


# ==================== ROBOT ====================

@cli.group()
def robot():
    """Register, list and remove robots"""


@robot.command("register")
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def robot_register(ctx: click.Context, spec_file: str):
    data = _request(ctx, CtlRobotRegister(document=Path(spec_file).read_text(encoding="utf-8")))
    if ctx.obj.output == "records":
        click.echo(render_records([data]))
    else:
        click.echo(f"registered {data['robot']['name']} ({data['probe']})")


@robot.command("list")
@click.pass_context
def robot_list(ctx: click.Context):
    _emit(ctx, _request(ctx, CtlRobotList()), ["name", "capabilities", "endpoint", "mode", "online"])


@robot.command("remove")
@click.argument("name")
@click.pass_context
def robot_remove(ctx: click.Context, name: str):
    data = _request(ctx, CtlRobotRemove(name=name))
    _emit(ctx, [data], ["name", "endpoint"])


@robot.command("deploy")
@click.argument("name")
@click.pass_context
def robot_deploy(ctx: click.Context, name: str):
    """Print the container command fleetd would run (dry run)"""
    data = _request(ctx, CtlRobotDeploy(name=name))
    if ctx.obj.output == "records":
        click.echo(render_records([data]))
    else:
        click.echo(data["command"] or data["note"])


@robot.command("spawn")
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--profile", "profile_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="worker profile for the simulated robot")
@click.option("--fast-forward", is_flag=True, help="zero task duration")
@click.pass_context
def robot_spawn(ctx: click.Context, spec_file: str, profile_path: Optional[str], fast_forward: bool):
    """Launch a local simulated worker for a spec and register it"""
    document = Path(spec_file).read_text(encoding="utf-8")
    try:
        spec = parse_robot_document(document)
    except FleetError as e:
        _fail(e)
    command = [sys.executable, "-m", "app.worker", "--name", spec.name,
               "--listen", spec.endpoint.address, "--manager", ctx.obj.addr]
    if profile_path:
        command += ["--profile", profile_path]
    if fast_forward:
        command.append("--fast-forward")
    process = subprocess.Popen(command)
    click.echo(f"spawned worker {spec.name} (pid {process.pid}) on {spec.endpoint.address}", err=True)
    time.sleep(0.5)
    data = _request(ctx, CtlRobotRegister(document=document))
    click.echo(f"registered {data['robot']['name']} ({data['probe']})")


# ==================== WORLD ====================

@cli.group()
def world():
    """Manage world-state statements"""


@world.command("add")
@click.argument("text")
@click.pass_context
def world_add(ctx: click.Context, text: str):
    _emit(ctx, [_request(ctx, CtlWorldAdd(text=text))], ["id", "text", "source"])


@world.command("list")
@click.pass_context
def world_list(ctx: click.Context):
    _emit(ctx, _request(ctx, CtlWorldList()), ["id", "text", "source"])


@world.command("remove")
@click.argument("statement_id")
@click.pass_context
def world_remove(ctx: click.Context, statement_id: str):
    _emit(ctx, [_request(ctx, CtlWorldRemove(id=statement_id))], ["id", "text", "source"])


# ==================== GOAL ====================

@cli.group()
def goal():
    """Manage fleet goals"""


@goal.command("add")
@click.argument("text")
@click.pass_context
def goal_add(ctx: click.Context, text: str):
    _emit(ctx, [_request(ctx, CtlGoalAdd(text=text))], ["id", "text"])


@goal.command("list")
@click.pass_context
def goal_list(ctx: click.Context):
    _emit(ctx, _request(ctx, CtlGoalList()), ["id", "text"])


@goal.command("remove")
@click.argument("goal_id")
@click.pass_context
def goal_remove(ctx: click.Context, goal_id: str):
    _emit(ctx, [_request(ctx, CtlGoalRemove(id=goal_id))], ["id", "text"])


# ==================== PLAN / TASK ====================

TASK_COLUMNS = ["id", "status", "robot", "attempts", "depends_on", "description"]


def _emit_mission(ctx: click.Context, data: dict) -> None:
    if ctx.obj.output == "records":
        summary = {key: value for key, value in data.items() if key != "tasks"}
        tasks = [dict(task, mission=data["id"]) for task in data.get("tasks", [])]
        click.echo(render_records([summary] + tasks))
        return
    if data.get("id") is None:
        click.echo("no missions yet")
        return
    flags = "feasible" if data["feasible"] else "infeasible, round-robin fallback"
    click.echo(f"mission {data['id']}: {data['phase']} ({data['strategy']}, {data['allocator']}, {flags})")
    if data.get("diagnostic"):
        click.echo(f"diagnostic: {data['diagnostic']}")
    if data.get("completed"):
        click.echo(f"frozen: {', '.join(data['completed'])}")
    click.echo(render_table(data["tasks"], TASK_COLUMNS))


@cli.group()
def plan():
    """Create and inspect plans"""


@plan.command("create")
@click.option("--planner", type=click.Choice(PLANNERS), required=True)
@click.option("--allocator", type=click.Choice(ALLOCATORS), required=True)
@click.pass_context
def plan_create(ctx: click.Context, planner: str, allocator: str):
    _emit_mission(ctx, _request(ctx, CtlPlanCreate(planner=planner, allocator=allocator)))


@plan.command("show")
@click.argument("plan_id")
@click.option("--format", "fmt", type=click.Choice(["text", "dot", "json", "trace"]), default="text")
@click.pass_context
def plan_show(ctx: click.Context, plan_id: str, fmt: str):
    data = _request(ctx, CtlPlanShow(id=plan_id, format=fmt))
    if fmt == "json":
        click.echo(json.dumps(data, indent=2, sort_keys=True))
    elif ctx.obj.output == "records":
        click.echo(render_records([data]))
    else:
        click.echo(data["rendered"], nl=fmt != "trace")


@plan.command("list")
@click.pass_context
def plan_list(ctx: click.Context):
    _emit(ctx, _request(ctx, CtlPlanList()), ["id", "strategy", "allocator", "phase", "tasks", "feasible"])


@cli.group()
def task():
    """Edit plan tasks"""


@task.command("add")
@click.option("--plan", "plan_id", required=True)
@click.option("--desc", required=True)
@click.option("--after", multiple=True, help="ids this task depends on (comma separated or repeated)")
@click.option("--before", multiple=True, help="ids that must wait for this task")
@click.option("--robot", "robot_name", default=None, help="pin the task to a robot")
@click.option("--id", "task_id", default=None)
@click.pass_context
def task_add(ctx: click.Context, plan_id: str, desc: str, after, before, robot_name, task_id):
    data = _request(ctx, CtlTaskAdd(plan=plan_id, desc=desc, after=_split_ids(after), before=_split_ids(before),
                                    robot=robot_name, id=task_id))
    _emit(ctx, [data], ["id", "description", "depends_on", "assigned_robot"])


# ==================== MISSION ====================

@cli.command("run")
@click.argument("plan_id")
@click.pass_context
def run(ctx: click.Context, plan_id: str):
    """Start executing an allocated plan"""
    data = _request(ctx, CtlRun(plan=plan_id))
    _emit(ctx, [data], ["id", "phase"])


@cli.group()
def mission():
    """Plan, allocate and run in one step"""


@mission.command("start")
@click.option("--planner", type=click.Choice(PLANNERS), required=True)
@click.option("--allocator", type=click.Choice(ALLOCATORS), required=True)
@click.pass_context
def mission_start(ctx: click.Context, planner: str, allocator: str):
    _emit(ctx, [_request(ctx, CtlMissionStart(planner=planner, allocator=allocator))], ["id", "phase"])


@cli.command("status")
@click.argument("mission_id", required=False)
@click.option("--watch", type=float, default=None, help="poll every N seconds until done or aborted")
@click.pass_context
def status(ctx: click.Context, mission_id: Optional[str], watch: Optional[float]):
    """Show a mission (default: the active or latest one)"""
    while True:
        data = _request(ctx, CtlStatus(mission=mission_id))
        _emit_mission(ctx, data)
        if not watch or data.get("phase") in FINAL_PHASES or data.get("id") is None:
            return
        time.sleep(watch)


# ==================== SIMULATION ====================

@cli.group()
def sim():
    """Offline idle-time sweeps"""


@sim.command("run")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv"]), default="markdown")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
def sim_run(scenario_path: str, fmt: str, out_path: Optional[str]):
    try:
        scenario = Scenario.load(scenario_path)
        result = asyncio.run(run_sweep(scenario))
    except FleetError as e:
        _fail(e)
    table = emit_table(result, fmt)
    if out_path:
        Path(out_path).write_text(table, encoding="utf-8")
        click.echo(f"wrote {out_path}", err=True)
    else:
        click.echo(table, nl=False)


def main():
    cli()


if __name__ == "__main__":
    main()
