"""Builders shared by the test modules"""
import asyncio
from pathlib import Path

from app.store.models import Endpoint, Plan, RobotSpec, Task

ROOT = Path(__file__).resolve().parent.parent
RULES_DIR = ROOT / "fleet_rules"


def run(coro):
    """Run a coroutine to completion on a fresh event loop"""
    return asyncio.run(coro)


def robot(name: str, *capabilities: str, port: int = 7500) -> RobotSpec:
    return RobotSpec(name=name, capabilities=list(capabilities) or ["navigation"],
                     endpoint=Endpoint(host="127.0.0.1", port=port))


def task(task_id: str, *capabilities: str, depends_on=(), description=None, robot=None) -> Task:
    return Task(id=task_id, description=description or f"task {task_id}", depends_on=list(depends_on),
                required_capabilities=list(capabilities), assigned_robot=robot)


def plan(*tasks: Task, plan_id: str = "p1") -> Plan:
    return Plan(id=plan_id, tasks=list(tasks))
