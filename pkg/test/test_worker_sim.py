import asyncio
import math

import pytest

from app.exceptions import SchemaError, WorkerUnreachable
from app.services.protocol import ExecuteTask, Hello, TaskStatusMessage, parse_message
from app.services.worker_sim import ManagerLink, SimulatedWorker, WorkerBehavior, WorkerProfile, probe
from app.worker import start_worker
from helpers import ROOT, run


class Outbox:
    def __init__(self):
        self.messages = []

    def post(self, message):
        self.messages.append(message)


async def until_idle(worker: SimulatedWorker) -> None:
    for _ in range(200):
        if worker.current is None:
            return
        await asyncio.sleep(0.01)
    raise AssertionError("worker never finished")


# ==================== PROFILES ====================

def test_shipped_profiles_load():
    stuck = WorkerProfile.load(ROOT / "profiles" / "hsr_stuck.yaml")
    assert stuck.failure_script["search for the cup in the kitchen"] == math.inf
    scout = WorkerProfile.load(ROOT / "profiles" / "locobot.yaml", robot_name="scout")
    assert scout.robot_name == "scout"
    assert scout.discovery_script["search for the cup in the living room"] == ["The cup is in the living room."]


@pytest.mark.parametrize("body", [
    "robot_name: r1\nfailure_script: {open: -1}\n",
    "robot_name: r1\nfailure_script: {open: 1.5}\n",
    "robot_name: r1\ntask_duration: -2\n",
    "robot_name: r1\nspeed: 3\n",
    "- not a mapping\n",
])
def test_bad_profiles_are_schema_errors(tmp_path, body):
    path = tmp_path / "profile.yaml"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(SchemaError):
        WorkerProfile.load(path)


def test_failure_counts_accept_inf_spellings():
    profile = WorkerProfile(robot_name="r1", failure_script={"a": "Infinity", "b": "2", "c": 0})
    assert profile.failure_script == {"a": math.inf, "b": 2.0, "c": 0.0}


# ==================== BEHAVIOR ====================

def test_failures_run_out_then_success():
    behavior = WorkerBehavior(WorkerProfile(robot_name="r1", failure_script={"open the door": 2}))
    outcomes = [behavior.outcome("Open the DOOR slowly")[0] for _ in range(3)]
    assert outcomes == [False, False, True]
    assert behavior.outcome("Close the door")[0]


def test_infinite_failures_never_succeed():
    behavior = WorkerBehavior(WorkerProfile(robot_name="r1", failure_script={"search": "inf"}))
    assert not any(behavior.outcome("Search the attic")[0] for _ in range(50))


def test_discovery_is_reported_on_success_only():
    behavior = WorkerBehavior(WorkerProfile(
        robot_name="r1", failure_script={"look": 1}, discovery_script={"look": "The cup is here."}
    ))
    assert behavior.outcome("Look around") == (False, "scripted failure (look)", [])
    assert behavior.outcome("Look around") == (True, "done", ["The cup is here."])


# ==================== WORKER ====================

def test_worker_reports_start_success_and_discovery():
    async def scenario():
        outbox = Outbox()
        profile = WorkerProfile(robot_name="locobot", task_duration=0,
                                discovery_script={"living room": "The cup is in the living room."})
        worker = SimulatedWorker(profile, outbox)
        worker.accept(ExecuteTask(task_id="t1", description="Search the living room", attempt=1))
        await until_idle(worker)
        return outbox.messages

    messages = run(scenario())
    assert [m.type for m in messages] == ["task_status", "task_status", "replan_request"]
    assert [m.status for m in messages[:2]] == ["started", "succeeded"]
    assert messages[2].statements == ["The cup is in the living room."]


def test_cancel_reports_failure_and_frees_the_worker():
    async def scenario():
        outbox = Outbox()
        worker = SimulatedWorker(WorkerProfile(robot_name="hsr", task_duration=10), outbox)
        worker.accept(ExecuteTask(task_id="t1", description="Go to the kitchen", attempt=1))
        await asyncio.sleep(0)
        assert not worker.cancel("other")
        assert worker.cancel("t1")
        await until_idle(worker)
        worker.accept(ExecuteTask(task_id="t2", description="Go to the hallway", attempt=1))
        await asyncio.sleep(0)
        worker.cancel("t2")
        await until_idle(worker)
        return outbox.messages

    messages = run(scenario())
    finished = [m for m in messages if m.status != "started"]
    assert [(m.task_id, m.status, m.detail) for m in finished] == [
        ("t1", "failed", "cancelled"), ("t2", "failed", "cancelled"),
    ]


# ==================== NETWORK ====================

def test_probe_measures_a_running_worker():
    async def scenario():
        server, _, link_task = await start_worker(WorkerProfile(robot_name="hsr", task_duration=0),
                                                  ("127.0.0.1", 0), ("127.0.0.1", 1))
        _, port = server.address
        try:
            return await probe("127.0.0.1", port)
        finally:
            link_task.cancel()
            await server.close()

    assert run(scenario()) >= 0


def test_probe_of_closed_port_is_unreachable():
    with pytest.raises(WorkerUnreachable):
        run(probe("127.0.0.1", 1, timeout=0.5))


def test_manager_link_says_hello_then_delivers_in_order():
    async def scenario():
        received = []
        arrived = asyncio.Event()

        async def manager(reader, writer):
            while len(received) < 3:
                line = await reader.readline()
                if not line:
                    break
                received.append(parse_message(line))
            arrived.set()
            writer.close()

        server = await asyncio.start_server(manager, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        link = ManagerLink("hsr", "127.0.0.1", port)
        link.post(TaskStatusMessage(robot="hsr", task_id="t1", status="started"))
        link.post(TaskStatusMessage(robot="hsr", task_id="t1", status="succeeded"))
        runner = asyncio.create_task(link.run())
        try:
            await asyncio.wait_for(arrived.wait(), 5)
        finally:
            runner.cancel()
            server.close()
        return received

    received = run(scenario())
    assert received[0] == Hello(robot="hsr")
    assert [m.status for m in received[1:]] == ["started", "succeeded"]
