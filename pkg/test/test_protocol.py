import asyncio
import json
import random
from types import SimpleNamespace

import pytest

from app.exceptions import ProtocolError
from app.fleetd import build_router as fleetd_router
from app.services.fleet_service import FleetService
from app.services.protocol import (
    CtlGoalAdd, CtlPlanCreate, CtlTaskAdd, CtlWorldAdd, ErrorReply, ExecuteTask, Hello, Ping, Pong, ReplanRequest,
    TaskStatusMessage, parse_message,
)
from app.services.wire_server import WireServer
from app.services.worker_sim import SimulatedWorker, WorkerProfile
from app.store.models import FleetStore
from app.utils.router import Router
from app.worker import build_router as worker_router
from helpers import RULES_DIR, run

VALID = [
    Ping(), Pong(), Hello(robot="hsr"),
    ExecuteTask(task_id="g1/fetch", description="Go to the kitchen", attempt=1, context=["a", "b"]),
    TaskStatusMessage(robot="hsr", task_id="t1", status="failed", detail="stuck"),
    ReplanRequest(robot="locobot", reason="found it", statements=["The cup is in the living room."]),
    CtlGoalAdd(text="Make tea"),
    CtlPlanCreate(planner="per-goal", allocator="milp"),
    CtlTaskAdd(plan="p1", desc="Wipe the table", after=["t1"], before=[], robot=None, id=None),
]


def garbage_lines(rng: random.Random, count: int):
    encoded = [m.encode().rstrip(b"\n") for m in VALID]
    for i in range(count):
        if i % 2:
            length = rng.randint(0, 120)
            yield bytes(b for b in rng.randbytes(length) if b != 0x0A)
        else:
            line = rng.choice(encoded)
            yield line[:rng.randrange(len(line))]


def fake_conn(app):
    return SimpleNamespace(robot=None, peer="fuzz", app=app)


def fleetd_server() -> WireServer:
    service = FleetService(FleetStore(rules_dir=str(RULES_DIR)), probe_on_register=False)
    return WireServer(fleetd_router(), app=service, name="fleetd", line_deadline=0.1)


def worker_server() -> WireServer:
    sim = SimulatedWorker(WorkerProfile(robot_name="hsr", task_duration=0))
    return WireServer(worker_router(), app=sim, name="worker hsr", line_deadline=0.1)


# ==================== PARSING ====================

def test_every_message_kind_parses_back():
    for message in VALID:
        assert parse_message(message.encode()) == message


@pytest.mark.parametrize("line, code", [
    (b"\xff\xfe", "malformed"),
    (b"[1, 2]", "malformed"),
    (b"{\"type\": \"ping\"", "malformed"),
    (b"{\"type\": \"teleport\"}", "unknown_type"),
    (b"{\"robot\": \"hsr\"}", "unknown_type"),
    (b"{\"type\": \"hello\"}", "invalid_message"),
    (b"{\"type\": \"task_status\", \"robot\": \"r\", \"task_id\": \"t\", \"status\": \"paused\"}", "invalid_message"),
    (b"{\"type\": \"ping\", \"extra\": 1}", "invalid_message"),
])
def test_bad_lines_raise_protocol_errors(line, code):
    with pytest.raises(ProtocolError) as excinfo:
        parse_message(line)
    assert excinfo.value.code == code


# ==================== FUZZ ====================

@pytest.mark.parametrize("make_server", [fleetd_server, worker_server], ids=["fleetd", "worker"])
def test_garbage_is_answered_with_errors(make_server):
    async def scenario():
        server = make_server()
        conn = fake_conn(server.app)
        rng = random.Random(42)
        for line in garbage_lines(rng, 10_000):
            reply = await server.process_line(line, conn)
            assert isinstance(reply, ErrorReply), line
        assert isinstance(await server.process_line(Ping().encode(), conn), Pong)

    run(scenario())


def test_connection_survives_garbage_over_tcp():
    async def scenario():
        server = fleetd_server()
        _, port = await server.start("127.0.0.1", 0)
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        try:
            rng = random.Random(3)
            for line in garbage_lines(rng, 300):
                writer.write(line.replace(b"\r", b"") + b"\n")
                await writer.drain()
                reply = json.loads(await asyncio.wait_for(reader.readline(), 2))
                assert reply["type"] == "error"
            writer.write(Ping().encode())
            await writer.drain()
            assert parse_message(await asyncio.wait_for(reader.readline(), 2)) == Pong()
        finally:
            writer.close()
            await server.close()

    run(scenario())


# ==================== ROUTING ====================

def test_worker_rejects_manager_only_messages():
    async def scenario():
        server = worker_server()
        reply = await server.process_line(Hello(robot="hsr").encode(), fake_conn(server.app))
        assert reply.code == "unsupported"

    run(scenario())


def test_slow_handler_hits_the_line_deadline():
    router = Router("slow")

    @router.message("ping")
    async def slow_ping(message, conn):
        await asyncio.sleep(1)
        return Pong()

    async def scenario():
        server = WireServer(router, line_deadline=0.05)
        reply = await server.process_line(Ping().encode(), fake_conn(None))
        assert reply.code == "deadline_exceeded"

    run(scenario())


def test_busy_worker_rejects_second_task():
    async def scenario():
        sim = SimulatedWorker(WorkerProfile(robot_name="hsr", task_duration=5))
        server = WireServer(worker_router(), app=sim, line_deadline=0.1)
        conn = fake_conn(sim)
        first = ExecuteTask(task_id="t1", description="Go to the kitchen", attempt=1)
        second = ExecuteTask(task_id="t2", description="Go to the hallway", attempt=1)
        assert await server.process_line(first.encode(), conn) is None
        await asyncio.sleep(0)
        reply = await server.process_line(second.encode(), conn)
        assert reply.code == "busy"
        assert sim.cancel("t1")
        await asyncio.sleep(0)
        await asyncio.sleep(0)
        assert sim.current is None

    run(scenario())


def test_unknown_robot_status_is_rejected():
    async def scenario():
        server = fleetd_server()
        message = TaskStatusMessage(robot="ghost", task_id="t1", status="started")
        reply = await server.process_line(message.encode(), fake_conn(server.app))
        assert reply.code == "unknown_robot"

    run(scenario())


def test_router_refuses_duplicate_handlers():
    router = Router("dup")
    router.message("ping")(lambda message, conn: None)
    with pytest.raises(ValueError):
        router.message("ping")(lambda message, conn: None)


@pytest.mark.parametrize("message", [
    CtlGoalAdd(text="   "),
    CtlWorldAdd(text="\t"),
])
def test_blank_operator_text_is_a_schema_error(message):
    async def scenario():
        server = fleetd_server()
        reply = await server.process_line(message.encode(), fake_conn(server.app))
        assert isinstance(reply, ErrorReply)
        assert reply.code == "schema_error"
        assert server.app.store.counters == {}
        assert server.app.store.goals == [] and server.app.store.world.statements == []

    run(scenario())


def test_blank_robot_statements_are_dropped():
    message = ReplanRequest(robot="locobot", statements=["  ", "The door is open. "])
    assert message.statements == ["The door is open."]
