"""Messages robot workers send to fleetd"""
from app.services.protocol import Hello, Pong, ReplanRequest, TaskStatusMessage
from app.utils.decorators import error_handler, log_action
from app.utils.router import Router

router = Router("worker")


@router.message("hello")
@error_handler
@log_action("hello")
async def hello(message: Hello, conn):
    conn.app.on_hello(message.robot, conn)
    conn.robot = message.robot
    return None


@router.message("task_status")
@error_handler
async def task_status(message: TaskStatusMessage, conn):
    conn.app.on_task_status(message)
    return None


@router.message("replan_request")
@error_handler
@log_action("replan_request")
async def replan_request(message: ReplanRequest, conn):
    conn.app.on_replan_request(message)
    return None


@router.message("ping")
@error_handler
async def ping(message, conn):
    return Pong()


@router.message("pong")
async def pong(message, conn):
    return None
