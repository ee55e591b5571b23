"""Worker-side handlers for messages fleetd sends to a robot"""
import logging

from app.services.protocol import CancelTask, ExecuteTask, Pong
from app.utils.decorators import error_handler
from app.utils.router import Router

logger = logging.getLogger(__name__)

router = Router("robot")


@router.message("execute_task")
@error_handler
async def execute_task(message: ExecuteTask, conn):
    # Statuses travel over the manager link, not as replies
    conn.app.accept(message)
    return None


@router.message("cancel_task")
@error_handler
async def cancel_task(message: CancelTask, conn):
    if not conn.app.cancel(message.task_id):
        logger.info(f"Cancel for {message.task_id} ignored; it is not running")
    return None


@router.message("ping")
@error_handler
async def ping(message, conn):
    return Pong()
