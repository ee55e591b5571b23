import logging
from functools import wraps
from typing import Any, Callable

from app.exceptions import FleetError
from app.services.protocol import ErrorReply

logger = logging.getLogger(__name__)


def log_action(action_name: str):
    """
    Decorator to log handled wire messages

    Usage:
        @router.message("ctl_goal_add")
        @log_action("goal_add")
        async def goal_add(message, conn):
            ...
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        async def wrapper(message, conn, *args, **kwargs) -> Any:
            who = getattr(conn, "robot", None) or getattr(conn, "peer", "?")
            logger.info(f"[{action_name}] from {who}")
            return await func(message, conn, *args, **kwargs)
        return wrapper
    return decorator


def error_handler(func: Callable) -> Callable:
    """
    Decorator to turn exceptions into error replies

    Domain errors keep their code; anything else is logged with its
    traceback and answered with code "internal". The connection stays open.

    Usage:
        @router.message("ctl_plan_create")
        @error_handler
        async def plan_create(message, conn):
            ...
    """
    @wraps(func)
    async def wrapper(message, conn, *args, **kwargs) -> Any:
        try:
            return await func(message, conn, *args, **kwargs)
        except FleetError as e:
            logger.info(f"{func.__name__} rejected: {e.code}: {e.message}")
            return ErrorReply(code=e.code, message=e.message)
        except Exception as e:
            logger.error(f"Error in {func.__name__}: {str(e)}", exc_info=True)
            return ErrorReply(code="internal", message=f"internal error: {e.__class__.__name__}")

    return wrapper
