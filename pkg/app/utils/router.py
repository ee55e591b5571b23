"""
Message routing by wire ``type``. Handlers register on a Router with
a decorator and routers nest with include_router.
"""
import logging
from typing import Awaitable, Callable, Dict, List, Optional

logger = logging.getLogger(__name__)

Handler = Callable[..., Awaitable[Optional[object]]]


class Router:
    def __init__(self, name: str = "root"):
        self.name = name
        self.handlers: Dict[str, Handler] = {}
        self.sub_routers: List["Router"] = []

    def message(self, *message_types: str) -> Callable[[Handler], Handler]:
        """
        Register a handler for one or more message types

        Usage:
            @router.message("ctl_goal_add")
            @error_handler
            async def goal_add(message, conn):
                ...
        """
        def decorator(func: Handler) -> Handler:
            for message_type in message_types:
                if message_type in self.handlers:
                    raise ValueError(f"router '{self.name}' already handles '{message_type}'")
                self.handlers[message_type] = func
            return func
        return decorator

    def include_router(self, router: "Router") -> None:
        self.sub_routers.append(router)

    def resolve(self, message_type: str) -> Optional[Handler]:
        if message_type in self.handlers:
            return self.handlers[message_type]
        for router in self.sub_routers:
            handler = router.resolve(message_type)
            if handler is not None:
                return handler
        return None

    def handled_types(self) -> List[str]:
        types = list(self.handlers)
        for router in self.sub_routers:
            types.extend(router.handled_types())
        return sorted(types)
