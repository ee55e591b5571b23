import asyncio
import logging
from abc import ABC, abstractmethod
from typing import Callable, Dict, List, Optional

import aiohttp

from app.config import settings
from app.exceptions import BackendUnavailable

logger = logging.getLogger(__name__)

Messages = List[Dict[str, str]]


class CompletionClient(ABC):
    """Anything that turns a chat transcript into the assistant's reply text"""

    @abstractmethod
    async def complete(self, messages: Messages) -> str:
        ...


class LLMClient(CompletionClient):
    """Client for a chat-completions style endpoint (OpenRouter, OpenAI, vLLM...)"""

    def __init__(self, endpoint: Optional[str] = None, model: Optional[str] = None,
                 api_key: Optional[str] = None, timeout: Optional[float] = None):
        self.endpoint = endpoint or settings.LLM_ENDPOINT
        self.model = model or settings.LLM_MODEL
        self.api_key = api_key if api_key is not None else settings.LLM_API_KEY
        self.timeout = timeout or settings.LLM_TIMEOUT

    async def complete(self, messages: Messages) -> str:
        """
        Send one chat-completions request

        Args:
            messages: Chat transcript, oldest first

        Returns:
            Content of the first choice

        Raises:
            BackendUnavailable: On network errors, timeouts, non-200 replies or
                replies without a message
        """
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": 0.0,
            "stream": False,
        }

        logger.info(f"Sending completion request to {self.endpoint} with model: {self.model}")

        try:
            async with aiohttp.ClientSession() as session:
                async with session.post(self.endpoint, json=payload, headers=headers,
                                        timeout=aiohttp.ClientTimeout(total=self.timeout)) as response:
                    if response.status != 200:
                        error_text = await response.text()
                        logger.error(f"LLM endpoint error: {response.status} - {error_text[:500]}")
                        raise BackendUnavailable(f"LLM endpoint returned {response.status}")
                    result = await response.json()
        except BackendUnavailable:
            raise
        except (aiohttp.ClientError, asyncio.TimeoutError) as e:
            logger.error(f"LLM request failed: {e!r}")
            raise BackendUnavailable(f"LLM endpoint unreachable: {e!r}")

        choices = result.get('choices') or []
        if not choices:
            logger.error("No choices in LLM response")
            raise BackendUnavailable("LLM response has no choices")
        content = (choices[0].get('message') or {}).get('content')
        if not isinstance(content, str):
            raise BackendUnavailable("LLM response has no text content")
        return content

    async def test_connection(self) -> bool:
        """Test the endpoint with a tiny request"""
        try:
            await self.complete([{"role": "user", "content": "test"}])
            return True
        except BackendUnavailable as e:
            logger.error(f"Connection test failed: {e.message}")
            return False


class ReplayClient(CompletionClient):
    """
    Offline stand-in: answers come from a list of canned replies or a
    responder callable. Every transcript it receives is kept in ``calls``.
    """

    def __init__(self, replies: Optional[List[str]] = None,
                 responder: Optional[Callable[[Messages], str]] = None):
        if replies is None and responder is None:
            raise ValueError("ReplayClient needs replies or a responder")
        self.replies = list(replies or [])
        self.responder = responder
        self.calls: List[Messages] = []

    async def complete(self, messages: Messages) -> str:
        self.calls.append([dict(m) for m in messages])
        if self.responder is not None:
            return self.responder(messages)
        if not self.replies:
            raise BackendUnavailable("replay client has no replies left")
        # The last reply repeats once the list runs out
        return self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
