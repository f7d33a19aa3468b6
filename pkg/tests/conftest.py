from dataclasses import dataclass, field

import pytest

from agentgrid.llm import CompletionRequest, CompletionResponse, count_tokens
from agentgrid.modules.catalog import seed_pools


@dataclass
class Recorder:
    """Provider that replies from a list (last one repeats) and logs every request."""

    replies: list = field(default_factory=lambda: ["ok"])
    requests: list = field(default_factory=list)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        self.requests.append(req)
        text = self.replies[min(len(self.requests) - 1, len(self.replies) - 1)]
        return CompletionResponse(text, count_tokens(req.prompt), count_tokens(text), "recorder")

    @property
    def calls(self) -> int:
        return len(self.requests)


@pytest.fixture
def recorder():
    return Recorder


@pytest.fixture
def pools():
    return seed_pools()
