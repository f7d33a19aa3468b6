"""Exception hierarchy shared across the package."""


class AgentGridError(Exception):
    """Base class for every error raised by agentgrid."""


class UnknownModule(AgentGridError):
    def __init__(self, slot: str, name: str):
        super().__init__(f"unknown module: {slot}={name!r}")
        self.slot = slot
        self.name = name


class EmptyDesignDimension(AgentGridError):
    def __init__(self, kind: str):
        super().__init__(f"empty design dimension: {kind}")
        self.kind = kind


class InvalidSpec(AgentGridError):
    def __init__(self, violations):
        super().__init__("invalid module spec: " + "; ".join(violations))
        self.violations = list(violations)


class PlanParseError(AgentGridError):
    def __init__(self, raw: str):
        super().__init__("plan parse failure")
        self.raw = raw


class ReasoningProviderError(AgentGridError):
    pass


class ToolHallucination(AgentGridError):
    def __init__(self, answer: str):
        super().__init__(f"tool hallucination: {answer!r}")
        self.answer = answer


class ProviderUnavailable(AgentGridError):
    pass


class UnscriptedPrompt(AgentGridError):
    def __init__(self, digest: str):
        super().__init__(f"unscripted prompt: {digest}")
        self.digest = digest


class CacheMiss(AgentGridError):
    def __init__(self, key: str):
        super().__init__(f"replay cache miss: {key}")
        self.key = key


class CacheCorruption(AgentGridError):
    def __init__(self, line: int, reason: str = ""):
        msg = f"cache corruption at line {line}"
        super().__init__(msg + (f": {reason}" if reason else ""))
        self.line = line


class EpisodeFinished(AgentGridError):
    def __init__(self):
        super().__init__("episode finished")


class LandscapeTooLarge(AgentGridError):
    def __init__(self, count: int):
        super().__init__(f"landscape too large for exhaustive oracle ({count} combinations)")
        self.count = count


class StoreUnavailable(AgentGridError):
    pass


class CorruptStore(AgentGridError):
    def __init__(self, line: int, reason: str = ""):
        super().__init__(f"corrupt experience store: line {line}" + (f" ({reason})" if reason else ""))
        self.line = line


class SearchConfigError(AgentGridError):
    pass
