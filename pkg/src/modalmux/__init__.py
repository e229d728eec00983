"""Training-free multimodal orchestration runtime.

A controller model routes each user turn through control tokens, expert
backends contribute modality-specific data, a cross-modal memory pool keeps
the dialogue context under budget, and a parallel, interruptible TTS pipeline
streams the spoken reply.
"""

from .errors import ModalmuxError
from .protocol import ControlToken, ControllerOutput, InstructionRegistry, split_tokens
from .memory import MemoryItem, MemoryStore
from .orchestrator import Session, TurnResult
from .runtime import RuntimeConfig, build_session

__all__ = [
    "ModalmuxError",
    "ControlToken",
    "ControllerOutput",
    "InstructionRegistry",
    "split_tokens",
    "MemoryItem",
    "MemoryStore",
    "Session",
    "TurnResult",
    "RuntimeConfig",
    "build_session",
]

__version__ = "0.1.0"
