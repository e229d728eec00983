"""Exception hierarchy for the orchestration runtime.

Every failure mode a caller is expected to handle has its own class so test
code and the gateway can match on type rather than message text.
"""


class ModalmuxError(Exception):
    """Base class for all runtime errors."""


# --- protocol ---------------------------------------------------------------

class MalformedToken(ModalmuxError):
    """Token text does not match the [S.name] grammar."""


class DuplicateToken(ModalmuxError):
    """Token is already registered."""


class BuiltinOverride(ModalmuxError):
    """Attempt to register or unregister a builtin token."""


class UnknownModality(ModalmuxError):
    """A need-token names a modality the registry cannot resolve."""


# --- controller -------------------------------------------------------------

class BudgetExceeded(ModalmuxError):
    """Prompt budget cannot be met even after dropping all context."""


class BackendTimeout(ModalmuxError):
    """A backend call exceeded its deadline."""


class BackendError(ModalmuxError):
    """Transport or status failure talking to a backend."""


class ControlTokenLeak(ModalmuxError):
    """Fused output still contained control tokens after a retry."""


# --- memory -----------------------------------------------------------------

class SchemaViolation(ModalmuxError):
    """Record does not validate against the memory record schema."""


class TurnOrderViolation(ModalmuxError):
    """Appended item's turn id is lower than an existing one."""


class BudgetInfeasible(ModalmuxError):
    """The verbatim-kept recent turns alone exceed the memory budget."""


# --- experts ----------------------------------------------------------------

class NoBackend(ModalmuxError):
    """No backend registered for the requested modality."""


class DuplicateBackend(ModalmuxError):
    """Backend with the same (modality, identity) already registered."""


class TranscriptionFailure(ModalmuxError):
    """ASR adapter could not produce a transcript."""


# --- tts --------------------------------------------------------------------

class EmptyText(ModalmuxError):
    """Segmentation input is empty after normalization."""


class EngineFailure(ModalmuxError):
    """Speech engine failed to synthesize a segment."""


class OrderViolation(ModalmuxError):
    """Audio chunk arrived out of index order."""


# --- orchestrator / gateway -------------------------------------------------

class UnknownTurn(ModalmuxError):
    """No trace recorded for the requested turn id."""


class UnknownSession(ModalmuxError):
    """Session id does not exist."""


class CapacityExceeded(ModalmuxError):
    """Server session limit reached."""


class PayloadTooLarge(ModalmuxError):
    """Submitted turn payload exceeds the configured limit."""


# --- harness ----------------------------------------------------------------

class ScenarioParseError(ModalmuxError):
    """Scenario file is malformed."""


class ExpectationFailure(ModalmuxError):
    """A scenario expectation did not hold."""


class CorpusEmpty(ModalmuxError):
    """Benchmark corpus contains no usable utterances."""


class FileMissing(ModalmuxError):
    """Referenced input file does not exist."""
