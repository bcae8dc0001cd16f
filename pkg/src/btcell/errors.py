"""Exception types shared across the package."""


class BtcellError(Exception):
    """Base class for all package errors."""


# --- behavior tree ---

class MalformedTree(BtcellError):
    """A tree violates a structural invariant (detected at tick or validation time)."""


class UnknownAtom(BtcellError):
    """A condition references a predicate symbol absent from the domain."""


class SchemaViolation(BtcellError):
    """A BT document does not conform to the published schema.

    Carries the path to the offending node, e.g. ``root.children[1]``.
    """

    def __init__(self, message: str, path: str = "root"):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.reason = message


class SchemaMismatch(BtcellError):
    """An action unit's target is not among the action's declared effects."""


class NoFailure(BtcellError):
    """failed_node was called but the last tick did not return Failure."""


# --- world model ---

class UnknownSymbol(BtcellError):
    """A predicate or action symbol is not declared in the domain."""


class UnknownObject(BtcellError):
    """An atom references an object outside the closed object set."""


class DuplicateAtom(BtcellError):
    """The same ground atom appears twice in a setup document."""


class PreconditionUnsatisfied(BtcellError):
    """An action's schema precondition does not hold; names the first failing atom."""

    def __init__(self, atom):
        super().__init__(f"precondition not satisfied: {atom}")
        self.atom = atom


class VirtualFailure(BtcellError):
    """Virtual ticking of a subtree returned Failure (logical incoherence)."""

    def __init__(self, node_id: str, atom=None):
        detail = f" ({atom})" if atom is not None else ""
        super().__init__(f"virtual execution failed at node {node_id}{detail}")
        self.node_id = node_id
        self.atom = atom


class DomainMismatch(BtcellError):
    """Two world states built over different object sets were compared."""


# --- planner ---

class ParseFailure(BtcellError):
    """A backend reply could not be parsed into its structured form."""


class UngroundedSymbol(BtcellError):
    """A backend reply references an object or skill outside the provided sets."""


class MaxRoundsExceeded(BtcellError):
    """The refine-round budget for a planning stage was exhausted."""


class PlanningStageError(BtcellError):
    """A pipeline stage failed; wraps the underlying error with its stage index."""

    def __init__(self, stage: int, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


class IncoherentSequence(BtcellError):
    """A planned action sequence breaks precondition chaining.

    ``step`` is the index of the first failing action.
    """

    def __init__(self, step: int, atom=None):
        detail = f": {atom}" if atom is not None else ""
        super().__init__(f"incoherent action sequence at step {step}{detail}")
        self.step = step
        self.atom = atom


# --- simulation / execution ---

class InvalidDisturbance(BtcellError):
    """A disturbance payload does not match its kind's invariants."""


class EnvDesync(BtcellError):
    """Belief/environment invariant breach in deterministic mode (a bug)."""


# --- service ---

class WrongPhase(BtcellError):
    """A session operation was requested in an incompatible phase."""
