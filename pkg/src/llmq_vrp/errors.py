"""Exception types shared across the package."""


class VRPError(Exception):
    pass


# --- instance parsing / serialization -------------------------------------

class InstanceFormatError(VRPError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingSection(InstanceFormatError):
    pass


class MalformedLine(InstanceFormatError):
    pass


class DuplicateNodeId(InstanceFormatError):
    pass


class DepotDemandNonzero(InstanceFormatError):
    pass


class InfeasibleAugmentation(VRPError):
    pass


class SchemaVersionMismatch(VRPError):
    pass


class ParseError(VRPError):
    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)


# --- evaluation / oracle ----------------------------------------------------

class UnknownNode(VRPError):
    pass


class TooLarge(VRPError):
    def __init__(self, n, limit):
        self.n, self.limit = n, limit
        super().__init__(f"{n} customers exceeds oracle limit {limit}")


class Infeasible(VRPError):
    pass


class NonPositiveOptimal(VRPError):
    pass


# --- environment / learning -------------------------------------------------

class IllegalAction(VRPError):
    pass


class IncompleteEpisode(VRPError):
    pass


class ShapeMismatch(VRPError):
    pass


class NonFiniteInput(VRPError):
    pass


class Underfilled(VRPError):
    pass


class StaleIndex(VRPError):
    pass


class CheckpointCorrupt(VRPError):
    pass


# --- advisor ----------------------------------------------------------------

class BackendUnavailable(VRPError):
    pass


class MissingOracle(VRPError):
    pass
