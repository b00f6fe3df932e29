"""Exception hierarchy shared by every pcmmap module."""


class PcmmapError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class ParseError(PcmmapError):
    pass


class ValidationError(PcmmapError):
    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class UnknownVariable(PcmmapError):
    pass


class NumericOverflow(PcmmapError):
    pass


class InvalidSpec(PcmmapError):
    pass


class DimensionMismatch(PcmmapError):
    pass


class NonpositiveCircuitValue(PcmmapError):
    pass


class OverlappingAssignments(PcmmapError):
    pass


class InvalidPartition(PcmmapError):
    pass


class QueryTooLarge(PcmmapError):
    pass


class ZeroEvidenceProbability(PcmmapError):
    pass


class ConflictingLeafAssignment(PcmmapError):
    pass


class StaleCache(PcmmapError):
    pass


class DegeneratePartition(PcmmapError):
    pass


class MethodSetMismatch(PcmmapError):
    pass
