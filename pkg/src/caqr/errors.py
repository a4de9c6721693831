"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line entry point:
1 usage, 2 configuration, 3 data, 4 numeric divergence.
"""


class CaqrError(Exception):
    exit_code = 1


class ConfigError(CaqrError):
    exit_code = 2

    def __init__(self, key, message=None):
        self.key = key
        self.detail = message
        super().__init__(f"{key}: {message}" if message else key)


class DataError(CaqrError):
    exit_code = 3


class NumericError(CaqrError):
    exit_code = 4


# kg-store
class ParseError(DataError):
    def __init__(self, line, message="malformed line"):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EmptyGraph(DataError):
    pass


class IdOutOfRange(DataError):
    pass


class UnknownEntity(DataError):
    pass


class UnknownRelation(DataError):
    pass


# query-model
class ArityMismatch(DataError):
    pass


class PositionOverflow(DataError):
    pass


class UnsupportedUnionShape(DataError):
    pass


class NodeNotFound(DataError):
    pass


class NoIncidentRelations(DataError):
    pass


# traversal-oracle
class GroundingFailed(DataError):
    pass


# diff-engine
class ShapeMismatch(NumericError):
    pass


class DomainError(NumericError):
    pass


class NonScalarRoot(NumericError):
    pass


# backends / context
class FewerThanTwo(CaqrError):
    pass


class EmptyDisjuncts(CaqrError):
    pass


class NegationUnsupported(ConfigError):
    def __init__(self, types=()):
        names = ",".join(types) if types else "negation"
        super().__init__(
            "backend",
            f"box backend cannot represent negation; query types {names} are excluded",
        )


class DimMismatch(NumericError):
    pass


class CheckpointError(DataError):
    pass


# trainer
class NoNegativesAvailable(DataError):
    pass


class VarianceOnBoxBackend(ConfigError):
    def __init__(self):
        super().__init__("var_weight", "variance loss is only defined for the beta backend")


class DivergedLoss(NumericError):
    def __init__(self, step, value):
        self.step = step
        super().__init__(f"non-finite loss {value!r} at step {step}")


# evaluator
class TargetFiltered(DataError):
    pass


class EmptyGroup(DataError):
    pass


class CoverageMismatch(DataError):
    pass
