"""Exception hierarchy.

Every domain failure derives from :class:`SceneStitchError` so the CLI can
report it as structured JSON and exit with status 1.
"""


class SceneStitchError(Exception):
    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class UnknownNode(SceneStitchError):
    code = "unknown_node"


class DuplicateNode(SceneStitchError):
    code = "duplicate_node"


class DuplicateEdge(SceneStitchError):
    code = "duplicate_edge"


class SelfLoop(SceneStitchError):
    code = "self_loop"


class NoSuchEdge(SceneStitchError):
    code = "no_such_edge"


class UnknownRelation(SceneStitchError):
    code = "unknown_relation"


class SchemaMissingInverse(SceneStitchError):
    code = "schema_missing_inverse"


class GenerationFailure(SceneStitchError):
    code = "generation_failure"


class ParseError(SceneStitchError):
    code = "parse_error"

    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason

    def to_dict(self):
        return {"error": self.code, "line": self.line, "reason": self.reason}


class UnknownSymbol(SceneStitchError):
    code = "unknown_symbol"


class ContextOverflow(SceneStitchError):
    code = "context_overflow"


class FramingError(SceneStitchError):
    code = "framing_error"

    def __init__(self, position, expected):
        super().__init__(f"position {position}: expected {expected}")
        self.position = position
        self.expected = expected


class EmptyMask(SceneStitchError):
    code = "empty_mask"


class NonFiniteLoss(SceneStitchError):
    code = "non_finite_loss"


class FormatError(SceneStitchError):
    code = "format_error"


class VersionMismatch(SceneStitchError):
    code = "version_mismatch"


class ShapeMismatch(SceneStitchError):
    code = "shape_mismatch"


class EmptyInput(SceneStitchError):
    code = "empty_input"
