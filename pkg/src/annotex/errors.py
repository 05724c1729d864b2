"""Exception hierarchy shared by every annotex module."""


class AnnotexError(Exception):
    """Base class for all errors raised by annotex."""


# -- graph construction / evaluation -------------------------------------

class GraphError(AnnotexError):
    pass


class CycleDetected(GraphError):
    pass


class DanglingEdge(GraphError):
    pass


class DuplicateNode(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class InputWithIncoming(GraphError):
    pass


class OutputWithOutgoing(GraphError):
    pass


class MissingOperator(GraphError):
    pass


class MissingIncoming(GraphError):
    """A compute or output node has no incoming edge."""


class InvalidOperator(GraphError):
    pass


class MissingInput(GraphError):
    pass


class ExtraInput(GraphError):
    pass


class NonFiniteActivation(GraphError):
    def __init__(self, node, value=None):
        self.node = node
        self.value = value
        super().__init__(f"non-finite activation at node {node!r}: {value!r}")


class UnknownNode(GraphError):
    pass


class NotComputeNode(GraphError):
    pass


class PartitionNotCovering(GraphError):
    pass


class PartitionOverlap(GraphError):
    pass


class MalformedTree(GraphError):
    """A tree description is not binary, not finite or has an unreachable leaf."""


# -- subgraphs and annotations -------------------------------------------

class InvalidSubgraph(AnnotexError):
    def __init__(self, message, annotation_id=None):
        self.annotation_id = annotation_id
        super().__init__(message)


class BundleError(AnnotexError):
    """Hierarchy problems; ``path`` points into the bundle file when parsed from one."""

    def __init__(self, message, path=""):
        self.path = path
        self.detail = message
        super().__init__(f"{path}: {message}" if path else message)


class DanglingChild(BundleError):
    pass


class DuplicateParent(BundleError):
    pass


class NotATree(BundleError):
    pass


class UnknownNodeRef(BundleError):
    pass


class EmptyEvidence(BundleError):
    pass


class DuplicateId(BundleError):
    pass


# -- evidence ------------------------------------------------------------

class EvidenceError(AnnotexError):
    pass


class NotAffine(EvidenceError):
    def __init__(self, node, reason=""):
        self.node = node
        msg = f"subgraph is not affine at node {node!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class MultipleExits(EvidenceError):
    pass


class TargetResolutionError(EvidenceError):
    pass


# -- file formats --------------------------------------------------------

class ParseError(AnnotexError):
    """Raised for any malformed input file. ``path`` is a JSON pointer."""

    def __init__(self, message, path=""):
        self.path = path
        self.detail = message
        where = path or "/"
        super().__init__(f"{where}: {message}")


class JSONSyntaxError(ParseError):
    pass


class SchemaError(ParseError):
    pass


class SemanticError(ParseError):
    pass
