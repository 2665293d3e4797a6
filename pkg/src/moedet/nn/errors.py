"""Errors raised by the compute layer."""


class ComputeError(Exception):
    pass


class ShapeMismatchError(ComputeError):
    """An op received tensors whose extents do not line up.

    The message always names the op and the offending extents.
    """

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class MissingTensorError(ComputeError):
    """A graph referenced a parameter or input that was not supplied."""


class NonScalarLossError(ComputeError):
    """backward() was asked to start from a non-scalar tensor."""


class NonDifferentiableError(ComputeError):
    """Gradient was requested through an index-selection op."""


class TieAtCheckpointError(ComputeError):
    """Finite differences were requested at a point where a top-k
    selection is within the tie margin; the caller must resample."""
