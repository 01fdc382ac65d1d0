"""Exception types raised across the package."""


class SpfdError(Exception):
    """Base class for all errors raised by this package."""


class PhantomFormatError(SpfdError):
    """Voxel phantom file is malformed (header, payload size, tissue table)."""


class UnknownTissueError(SpfdError):
    """A tissue ID has no entry in the model's tissue table."""


class GeometryError(SpfdError):
    """A requested analytic shape does not fit inside the voxel grid."""


class SingularPointError(SpfdError):
    """Field evaluation point lies (numerically) on the coil wire."""


class FieldFormatError(SpfdError):
    """Field sample file is malformed."""


class LatticeError(SpfdError):
    """Sample lattice cannot support the requested interpolation."""


class ProjectionError(SpfdError):
    """Divergence cleaning failed to reach the requested tolerance."""


class GaugingStallError(SpfdError):
    """Greedy face elimination exhausted its queue with edges undetermined."""

    def __init__(self, undetermined: int):
        super().__init__(f"gauging stalled with {undetermined} undetermined edges")
        self.undetermined = undetermined


class IncompatibleFluxError(SpfdError):
    """Face fluxes are not compatible: the gauged potential cannot reproduce them."""

    def __init__(self, rel_residual: float, worst_face: int, worst_value: float):
        super().__init__(
            f"incompatible fluxes: relative residual {rel_residual:.3e}, "
            f"worst face {worst_face} (defect {worst_value:.3e})"
        )
        self.rel_residual = rel_residual
        self.worst_face = worst_face
        self.worst_value = worst_value


class EmptySystemError(SpfdError):
    """The model contains no electrically conductive voxels."""


class SolverError(SpfdError):
    """Linear solver breakdown (non-finite input or iterate)."""


class PipelineError(SpfdError):
    """A pipeline step failed; carries the step name."""

    def __init__(self, step: str, message: str):
        super().__init__(f"step '{step}': {message}")
        self.step = step
