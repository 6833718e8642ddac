"""Exception hierarchy shared by all modules."""


class OmsqueezeError(Exception):
    pass


class DomainError(OmsqueezeError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DataError(OmsqueezeError, ValueError):
    """Input data is malformed, non-finite, or physically impossible."""


class ConfigError(OmsqueezeError, ValueError):
    pass


class GridMismatchError(OmsqueezeError, ValueError):
    pass


class DegenerateGeometryError(OmsqueezeError, ValueError):
    """The homodyne resultant carrier vanishes, so its angle is undefined."""


class DivergenceError(OmsqueezeError, ArithmeticError):
    pass


class QuadratureOutOfRange(OmsqueezeError, ValueError):
    def __init__(self, target, max_angle):
        self.target = target
        self.max_angle = max_angle
        super().__init__(
            f"quadrature {target:.6g} rad is not reachable; "
            f"maximum reachable angle is {max_angle:.6g} rad"
        )
