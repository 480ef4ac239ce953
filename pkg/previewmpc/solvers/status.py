import enum


class Status(str, enum.Enum):
    """Termination status shared by the LP and QP kernels and the OCP layer."""

    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"

    def __str__(self) -> str:
        return self.value
