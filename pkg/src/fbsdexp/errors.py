"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical procedure produced non-finite values or failed to converge."""


class ODEBlowUp(NumericalError):
    def __init__(self, node: int, message: str = "non-finite state encountered"):
        super().__init__(f"{message} at node {node}")
        self.node = node


class SingularRegression(NumericalError):
    def __init__(self, step: int, condition: float):
        super().__init__(f"singular regression matrix at step {step} (condition number {condition:.3e})")
        self.step = step
        self.condition = condition


class ConfigError(ValueError):
    """Invalid experiment configuration."""
