"""Result records shared by the PDE solvers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list
    sup_sigma1: float = float("nan")
    u_inf: float = float("nan")
    sup_grad: float = float("nan")
    inf_f: float = float("nan")
    min_margin: float = float("nan")
    eps: Optional[float] = None
    moment_norm: float = float("nan")
    grid_residual: float = float("nan")
    linear_iterations: int = 0
    message: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    def to_record(self) -> dict:
        """Flat record; ``extras`` entries are prefixed with ``x_``."""
        d = asdict(self)
        d["residual"] = self.residual
        extras = d.pop("extras")
        d.update({f"x_{k}": v for k, v in extras.items()})
        return d
