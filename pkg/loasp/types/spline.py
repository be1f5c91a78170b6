"""Knot vector type."""

from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class KnotVector(BaseModel):
    """Non-decreasing knots u_0..u_m for B-splines of a given degree.

    The evaluation domain is [u_p, u_{m-p}] and there are n = m - p basis
    functions.
    """

    model_config = ConfigDict(frozen=True)

    degree: int = Field(ge=0)
    knots: List[float]

    @model_validator(mode="after")
    def _check_knots(self) -> "KnotVector":
        values = self.knots
        if len(values) < 2 * self.degree + 2:
            raise ValueError(
                f"degree {self.degree} needs at least {2 * self.degree + 2} knots, got {len(values)}"
            )
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValueError("knots must be non-decreasing")
        m = len(values) - 1
        if not values[self.degree] < values[m - self.degree]:
            raise ValueError("knot domain is degenerate")
        return self

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=np.float64)

    @property
    def num_basis(self) -> int:
        return len(self.knots) - 1 - self.degree

    @property
    def domain(self) -> Tuple[float, float]:
        m = len(self.knots) - 1
        return self.knots[self.degree], self.knots[m - self.degree]
