"""Column keep-masks produced by the selection methods."""
from dataclasses import dataclass

import numpy as np

PROVENANCES = ("anova", "lasso", "manual")


@dataclass(frozen=True)
class FeatureMask:
    keep: np.ndarray
    provenance: str = "manual"
    scores: np.ndarray | None = None  # F statistics or coefficients behind the choice

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool).ravel()
        if not keep.any():
            raise ValueError("a feature mask must keep at least one column")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown mask provenance {self.provenance!r}")
        object.__setattr__(self, "keep", keep)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    def kept_names(self, names) -> list[str]:
        return [names[i] for i in self.indices]
