from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class PanelDataset:
    """
    Balanced panel held as dense arrays, units sorted by id.

    Periods are carried both as user labels (`periods`) and as internal indices 1..T.
    `group` holds the internal index of the first treated period; T+1 marks never-treated.
    """
    unit_ids: Tuple[str, ...]
    periods: Tuple[int, ...]
    outcome: Optional[np.ndarray]          # n x T
    group: np.ndarray                      # n, ints in 2..T+1
    tv: np.ndarray                         # n x T x k
    tv_names: Tuple[str, ...]
    ti: np.ndarray                         # n x l
    ti_names: Tuple[str, ...]
    sample_weight: np.ndarray              # n, strictly positive
    region: Optional[np.ndarray] = None    # n, labels

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def T(self) -> int:
        return len(self.periods)

    @property
    def k(self) -> int:
        return self.tv.shape[2]

    @property
    def l(self) -> int:
        return self.ti.shape[1]

    @property
    def never_index(self) -> int:
        return self.T + 1

    @property
    def never_treated(self) -> np.ndarray:
        return self.group == self.never_index

    @property
    def treat_matrix(self) -> np.ndarray:
        """D_it = 1{t >= G_i} as floats."""
        idx = np.arange(1, self.T + 1)
        return (idx[None, :] >= self.group[:, None]).astype(float)

    @property
    def treated_groups(self) -> List[int]:
        """Internal indices of groups that are ever treated, ascending."""
        return sorted(int(g) for g in np.unique(self.group) if g <= self.T)

    def label(self, index: int) -> int:
        """Period label of internal index (1-based)."""
        return self.periods[index - 1]

    def index(self, label: int) -> int:
        """Internal index (1-based) of a period label."""
        try:
            return self.periods.index(int(label)) + 1
        except ValueError:
            raise KeyError(f"unknown period: {label}") from None

    def group_label(self, g: int) -> Optional[int]:
        return None if g == self.never_index else self.label(g)

    def require_outcome(self) -> np.ndarray:
        if self.outcome is None:
            raise ValueError("this operation needs an outcome; dataset was loaded without one")
        return self.outcome

    def take(self, indices: np.ndarray) -> "PanelDataset":
        """
        Dataset made of the given unit rows (repeats allowed).
        Repeated units get a `#<k>` suffix so ids stay unique.
        """
        indices = np.asarray(indices, dtype=int)
        seen: dict = {}
        ids: List[str] = []
        for i in indices:
            base = self.unit_ids[i]
            c = seen.get(base, 0)
            seen[base] = c + 1
            ids.append(base if c == 0 else f"{base}#{c}")
        return PanelDataset(
            unit_ids=tuple(ids),
            periods=self.periods,
            outcome=None if self.outcome is None else self.outcome[indices],
            group=self.group[indices],
            tv=self.tv[indices],
            tv_names=self.tv_names,
            ti=self.ti[indices],
            ti_names=self.ti_names,
            sample_weight=self.sample_weight[indices],
            region=None if self.region is None else self.region[indices],
        )


@dataclass(frozen=True)
class TwoPeriodView:
    """First-difference view of a panel around t_star (D = 1{G = t_star})."""
    t_star: int
    treat: np.ndarray                  # n, 0/1 floats
    dY: Optional[np.ndarray]           # n
    dX: np.ndarray                     # n x k
    X_pre: np.ndarray                  # n x k
    X_post: np.ndarray                 # n x k
    Z: np.ndarray                      # n x l
    sample_weight: np.ndarray          # n
    tv_names: Tuple[str, ...] = field(default_factory=tuple)
    ti_names: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.treat.shape[0]

    @property
    def pi(self) -> float:
        w = self.sample_weight
        return float((w * self.treat).sum() / w.sum())
