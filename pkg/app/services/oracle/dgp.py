import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.domain.errors import DgpError
from app.domain.panel import PanelDataset
from app.utils.logging import get_logger

logger = get_logger(__name__)

NEVER_KEY = "never"
PROB_TOL = 1e-9


class DgpCell(BaseModel):
    """
    One support point of (covariate history, Z). `x` is T x k; `group_probs` maps period labels
    "2".."T" and "never" to P(G = g | cell); `tau` and `group_shift` map group labels to T-vectors.
    """
    model_config = ConfigDict(extra="forbid")

    prob: float = Field(..., ge=0.0, le=1.0)
    x: List[List[float]] = Field(default_factory=list)
    z: List[float] = Field(default_factory=list)
    group_probs: Dict[str, float]
    y0: List[float]
    tau: Dict[str, List[float]] = Field(default_factory=dict)
    group_shift: Dict[str, List[float]] = Field(default_factory=dict)


class DiscreteDgp(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    description: str = ""
    T: int = Field(..., ge=2)
    tv_names: List[str] = Field(default_factory=list)
    ti_names: List[str] = Field(default_factory=list)
    noise_sd: float = Field(1.0, ge=0.0)
    cells: List[DgpCell] = Field(..., min_length=1)

    def group_keys(self) -> List[str]:
        return [str(g) for g in range(2, self.T + 1)] + [NEVER_KEY]


def _group_index(dgp: DiscreteDgp, key: str) -> int:
    return dgp.T + 1 if key == NEVER_KEY else int(key)


def validate_dgp(dgp: DiscreteDgp) -> DiscreteDgp:
    """Structural and probability checks; raises DgpError on the first problem."""
    T, k, l = dgp.T, len(dgp.tv_names), len(dgp.ti_names)
    keys = set(dgp.group_keys())
    total = sum(c.prob for c in dgp.cells)
    if abs(total - 1.0) > PROB_TOL:
        raise DgpError(f"{dgp.name}: cell probabilities sum to {total:.12g}, not 1")

    seen = set()
    for i, c in enumerate(dgp.cells):
        where = f"{dgp.name} cell {i}"
        if k:
            if len(c.x) != T or any(len(row) != k for row in c.x):
                raise DgpError(f"{where}: x must be {T} x {k}")
        elif c.x and any(len(row) for row in c.x):
            raise DgpError(f"{where}: x given but no time-varying covariates declared")
        if len(c.z) != l:
            raise DgpError(f"{where}: z must have {l} entries")
        if len(c.y0) != T:
            raise DgpError(f"{where}: y0 must have {T} entries")
        bad = set(c.group_probs) - keys
        if bad:
            raise DgpError(f"{where}: unknown groups {sorted(bad)}")
        if any(p < 0 for p in c.group_probs.values()):
            raise DgpError(f"{where}: negative group probability")
        gsum = sum(c.group_probs.values())
        if abs(gsum - 1.0) > PROB_TOL:
            raise DgpError(f"{where}: group probabilities sum to {gsum:.12g}, not 1")
        for name, table in (("tau", c.tau), ("group_shift", c.group_shift)):
            for key, path in table.items():
                if key not in keys or key == NEVER_KEY:
                    raise DgpError(f"{where}: {name} for unknown treated group {key}")
                if len(path) != T:
                    raise DgpError(f"{where}: {name}[{key}] must have {T} entries")
        sig = (tuple(tuple(row) for row in c.x) if k else (), tuple(c.z))
        if sig in seen:
            raise DgpError(f"{where}: duplicate (x, z) support point")
        seen.add(sig)

    declared = {key for c in dgp.cells for key in c.group_probs}
    for key in sorted(declared):
        mass = sum(c.prob * c.group_probs.get(key, 0.0) for c in dgp.cells)
        if mass <= 0:
            raise DgpError(f"{dgp.name}: group {key} has zero probability mass")
    if NEVER_KEY not in declared:
        raise DgpError(f"{dgp.name}: no never-treated group")
    return dgp


def load_dgp(path: Path) -> DiscreteDgp:
    path = Path(path)
    try:
        dgp = DiscreteDgp.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise DgpError(f"DGP file not found: {path}") from None
    except (json.JSONDecodeError, ValidationError) as e:
        raise DgpError(f"invalid DGP file {path.name}: {e}") from e
    return validate_dgp(dgp)


def fixture_paths(fixtures_dir: Path) -> List[Path]:
    return sorted(Path(fixtures_dir).glob("*.json"))


# ---------- Enumeration ----------

@dataclass(frozen=True)
class PopulationTable:
    """One row per (cell, group) with positive mass; outcome paths are noise-free means."""
    name: str
    T: int
    tv_names: Tuple[str, ...]
    ti_names: Tuple[str, ...]
    cell: np.ndarray        # rows
    group: np.ndarray       # rows, internal 2..T+1
    mass: np.ndarray        # rows, sums to 1
    x: np.ndarray           # rows x T x k
    z: np.ndarray           # rows x l
    y0: np.ndarray          # rows x T, untreated mean path common to the cell
    shift: np.ndarray       # rows x T, group-specific deviation of the untreated path
    tau: np.ndarray         # rows x T, effect path (0 before g and for never-treated)

    @property
    def never_index(self) -> int:
        return self.T + 1

    @property
    def treat(self) -> np.ndarray:
        idx = np.arange(1, self.T + 1)
        return (idx[None, :] >= self.group[:, None]).astype(float)

    @property
    def outcome(self) -> np.ndarray:
        """Observed mean path: untreated path plus group shift plus effect once treated."""
        return self.y0 + self.shift + self.treat * self.tau

    def as_panel(self) -> PanelDataset:
        """Rows as units weighted by their mass; population moments become weighted sample moments."""
        return PanelDataset(
            unit_ids=tuple(f"c{c}g{g}" for c, g in zip(self.cell, self.group)),
            periods=tuple(range(1, self.T + 1)),
            outcome=self.outcome,
            group=self.group.copy(),
            tv=self.x,
            tv_names=self.tv_names,
            ti=self.z,
            ti_names=self.ti_names,
            sample_weight=self.mass,
        )


def _cell_arrays(dgp: DiscreteDgp, c: DgpCell) -> Tuple[np.ndarray, np.ndarray]:
    k = len(dgp.tv_names)
    x = np.asarray(c.x, dtype=float) if k else np.zeros((dgp.T, 0))
    return x, np.asarray(c.z, dtype=float).reshape(len(dgp.ti_names))


def enumerate_population(dgp: DiscreteDgp) -> PopulationTable:
    validate_dgp(dgp)
    T = dgp.T
    rows: Dict[str, list] = {key: [] for key in ("cell", "group", "mass", "x", "z", "y0", "shift", "tau")}
    for i, c in enumerate(dgp.cells):
        x, z = _cell_arrays(dgp, c)
        for key in dgp.group_keys():
            mass = c.prob * c.group_probs.get(key, 0.0)
            if mass <= 0:
                continue
            rows["cell"].append(i)
            rows["group"].append(_group_index(dgp, key))
            rows["mass"].append(mass)
            rows["x"].append(x)
            rows["z"].append(z)
            rows["y0"].append(np.asarray(c.y0, dtype=float))
            rows["shift"].append(np.asarray(c.group_shift.get(key, [0.0] * T), dtype=float))
            rows["tau"].append(np.asarray(c.tau.get(key, [0.0] * T), dtype=float))
    mass = np.asarray(rows["mass"])
    table = PopulationTable(
        name=dgp.name,
        T=T,
        tv_names=tuple(dgp.tv_names),
        ti_names=tuple(dgp.ti_names),
        cell=np.asarray(rows["cell"], dtype=int),
        group=np.asarray(rows["group"], dtype=int),
        mass=mass / mass.sum(),
        x=np.stack(rows["x"]),
        z=np.stack(rows["z"]),
        y0=np.stack(rows["y0"]),
        shift=np.stack(rows["shift"]),
        tau=np.stack(rows["tau"]),
    )
    logger.debug(f"Enumerated {dgp.name}: {len(mass)} rows, total mass {mass.sum():.15g}")
    return table


# ---------- Sampling ----------

def simulate_sample(dgp: DiscreteDgp, n: int, seed: int) -> PanelDataset:
    """
    n iid units: cell, then group given cell, then Gaussian noise around the mean path of that
    (cell, group). Pre-treatment periods carry untreated means. Deterministic per seed.
    """
    if n < 1:
        raise DgpError("simulate_sample needs n >= 1")
    validate_dgp(dgp)
    rng = np.random.default_rng(seed)
    T = dgp.T
    keys = dgp.group_keys()
    cell_p = np.array([c.prob for c in dgp.cells])
    cells = rng.choice(len(dgp.cells), size=n, p=cell_p / cell_p.sum())

    group = np.empty(n, dtype=int)
    for i, c in enumerate(dgp.cells):
        members = np.flatnonzero(cells == i)
        if members.size == 0:
            continue
        gp = np.array([c.group_probs.get(key, 0.0) for key in keys])
        picks = rng.choice(len(keys), size=members.size, p=gp / gp.sum())
        group[members] = [_group_index(dgp, keys[j]) for j in picks]

    k, l = len(dgp.tv_names), len(dgp.ti_names)
    tv = np.zeros((n, T, k))
    ti = np.zeros((n, l))
    mean = np.zeros((n, T))
    D = (np.arange(1, T + 1)[None, :] >= group[:, None]).astype(float)
    for i, c in enumerate(dgp.cells):
        members = cells == i
        if not members.any():
            continue
        x, z = _cell_arrays(dgp, c)
        tv[members] = x
        ti[members] = z
        y0 = np.asarray(c.y0, dtype=float)
        for key in keys:
            sel = members & (group == _group_index(dgp, key))
            if not sel.any():
                continue
            shift = np.asarray(c.group_shift.get(key, [0.0] * T))
            tau = np.asarray(c.tau.get(key, [0.0] * T))
            mean[sel] = y0 + shift + D[sel] * tau
    outcome = mean + rng.normal(0.0, dgp.noise_sd, size=(n, T)) if dgp.noise_sd > 0 else mean

    logger.info(f"Simulated {n} units from {dgp.name} (seed={seed})")
    return PanelDataset(
        unit_ids=tuple(f"u{i:06d}" for i in range(n)),
        periods=tuple(range(1, T + 1)),
        outcome=outcome,
        group=group,
        tv=tv,
        tv_names=tuple(dgp.tv_names),
        ti=ti,
        ti_names=tuple(dgp.ti_names),
        sample_weight=np.ones(n),
    )
