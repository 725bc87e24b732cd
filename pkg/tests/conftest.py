from pathlib import Path
from typing import Optional

import numpy as np
import pytest
from scipy.special import expit

from app.domain.panel import PanelDataset

FIXTURES_DIR = Path(__file__).resolve().parents[1] / "app" / "config" / "fixtures"
DATA_DIR = Path(__file__).resolve().parent / "data"


def make_two_period_panel(
    seed: int,
    n: int = 300,
    k: int = 2,
    l: int = 1,
    weighted: bool = False,
    effect: float = 1.0,
    outcome: bool = True,
) -> PanelDataset:
    """Two periods, treatment at period 2 driven by covariate levels and changes."""
    rng = np.random.default_rng(seed)
    x_pre = rng.normal(size=(n, k))
    dx = rng.normal(scale=0.7, size=(n, k))
    z = rng.binomial(1, 0.5, size=(n, l)).astype(float)
    score = 0.4 * x_pre.sum(axis=1) - 0.3 * dx.sum(axis=1) + 0.3 * z.sum(axis=1) - 0.2
    treat = rng.random(n) < expit(score)
    treat[:3] = True
    treat[3:6] = False
    y_pre = x_pre.sum(axis=1) + rng.normal(size=n)
    y_post = y_pre + 0.5 + dx.sum(axis=1) + 0.3 * x_pre.sum(axis=1) + effect * treat + rng.normal(size=n)
    return PanelDataset(
        unit_ids=tuple(f"u{i:04d}" for i in range(n)),
        periods=(1, 2),
        outcome=np.column_stack([y_pre, y_post]) if outcome else None,
        group=np.where(treat, 2, 3).astype(int),
        tv=np.stack([x_pre, x_pre + dx], axis=1),
        tv_names=tuple(f"x{j}" for j in range(k)),
        ti=z,
        ti_names=tuple(f"z{j}" for j in range(l)),
        sample_weight=rng.uniform(0.5, 2.0, size=n) if weighted else np.ones(n),
    )


def make_staggered_panel(
    seed: int,
    n: int = 400,
    T: int = 4,
    n_groups: int = 2,
    k: int = 1,
    effect: float = 1.0,
    weighted: bool = False,
    region: Optional[int] = None,
) -> PanelDataset:
    """
    Staggered adoption with `n_groups` cohorts among periods 2..T plus never-treated units.
    Outcomes are unit effect + period effect + covariate effect + effect * D + noise.
    """
    rng = np.random.default_rng(seed)
    cohorts = np.sort(rng.choice(np.arange(2, T + 1), size=n_groups, replace=False))
    options = np.concatenate([cohorts, [T + 1]])
    group = rng.choice(options, size=n)
    group[: len(options)] = options
    x = np.cumsum(rng.normal(scale=0.5, size=(n, T, k)), axis=1) + rng.normal(size=(n, 1, k))
    x += 0.3 * (group < T + 1)[:, None, None]
    D = (np.arange(1, T + 1)[None, :] >= group[:, None]).astype(float)
    unit = rng.normal(size=n)
    period = np.linspace(0.0, 1.0, T)
    y = unit[:, None] + period[None, :] + x.sum(axis=2) * 0.8 + effect * D + rng.normal(scale=0.5, size=(n, T))
    return PanelDataset(
        unit_ids=tuple(f"s{i:04d}" for i in range(n)),
        periods=tuple(range(1, T + 1)),
        outcome=y,
        group=group.astype(int),
        tv=x,
        tv_names=tuple(f"x{j}" for j in range(k)),
        ti=rng.binomial(1, 0.4, size=(n, 1)).astype(float),
        ti_names=("z",),
        sample_weight=rng.uniform(0.5, 2.0, size=n) if weighted else np.ones(n),
        region=None if region is None else np.array([f"r{i % region}" for i in range(n)]),
    )


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES_DIR


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def two_period_panel() -> PanelDataset:
    return make_two_period_panel(seed=7)


@pytest.fixture
def staggered_panel() -> PanelDataset:
    return make_staggered_panel(seed=11, n=600, T=4, n_groups=3)
