import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gtdid.panel import NEVER, PanelDataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_panel(rows, covariates=None, cluster=None):
    """rows: (unit, period, first_treat, outcome[, n])."""
    unit = [r[0] for r in rows]
    n = [r[4] if len(r) > 4 else 1.0 for r in rows]
    return PanelDataset.from_arrays(
        unit_id=unit,
        period=[r[1] for r in rows],
        first_treat=[r[2] for r in rows],
        outcome=[r[3] for r in rows],
        n=n,
        covariates=covariates,
        cluster_id=cluster,
    )


@pytest.fixture
def ab_panel():
    # A first treated in period 2, B never treated
    return make_panel([("A", 1, 2, 1.0), ("A", 2, 2, 5.0), ("B", 1, NEVER, 2.0), ("B", 2, NEVER, 3.0)])


def dummy_ols(y, X, w):
    """Weighted least squares through explicit normal equations."""
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return beta


def twfe_dummy_coef(ds):
    """TWFE coefficient on 1{t >= g} from a full dummy-variable regression."""
    D = (ds.period >= ds.cell_group).astype(float)
    U = np.eye(ds.n_units)[ds.unit]
    P = np.eye(ds.periods.size)[ds.period_index][:, 1:]
    return dummy_ols(ds.outcome, np.column_stack([D, U, P]), ds.n)[0]
