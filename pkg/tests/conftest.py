import numpy as np
import pytest

from rhizohom.cell import UnitCellGeometry, build_table
from rhizohom.constitutive import Constitutive, RootHydraulics, SoilHydraulics, SurfaceForcing
from rhizohom.solvercore import SolverSettings


def soils():
    rhizo = SoilHydraulics(0.08, 0.45, 1.0, 1.5, 4e-6, 0.5)
    bulk = SoilHydraulics(0.05, 0.40, 2.0, 1.8, 1e-5, 0.5)
    return rhizo, bulk


def root_params(**kw):
    base = dict(theta_sat=0.6, h_ae=-2.0, E=50.0, lambda_P=1.5, alpha=1.0, n=2.0,
                k_r=1e-11, k_ax=1e-10, r=0.25, rho_g=9810.0)
    base.update(kw)
    return RootHydraulics(**base)


def make_const(ET_o=5e-8, P=0.0, k_r=1e-11, **root_kw):
    rhizo, bulk = soils()
    return Constitutive(rhizo, bulk, root_params(k_r=k_r, **root_kw), SurfaceForcing(ET_o, P, 4.0, 1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def const():
    return make_const()


@pytest.fixture(scope="session")
def quiet_const():
    """No surface forcing and no transpiration."""
    return make_const(ET_o=0.0, P=0.0)


@pytest.fixture(scope="session")
def disk_geom():
    return UnitCellGeometry(0.25, 0.4, 16)


@pytest.fixture(scope="session")
def disk_table(disk_geom):
    return build_table(disk_geom)


@pytest.fixture(scope="session")
def strip_geom():
    return UnitCellGeometry(0.125, 0.25, 16, mode="laminate", fractions=(0.25, 0.25, 0.5))


@pytest.fixture(scope="session")
def strip_table(strip_geom):
    return build_table(strip_geom)


@pytest.fixture
def settings():
    return SolverSettings(tau=3600.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance report ------------------------------------------------------
_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """``report(n, ok, detail)`` prints one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
