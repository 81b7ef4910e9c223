import numpy as np
import pytest

from sempi import desk


def prism_msh(top_z=0.0, bottom_z=-2.0, top_name="freesurface", side_name="body",
              footprint=((-1, -1), (1, -1), (-1, 1))):
    """MSH 4.1 text of one vertical prism with tagged facets."""
    pts = [(x, y, bottom_z) for x, y in footprint] + [(x, y, top_z) for x, y in footprint]
    lines = ["$MeshFormat", "4.1 0 8", "$EndMeshFormat",
             "$PhysicalNames", "2", f'2 1 "{top_name}"', f'2 2 "{side_name}"', "$EndPhysicalNames",
             "$Entities", "0 0 2 1",
             "1 -1 -1 -2 1 1 0 1 1 0", "2 -1 -1 -2 1 1 0 1 2 0",
             "1 -1 -1 -2 1 1 0 0 0", "$EndEntities",
             "$Nodes", "1 6 1 6", "3 1 0 6"] + [str(i) for i in range(1, 7)]
    lines += [f"{x} {y} {z}" for x, y, z in pts] + ["$EndNodes"]
    lines += ["$Elements", "4 7 1 7",
              "2 1 2 1", "1 4 5 6",
              "2 2 2 1", "2 1 3 2",
              "2 2 3 3", "3 1 2 5 4", "4 2 3 6 5", "5 1 4 6 3",
              "3 1 6 1", "6 1 2 3 4 5 6", "$EndElements"]
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def tank():
    return desk.box_tank(2.0, 2.0, 1.0, 2, 2, 2)


@pytest.fixture(scope="session")
def box_quarter():
    return desk.box_body_tank()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
