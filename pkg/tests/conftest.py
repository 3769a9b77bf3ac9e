import numpy as np
import pytest

from matterwave import BeamlineGeometry, GratingSpec, MoleculeSpec, VelocityModel
from matterwave.propagation import ScreenGrid, band_marginal, band_screen, incoherent_pattern

GRATING = GratingSpec(100.0, 50.0, 10.0, 5.0)
GEOMETRY = BeamlineGeometry(702.0, 564.0, 1.0)
PCH2 = MoleculeSpec("PcH2", 514.0, 16.0)
BEAM = VelocityModel("beam_maxwell_boltzmann", 750.0)


@pytest.fixture(scope="session")
def fig3_map():
    """PcH2 screen map on the default 641 x 200 grid."""
    screen = ScreenGrid.uniform(-160.0, 160.0, 641, 100.0, 900.0, 200)
    return incoherent_pattern(PCH2, GRATING, GEOMETRY, BEAM, screen)


@pytest.fixture(scope="session")
def fig3_band():
    """Map restricted to the 349.4 +- 40 um band and its marginal."""
    x = np.linspace(-160.0, 160.0, 641)
    imap = incoherent_pattern(PCH2, GRATING, GEOMETRY, BEAM, band_screen(x, 349.4, 80.0, 4.0))
    return imap, band_marginal(imap, 349.4, 80.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
