import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import surfho.channel as ch
import surfho.sim as sim
from surfho.codebook import Codebook

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"


def crossover_scenario(protocol="wall-street", seed=1, duration_s=10.0,
                       sigma=2.0, ga_generations=60):
    gnbs = (
        ch.GnbSite("g1", 2.0, 20.0, eirp_dbm=55.0, carrier_ghz=26.0,
                   boresight_deg=-95.0, scan_range_deg=45.0),
        ch.GnbSite("g2", 28.0, 20.0, eirp_dbm=55.0, carrier_ghz=26.1,
                   boresight_deg=-85.0, scan_range_deg=45.0),
    )
    ues = (ch.UePlacement("ue1", "rear-seat", -0.8, 0.7),
           ch.UePlacement("ue2", "front-seat", 0.8, 0.6))
    return sim.Scenario(
        name="crossover", gnbs=gnbs, ues=ues,
        waypoints=((0.0, 0.0), (30.0, 0.0)), speed_kmh=10.0,
        duration_s=duration_s,
        protocol=sim.ProtocolParams(name=protocol),
        surface=sim.SurfaceParams(ga_generations=ga_generations),
        blocked_zones=(), shadowing_sigma_db=sigma, seed=seed)


@pytest.fixture(scope="session")
def shared_books():
    """One mutable codebook per surface geometry, shared across a session so
    lazily synthesized entries are reused between runs."""
    books: dict = {}

    def get(scenario: sim.Scenario) -> Codebook:
        geom = scenario.surface.geometry(scenario.gnbs[0].carrier_ghz)
        key = (geom, scenario.surface.codebook_seed,
               scenario.surface.ga_generations)
        if key not in books:
            books[key] = Codebook(geom)
        return books[key]

    return get
