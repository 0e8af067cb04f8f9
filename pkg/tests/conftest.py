"""Shared fixtures: preset models, reference lattices, and cached cone scans.

Expensive objects (cone characterizations, conductivity reports) are
session-scoped so the acceptance tests and unit tests share one computation.
"""

import json

import numpy as np
import pytest

import conecond as cc


@pytest.fixture(scope="session")
def haldane_critical():
    # honeycomb model tuned onto its band-touching line; two conical
    # crossings at the zone corners, both quantizing
    return cc.preset_haldane(1.0, 0.1, 0.0, 0.0)


@pytest.fixture(scope="session")
def haldane_gapped():
    return cc.preset_haldane(1.0, 0.1, np.pi / 2.0, 0.0)


@pytest.fixture(scope="session")
def qwz_topological():
    # one isotropic conical crossing at the zone center
    return cc.preset_qwz(-2.0)


@pytest.fixture(scope="session")
def qwz_aniso():
    # one anisotropic crossing, Q = diag(4, 1)
    return cc.preset_qwz(-2.0, 2.0, 1.0)


@pytest.fixture(scope="session")
def qwz_gapped():
    return cc.preset_qwz(1.0)


@pytest.fixture(scope="session")
def qwz_u0():
    return cc.preset_qwz(0.0)


@pytest.fixture(scope="session")
def haldane_cones(haldane_critical):
    return cc.characterize_cones(haldane_critical)


@pytest.fixture(scope="session")
def qwz_cones(qwz_topological):
    return cc.characterize_cones(qwz_topological)


@pytest.fixture(scope="session")
def qwz_aniso_cones(qwz_aniso):
    return cc.characterize_cones(qwz_aniso)


@pytest.fixture(scope="session")
def square_lattice():
    return cc.make_lattice(np.array([1.0, 0.0]), np.array([0.0, 1.0]))


def square_model_dict(t=1.0, mu=0.0):
    """One-orbital square lattice with nearest-neighbour hopping t:
    Lambda(k) = 2 t (cos k1 + cos k2)."""
    return {
        "lattice": {"a1": [1.0, 0.0], "a2": [0.0, 1.0]},
        "orbitals": [[0.0, 0.0]],
        "fermi_energy": mu,
        "hoppings": [
            {"cell": [1, 0], "matrix": [[[t, 0.0]]]},
            {"cell": [0, 1], "matrix": [[[t, 0.0]]]},
        ],
    }


@pytest.fixture(scope="session")
def square_model():
    return cc.model_from_dict(square_model_dict())


@pytest.fixture(scope="session")
def onsite_model():
    # two decoupled flat bands at -1 and +1, Fermi level between them;
    # all current operators vanish identically
    return cc.model_from_dict(
        {
            "lattice": {"a1": [1.0, 0.0], "a2": [0.0, 1.0]},
            "orbitals": [[0.0, 0.0], [0.5, 0.5]],
            "fermi_energy": 0.0,
            "hoppings": [
                {"cell": [0, 0],
                 "matrix": [[[-1.0, 0.0], [0.0, 0.0]],
                            [[0.0, 0.0], [1.0, 0.0]]]},
            ],
        }
    )


@pytest.fixture(scope="session")
def hex_flat_band_model():
    """Honeycomb nearest-neighbour model plus a decoupled flat band sitting
    0.02 above the Fermi level — the flat band spoils two-band isolation in
    any sampling window wider than that."""
    return cc.model_from_dict(
        {
            "lattice": {"a1": [1.5, np.sqrt(3) / 2], "a2": [1.5, -np.sqrt(3) / 2]},
            "orbitals": [[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]],
            "fermi_energy": 0.0,
            "hoppings": [
                {"cell": [0, 0],
                 "matrix": [[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
                            [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
                            [[0.0, 0.0], [0.0, 0.0], [0.02, 0.0]]]},
                {"cell": [-1, 0],
                 "matrix": [[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
                            [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
                            [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]]},
                {"cell": [0, -1],
                 "matrix": [[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
                            [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
                            [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]]},
            ],
        }
    )


@pytest.fixture()
def model_file(tmp_path):
    """Write a model dict to a temp JSON file and return its path."""

    def write(payload, name="model.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)

    return write


def random_momenta(lattice, count, seed=0):
    rng = np.random.default_rng(seed)
    frac = rng.uniform(-0.5, 0.5, size=(count, 2))
    return frac @ lattice.dual_matrix.T
