"""Tight-binding models and the Bloch Hamiltonian H(k) with its k-derivatives.

A model is a finite set of hopping matrices T(gamma) on integer cell
displacements gamma = m1*a1 + m2*a2.  The Bloch matrix uses true-displacement
phases,

    H(k)_{ab} = sum_gamma exp(i k . (gamma + r_b - r_a)) T(gamma)_{ab},

so that J_j = dH/dk_j is the physical current operator (intra-cell dipole
contributions included) and the covariance

    H(k + G) = D H(k) D^dagger,   D = diag(exp(-i G . r_a)),

holds exactly for every dual-lattice vector G.  Hermiticity of H(k) for all
real k is equivalent to the pairing T(-gamma) = T(gamma)^dagger, which is
enforced at construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice2D, make_lattice

__all__ = [
    "HoppingConflict",
    "ModelFormatError",
    "HoppingModel",
    "h_at",
    "dh_at",
    "d2h_at",
    "covariance_defect",
    "preset_haldane",
    "preset_qwz",
    "model_from_dict",
    "load_model",
]

#: max-entry tolerance for the Hermiticity pairing T(-g) = T(g)^dagger
PAIRING_ATOL = 1e-12


class HoppingConflict(ValueError):
    """Both T(gamma) and T(-gamma) were specified but are not Hermitian partners."""


class ModelFormatError(ValueError):
    """Model file/dict does not match the documented schema."""


@dataclass(frozen=True)
class HoppingModel:
    """Finite-range tight-binding model on a 2D Bravais lattice.

    Parameters
    ----------
    lattice : Lattice2D
    norbitals : int
        Number of orbitals N per unit cell.
    positions : ndarray, shape (N, 2)
        Orbital positions r_a inside the direct unit cell (cartesian).
    terms : dict[(int, int), ndarray]
        Map from integer cell displacement (m1, m2) to the N x N complex
        hopping matrix T(m1*a1 + m2*a2).  Must satisfy the Hermiticity
        pairing T(-gamma) = T(gamma)^dagger entrywise to 1e-12.
    fermi_energy : float
        Fermi level mu; stored with the model because every downstream
        quantity (projectors, gaps, response) is defined relative to it.
    """

    lattice: Lattice2D
    norbitals: int
    positions: np.ndarray
    terms: dict
    fermi_energy: float
    # flattened per-entry arrays for vectorized evaluation (derived state)
    _disp: np.ndarray = field(init=False, repr=False, compare=False)
    _rows: np.ndarray = field(init=False, repr=False, compare=False)
    _cols: np.ndarray = field(init=False, repr=False, compare=False)
    _vals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        N = int(self.norbitals)
        pos = np.asarray(self.positions, dtype=float).reshape(N, 2).copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        terms = {}
        for cell, T in self.terms.items():
            m1, m2 = int(cell[0]), int(cell[1])
            T = np.asarray(T, dtype=complex).reshape(N, N).copy()
            T.setflags(write=False)
            terms[(m1, m2)] = T
        object.__setattr__(self, "terms", terms)
        scale = max((np.abs(T).max() for T in terms.values()), default=1.0)
        scale = max(scale, 1.0)
        for (m1, m2), T in terms.items():
            partner = terms.get((-m1, -m2))
            if partner is None:
                raise HoppingConflict(
                    f"term at ({m1},{m2}) has no partner at ({-m1},{-m2})"
                )
            if np.abs(partner - T.conj().T).max() > PAIRING_ATOL * scale:
                raise HoppingConflict(
                    f"T({-m1},{-m2}) != T({m1},{m2})^dagger "
                    f"(max deviation {np.abs(partner - T.conj().T).max():.3e})"
                )
        # flatten nonzero entries: displacement gamma + r_col - r_row per entry
        disp, rows, cols, vals = [], [], [], []
        for (m1, m2), T in terms.items():
            gamma = m1 * self.lattice.a1 + m2 * self.lattice.a2
            for a in range(N):
                for b in range(N):
                    if T[a, b] != 0:
                        disp.append(gamma + pos[b] - pos[a])
                        rows.append(a)
                        cols.append(b)
                        vals.append(T[a, b])
        if not disp:                       # empty model: keep shapes valid
            disp = np.zeros((0, 2))
        for name, arr in (
            ("_disp", np.asarray(disp, dtype=float).reshape(-1, 2)),
            ("_rows", np.asarray(rows, dtype=np.intp)),
            ("_cols", np.asarray(cols, dtype=np.intp)),
            ("_vals", np.asarray(vals, dtype=complex)),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- vectorized evaluation over a batch of momenta ----------------------

    def _assemble(self, ks: np.ndarray, entry_factors) -> np.ndarray:
        """Sum phase * factor * T-entry into a (M, N, N) stack."""
        ks = np.asarray(ks, dtype=float).reshape(-1, 2)
        phases = np.exp(1j * (ks @ self._disp.T)) * (self._vals * entry_factors)
        out = np.zeros((ks.shape[0], self.norbitals, self.norbitals), dtype=complex)
        np.add.at(out, (slice(None), self._rows, self._cols), phases)
        return out

    def h_batch(self, ks: np.ndarray) -> np.ndarray:
        """H(k) for a batch of momenta; shape (M, N, N)."""
        return self._assemble(ks, 1.0)

    def dh_batch(self, ks: np.ndarray, j: int) -> np.ndarray:
        """dH/dk_j for a batch of momenta; j in {1, 2}."""
        return self._assemble(ks, 1j * self._disp[:, j - 1])

    def d2h_batch(self, ks: np.ndarray, j: int, l: int) -> np.ndarray:
        """d^2H/dk_j dk_l for a batch of momenta."""
        return self._assemble(ks, -self._disp[:, j - 1] * self._disp[:, l - 1])

    def spectral_radius(self, nsample: int = 16) -> float:
        """max |eigenvalue| over a coarse momentum sample (energy scale)."""
        f = (np.arange(nsample) + 0.5) / nsample - 0.5
        F1, F2 = np.meshgrid(f, f, indexing="ij")
        ks = np.column_stack([F1.ravel(), F2.ravel()]) @ self.lattice.dual_matrix.T
        w = np.linalg.eigvalsh(self.h_batch(ks))
        return float(np.abs(w).max())


def h_at(model: HoppingModel, k) -> np.ndarray:
    """Bloch Hamiltonian H(k), an N x N Hermitian matrix."""
    return model.h_batch(np.asarray(k, dtype=float).reshape(1, 2))[0]


def dh_at(model: HoppingModel, k, j: int) -> np.ndarray:
    """Current operator J_j(k) = dH/dk_j (Hermitian)."""
    if j not in (1, 2):
        raise ValueError("direction index j must be 1 or 2")
    return model.dh_batch(np.asarray(k, dtype=float).reshape(1, 2), j)[0]


def d2h_at(model: HoppingModel, k, j: int, l: int) -> np.ndarray:
    """Second derivative d^2H/dk_j dk_l (Hermitian, symmetric in j,l)."""
    if j not in (1, 2) or l not in (1, 2):
        raise ValueError("direction indices must be 1 or 2")
    return model.d2h_batch(np.asarray(k, dtype=float).reshape(1, 2), j, l)[0]


def covariance_defect(model: HoppingModel, k, m1: int, m2: int) -> float:
    """Operator-norm defect of H(k+G) = D H(k) D^dagger for G = m1 b1 + m2 b2."""
    k = np.asarray(k, dtype=float).reshape(2)
    G = m1 * model.lattice.b1 + m2 * model.lattice.b2
    D = np.exp(-1j * (model.positions @ G))
    lhs = h_at(model, k + G)
    rhs = D[:, None] * h_at(model, k) * D.conj()[None, :]
    return float(np.linalg.norm(lhs - rhs, ord=2))


# -- presets ----------------------------------------------------------------

def preset_haldane(t1: float, t2: float, phi: float, M: float) -> HoppingModel:
    """Honeycomb model: NN hopping t1, complex NNN hopping t2*exp(+-i*phi),
    staggered on-site +-M; Fermi level mu = -3*t2*cos(phi).

    The gap closes on the curve M = +-3*sqrt(3)*t2*sin(phi); at phi=0, M=0
    the two K points carry isotropic cones of slope 3*t1/2.
    """
    if t1 == 0:
        raise ValueError("t1 must be nonzero")
    lat = make_lattice([1.5, np.sqrt(3.0) / 2.0], [1.5, -np.sqrt(3.0) / 2.0])
    positions = np.array([[0.0, 0.0], [1.0, 0.0]])
    terms: dict = {}

    def add(cell, a, b, val):
        T = terms.setdefault(cell, np.zeros((2, 2), dtype=complex))
        T[a, b] += val

    # nearest-neighbor A->B bonds and their Hermitian partners
    for cell in [(0, 0), (-1, 0), (0, -1)]:
        add(cell, 0, 1, t1)
        add((-cell[0], -cell[1]), 1, 0, t1)
    # staggered on-site term
    add((0, 0), 0, 0, M)
    add((0, 0), 1, 1, -M)
    # next-nearest-neighbor loops: oriented triple on the A sublattice gets
    # phase +phi, the B sublattice the opposite orientation
    for cell in [(1, 0), (0, -1), (-1, 1)]:
        add(cell, 0, 0, t2 * np.exp(1j * phi))
        add((-cell[0], -cell[1]), 0, 0, t2 * np.exp(-1j * phi))
        add(cell, 1, 1, t2 * np.exp(-1j * phi))
        add((-cell[0], -cell[1]), 1, 1, t2 * np.exp(1j * phi))
    return HoppingModel(
        lattice=lat,
        norbitals=2,
        positions=positions,
        terms=terms,
        fermi_energy=-3.0 * t2 * np.cos(phi),
    )


def preset_qwz(u: float, v1: float = 1.0, v2: float = 1.0) -> HoppingModel:
    """Square-lattice two-band model
    H(k) = v1 sin(k1) s1 + v2 sin(k2) s2 + (u + cos k1 + cos k2) s3, mu = 0.

    At u = -2 the gap closes at the zone center with an anisotropic cone of
    quadratic form diag(v1^2, v2^2).
    """
    lat = make_lattice([1.0, 0.0], [0.0, 1.0])
    s1 = np.array([[0, 1], [1, 0]], dtype=complex)
    s2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
    s3 = np.array([[1, 0], [0, -1]], dtype=complex)
    terms = {
        (0, 0): u * s3,
        (1, 0): 0.5 * s3 - 0.5j * v1 * s1,
        (-1, 0): 0.5 * s3 + 0.5j * v1 * s1,
        (0, 1): 0.5 * s3 - 0.5j * v2 * s2,
        (0, -1): 0.5 * s3 + 0.5j * v2 * s2,
    }
    return HoppingModel(
        lattice=lat,
        norbitals=2,
        positions=np.zeros((2, 2)),
        terms=terms,
        fermi_energy=0.0,
    )


# -- model file schema --------------------------------------------------------
#
# JSON object:
#   { "lattice": {"a1": [x, y], "a2": [x, y]},
#     "orbitals": [[x, y], ...],
#     "fermi_energy": number,
#     "hoppings": [ {"cell": [m1, m2], "matrix": [[[re, im], ...], ...]}, ... ] }
#
# Matrices are row-major N x N with [re, im] pairs.  If a displacement's
# Hermitian partner is absent it is auto-completed as T(-g) = T(g)^dagger;
# if both are present and inconsistent the load fails.

def _parse_matrix(raw, N: int) -> np.ndarray:
    M = np.asarray(raw, dtype=float)
    if M.shape != (N, N, 2):
        raise ModelFormatError(
            f"hopping matrix must be {N}x{N} of [re, im] pairs, got shape {M.shape}"
        )
    return M[..., 0] + 1j * M[..., 1]


def model_from_dict(data: dict) -> HoppingModel:
    """Build a model from the documented JSON schema (dict form)."""
    try:
        lat = make_lattice(data["lattice"]["a1"], data["lattice"]["a2"])
        orbitals = np.asarray(data["orbitals"], dtype=float)
        mu = float(data["fermi_energy"])
        raw_hoppings = data["hoppings"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"missing or malformed model field: {exc}") from exc
    if orbitals.ndim != 2 or orbitals.shape[1] != 2:
        raise ModelFormatError("orbitals must be a list of [x, y] positions")
    N = orbitals.shape[0]
    terms: dict = {}
    for entry in raw_hoppings:
        try:
            raw_cell = entry["cell"]
            if any(c != int(c) for c in raw_cell[:2]):
                raise ModelFormatError(
                    f"cell indices must be integers, got {raw_cell!r}"
                )
            cell = (int(raw_cell[0]), int(raw_cell[1]))
            T = _parse_matrix(entry["matrix"], N)
        except (KeyError, TypeError, IndexError) as exc:
            raise ModelFormatError(f"malformed hopping entry: {exc}") from exc
        terms[cell] = terms.get(cell, 0) + T
    scale = max((float(np.abs(T).max()) for T in terms.values()), default=1.0)
    scale = max(scale, 1.0)
    completed = dict(terms)
    for (m1, m2), T in terms.items():
        partner = terms.get((-m1, -m2))
        if partner is None:
            completed[(-m1, -m2)] = T.conj().T
        elif np.abs(partner - T.conj().T).max() > PAIRING_ATOL * scale:
            raise HoppingConflict(
                f"hoppings at ({m1},{m2}) and ({-m1},{-m2}) are not "
                "Hermitian partners"
            )
    return HoppingModel(
        lattice=lat,
        norbitals=N,
        positions=orbitals,
        terms=completed,
        fermi_energy=mu,
    )


def load_model(path) -> HoppingModel:
    """Load a model from a JSON file (schema above)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid JSON: {exc}") from exc
    return model_from_dict(data)
