"""Canonical 19-channel 10-20 electrode set: names, symmetry pairs, positions.

Coordinates live on the unit sphere with +x toward the right ear, +y toward
the nasion, +z toward the vertex.  The outer ring (Fp, F7/F8, T3/T4, T5/T6,
O1/O2) sits on the equator at the classical 10%/20% azimuths; Fz/Cz/Pz and
C3/C4 sit on the midline/coronal arcs at 45 degrees from the vertex; F3/F4
and P3/P4 are the spherical midpoints of their neighbouring arc endpoints
(F7-Fz, F8-Fz, T5-Pz, T6-Pz).  No published coordinate table is assumed;
this constructive layout is mirror-symmetric about the x=0 midline plane by
design.
"""

from dataclasses import dataclass
from math import cos, pi, radians, sin

import numpy as np

CHANNELS = (
    "FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2",
    "F7", "F8", "T3", "T4", "T5", "T6", "FZ", "CZ", "PZ",
)

# Left/right homologous pairs swapped by the scalp-midline reflection.
HOMOLOGOUS_PAIRS = (
    ("FP1", "FP2"), ("F3", "F4"), ("F7", "F8"), ("C3", "C4"),
    ("T3", "T4"), ("P3", "P4"), ("T5", "T6"), ("O1", "O2"), ("A1", "A2"),
)

MIDLINE = ("FZ", "CZ", "PZ")


def _sph(theta_deg: float, phi_deg: float) -> np.ndarray:
    """Unit vector at polar angle theta (from +z) and azimuth phi (from +x)."""
    t, p = radians(theta_deg), radians(phi_deg)
    return np.array([sin(t) * cos(p), sin(t) * sin(p), cos(t)])


def _arc_midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = a + b
    return m / np.linalg.norm(m)


def _build_coords() -> np.ndarray:
    pos = {
        "CZ": _sph(0, 0),
        "FZ": _sph(45, 90),
        "PZ": _sph(45, 270),
        "C3": _sph(45, 180),
        "C4": _sph(45, 0),
        # equatorial ring, 36-degree spacing
        "T4": _sph(90, 0),
        "F8": _sph(90, 36),
        "FP2": _sph(90, 72),
        "FP1": _sph(90, 108),
        "F7": _sph(90, 144),
        "T3": _sph(90, 180),
        "T5": _sph(90, 216),
        "O1": _sph(90, 252),
        "O2": _sph(90, 288),
        "T6": _sph(90, 324),
    }
    pos["F3"] = _arc_midpoint(pos["F7"], pos["FZ"])
    pos["F4"] = _arc_midpoint(pos["F8"], pos["FZ"])
    pos["P3"] = _arc_midpoint(pos["T5"], pos["PZ"])
    pos["P4"] = _arc_midpoint(pos["T6"], pos["PZ"])
    return np.array([pos[name] for name in CHANNELS])


@dataclass(frozen=True)
class ElectrodeLayout:
    """Electrode names plus their unit-sphere positions."""

    names: tuple
    coords: np.ndarray  # (n, 3), unit norm rows

    @classmethod
    def standard_10_20(cls) -> "ElectrodeLayout":
        return cls(names=CHANNELS, coords=_build_coords())

    @property
    def n_electrodes(self) -> int:
        return len(self.names)

    def pairwise_distances(self) -> np.ndarray:
        """Euclidean (chord) distances between all electrode pairs."""
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))

    def index(self, name: str) -> int:
        return self.names.index(name)


def reflection_permutation(channels) -> np.ndarray:
    """Channel permutation realizing the scalp-midline reflection.

    Swaps each homologous left/right pair and leaves midline channels in
    place.  Raises if ``channels`` contains a label outside the canonical
    10-20 set extended by A1/A2.
    """
    channels = [c.upper() for c in channels]
    known = set(CHANNELS) | {"A1", "A2"} | set(MIDLINE)
    unknown = [c for c in channels if c not in known]
    if unknown:
        raise ValueError(f"unknown channel ordering, cannot reflect: {unknown}")
    swap = {}
    for left, right in HOMOLOGOUS_PAIRS:
        swap[left], swap[right] = right, left
    perm = np.empty(len(channels), dtype=np.intp)
    lookup = {c: i for i, c in enumerate(channels)}
    for i, c in enumerate(channels):
        partner = swap.get(c, c)
        if partner not in lookup:
            raise ValueError(f"channel {c} present without its mirror {partner}")
        perm[i] = lookup[partner]
    return perm
