"""
Geometry of re-entrant sinusoidal metastructures.

A design is fully described by three variables: the wavelength ``lam``, the ligament thickness ``t`` and the
amplitude ``A`` of the sine curve

    y(x) = A sin(2 pi x / lam)

The unit cell is a square of side ``lam``. It holds two sine chains with baselines at lam/4 and 3 lam/4. The lower
chain is the mirrored copy of the upper one, so the chains bend towards each other at x = 3 lam/4 (where the
surfaces of the two ligaments are separated by the peak gap d) and away from each other at x = lam/4. Straight
connectors join neighbouring chains where they bend apart; the connector between the cell and its neighbours
above and below is cut in half by the cell boundary.

For the mechanical model every ligament is represented by its centerline, discretised in straight beam segments.
"""

import logging
import math

from dataclasses import dataclass, field

import numpy as np

from scipy.spatial import cKDTree
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from metapatch.errors import InvalidGeometry, DisconnectedMesh

logger = logging.getLogger(__name__)

MERGE_TOLERANCE = 1e-6

DESIGN_VARIABLES = ('lambda', 't', 'A')


@dataclass(frozen=True)
class DesignParams:
    """The three design variables of a sinusoidal metastructure, all in mm."""

    lam: float
    t: float
    A: float

    def as_array(self):
        """Design variables in the (lambda, t, A) order used by every network."""
        return np.array([self.lam, self.t, self.A], dtype=float)

    def to_dict(self):
        return {'lambda': float(self.lam), 't': float(self.t), 'A': float(self.A)}

    @classmethod
    def from_dict(cls, record):
        return cls(lam=float(record['lambda']), t=float(record['t']), A=float(record['A']))

    @classmethod
    def from_array(cls, values):
        lam, t, A = (float(v) for v in values)
        return cls(lam=lam, t=t, A=A)


@dataclass(frozen=True)
class ValidDesign:
    """A design that passed :func:`validate_design`. ``d`` is the gap between facing peaks (mm)."""

    params: DesignParams
    d: float

    @property
    def lam(self):
        return self.params.lam

    @property
    def t(self):
        return self.params.t

    @property
    def A(self):
        return self.params.A

    def as_array(self):
        return self.params.as_array()

    def to_dict(self):
        return self.params.to_dict()


@dataclass(frozen=True)
class UnitCell:
    """
    Discretised unit cell.

    ``curves`` are 8 ligament surfaces, each a copy of the base sine shifted vertically (and mirrored for the chains
    that bend the other way), ordered from bottom to top in pairs offset by ``t``: the facing chain of the cell below,
    the two chains of the cell and the facing chain of the cell above. Both peak gaps of the cell can be read off
    them. ``centerlines`` are the centerlines of the two chains of the cell and ``links`` the straight connectors.
    Only centerlines and links enter the mesh.
    """

    design: ValidDesign
    curves: tuple
    centerlines: tuple
    links: tuple
    cell_width: float
    cell_height: float
    n_segments: int

    def base_curve(self):
        """Samples of y(x) = A sin(2 pi x / lam) on [0, lam], starting in the origin."""
        lam, A = self.design.lam, self.design.A
        x = np.arange(self.n_segments + 1) * (lam / self.n_segments)
        x[-1] = lam
        return np.column_stack([x, A * np.sin(2 * np.pi * x / lam)])

    def polylines(self):
        """All polylines that are converted to beam elements."""
        return self.centerlines + self.links


@dataclass(frozen=True)
class Mesh:
    """
    Beam frame of a tiled patch.

    nodes: (n, 2) reference coordinates in mm
    elements: (m, 2) node indices
    thickness: (m,) in-plane section depth t of every element in mm
    t_e: out-of-plane thickness in mm
    """

    nodes: np.ndarray
    elements: np.ndarray
    thickness: np.ndarray
    t_e: float
    left_edge: np.ndarray
    right_edge: np.ndarray
    center_cell_nodes: np.ndarray
    lam: float = 1.0
    nx: int = 1
    ny: int = 1
    center_box: tuple = field(default=(0.0, 0.0, 0.0, 0.0))

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def width(self):
        return float(self.nodes[:, 0].max() - self.nodes[:, 0].min())

    @property
    def height(self):
        return float(self.nodes[:, 1].max() - self.nodes[:, 1].min())


# { Design variables

def peak_gap(lam, t, A):
    """Distance between facing peaks: d = lam/2 - 2A - t."""
    return lam / 2. - 2. * A - t


def validate_design(p):
    """
    Check the sign conditions of a design and compute its peak gap.

    :param p: DesignParams or an iterable (lambda, t, A)
    :return: ValidDesign
    :raises InvalidGeometry: when a variable is not strictly positive or the peaks overlap (d <= 0)
    """
    if not isinstance(p, DesignParams):
        p = DesignParams.from_array(p)

    for name, value in zip(DESIGN_VARIABLES, (p.lam, p.t, p.A)):
        if not np.isfinite(value) or value <= 0:
            raise InvalidGeometry("{} must be strictly positive, got {}".format(name, value))

    d = peak_gap(p.lam, p.t, p.A)
    if d <= 0:
        raise InvalidGeometry("peak gap d = lambda/2 - 2A - t = {:.6g} mm is not positive".format(d))

    return ValidDesign(params=p, d=d)


def is_valid(lam, t, A):
    """Vectorised validity test, accepts arrays."""
    lam, t, A = np.asarray(lam), np.asarray(t), np.asarray(A)
    return (lam > 0) & (t > 0) & (A > 0) & (peak_gap(lam, t, A) > 0)


def rescale_design(v, target_lambda):
    """
    Scale all three variables by target_lambda / lambda. Scaling keeps the sign of d, so the result stays valid.
    """
    if target_lambda <= 0:
        raise InvalidGeometry("target wavelength must be positive, got {}".format(target_lambda))
    factor = target_lambda / v.lam
    return validate_design(DesignParams(lam=float(target_lambda), t=v.t * factor, A=v.A * factor))

# }


# { Unit cell

def _segments_per_wavelength(lam, A, max_segment):
    # chord length between two samples is bounded by dx * sqrt(1 + max slope^2)
    max_slope = 2 * np.pi * A / lam
    n = math.ceil(lam * math.sqrt(1 + max_slope ** 2) / max_segment)
    # connectors attach at lam/4 and 3 lam/4
    return max(4, 4 * math.ceil(n / 4))


def _straight(start, end, max_segment):
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    n = max(1, math.ceil(np.hypot(*(end - start)) / max_segment))
    s = np.linspace(0., 1., n + 1)[:, None]
    return start + s * (end - start)


def build_unit_cell(v, max_segment):
    """
    Discretise the unit cell of a valid design.

    :param v: ValidDesign
    :param max_segment: maximum length of a straight segment in mm
    :return: UnitCell
    """
    if max_segment <= 0:
        raise ValueError("max_segment must be positive, got {}".format(max_segment))

    lam, t, A = v.lam, v.t, v.A
    n = _segments_per_wavelength(lam, A, max_segment)

    x = np.arange(n + 1) * (lam / n)
    x[-1] = lam
    wave = A * np.sin(2 * np.pi * x / lam)

    def copy(y0, sign):
        return np.column_stack([x, y0 + sign * wave])

    low, high = lam / 4., 3. * lam / 4.

    chains = ((low - lam / 2., 1), (low, -1), (high, 1), (high + lam / 2., -1))
    curves = tuple(copy(y0 + side * t / 2., sign) for y0, sign in chains for side in (-1, 1))
    centerlines = (copy(low, -1), copy(high, 1))

    links = (
        _straight((lam / 4., low - A), (lam / 4., high + A), max_segment),
        _straight((3 * lam / 4., 0.), (3 * lam / 4., low + A), max_segment),
        _straight((3 * lam / 4., high - A), (3 * lam / 4., lam), max_segment),
    )

    return UnitCell(design=v, curves=curves, centerlines=centerlines, links=links,
                    cell_width=lam, cell_height=lam, n_segments=n)

# }


# { Tiling

def _merge_points(points, tol):
    """Union of all points closer than tol. Returns the index of the merged node of every point."""
    n = len(points)
    pairs = cKDTree(points).query_pairs(r=tol, output_type='ndarray')
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    # number merged nodes in order of first appearance
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse.ravel()], points[np.sort(first)]


def tile_patch(cell, nx, ny, t_e=1.0, tol=MERGE_TOLERANCE):
    """
    Replicate a unit cell in an nx by ny array and merge coincident nodes.

    :param cell: UnitCell
    :param nx: number of cells along x
    :param ny: number of cells along y
    :param t_e: out-of-plane thickness (mm) stored with the mesh
    :return: Mesh
    :raises DisconnectedMesh: if the merged frame falls apart in several pieces
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1, got {} x {}".format(nx, ny))

    lam = cell.cell_width
    points, segments = [], []
    offset = 0
    for j in range(ny):
        for i in range(nx):
            shift = np.array([i * cell.cell_width, j * cell.cell_height])
            for line in cell.polylines():
                points.append(line + shift)
                idx = np.arange(offset, offset + len(line))
                segments.append(np.column_stack([idx[:-1], idx[1:]]))
                offset += len(line)

    points = np.vstack(points)
    segments = np.vstack(segments)

    node_id, nodes = _merge_points(points, tol)
    elements = node_id[segments]

    if np.any(elements[:, 0] == elements[:, 1]):
        raise DisconnectedMesh("degenerate segment shorter than the merge tolerance")

    # shared boundary segments would be counted twice
    key = np.sort(elements, axis=1)
    _, keep = np.unique(key, axis=0, return_index=True)
    elements = elements[np.sort(keep)]

    n = len(nodes)
    graph = coo_matrix((np.ones(len(elements)), (elements[:, 0], elements[:, 1])), shape=(n, n))
    n_components, _ = connected_components(graph, directed=False)
    if n_components != 1:
        raise DisconnectedMesh("patch frame has {} disconnected parts".format(n_components))

    x, y = nodes[:, 0], nodes[:, 1]
    left_edge = np.flatnonzero(np.abs(x - x.min()) <= tol)
    right_edge = np.flatnonzero(np.abs(x - x.max()) <= tol)

    ci, cj = nx // 2, ny // 2
    box = (ci * cell.cell_width, (ci + 1) * cell.cell_width, cj * cell.cell_height, (cj + 1) * cell.cell_height)
    inside = (x >= box[0] - tol) & (x <= box[1] + tol) & (y >= box[2] - tol) & (y <= box[3] + tol)

    mesh = Mesh(nodes=nodes, elements=elements, thickness=np.full(len(elements), cell.design.t),
                t_e=float(t_e), left_edge=left_edge, right_edge=right_edge,
                center_cell_nodes=np.flatnonzero(inside), lam=lam, nx=nx, ny=ny, center_box=box)

    logger.debug("tiled %d x %d patch: %d nodes, %d elements", nx, ny, mesh.n_nodes, mesh.n_elements)

    return mesh


def build_patch(v, max_segment=None, nx=5, ny=5, t_e=1.0):
    """Unit cell and tiling in one call. The default resolution is lam/32."""
    if max_segment is None:
        max_segment = v.lam / 32.
    return tile_patch(build_unit_cell(v, max_segment), nx, ny, t_e=t_e)

# }
