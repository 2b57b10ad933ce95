"""
Displacement controlled tension test of a sinusoidal patch.

The patch is modelled as a plane frame of 2-node corotational Euler-Bernoulli beams with three degrees of freedom
per node (u, v, theta). Every element has a rectangular section t x t_e. The rigid rotation of an element is
removed from the nodal rotations, and the remaining local deformation (elongation and two end rotations) is linear
elastic in bending and follows the uniaxial material curve in tension/compression.

Units inside the solver are mm and N, so moduli are in N/mm^2 (1 N/mm^2 = 1000 kPa). Stresses reported to the
outside world are in kPa.
"""

import logging

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from scipy import sparse
from scipy.sparse.linalg import spsolve

from metapatch import geometry
from metapatch.errors import NonConvergence, SingularElement, DegenerateCell

logger = logging.getLogger(__name__)

KPA_PER_MPA = 1000.

DOF_PER_NODE = 3


def default_strain_grid():
    return np.round(np.arange(1, 31) * 0.005, 10)


@dataclass
class MechanicsConfig:

    t_e: float = 1.0
    strain_grid: np.ndarray = field(default_factory=default_strain_grid)
    newton_tol: float = 1e-6
    max_iters: int = 50
    max_bisections: int = 4
    segments_per_wavelength: int = 32
    nx: int = 5
    ny: int = 5

    def __post_init__(self):
        grid = np.asarray(self.strain_grid, dtype=float)
        if len(grid) != 30 or np.any(np.diff(grid) <= 0) or not np.allclose(np.diff(grid), 0.005) \
                or not np.isclose(grid[-1], 0.15):
            raise ValueError("strain grid must hold the 30 nominal strains 0.005, 0.010, ..., 0.15")
        self.strain_grid = grid

    @classmethod
    def from_setup(cls, setup):
        """Build from the ``mechanics`` section of a pipeline setup."""
        keys = ('t_e', 'newton_tol', 'max_iters', 'max_bisections', 'segments_per_wavelength', 'nx', 'ny')
        return cls(**{k: setup[k] for k in keys if k in setup})


class Material:
    """
    Piecewise linear uniaxial material. Stresses in kPa.

    Beyond the tabulated range the first and last segments are extended linearly. Bending uses the initial
    modulus E0.
    """

    def __init__(self, strain, stress):
        strain = np.asarray(strain, dtype=float)
        stress = np.asarray(stress, dtype=float)

        if strain.shape != stress.shape or len(strain) < 2:
            raise ValueError("material curve needs at least two (strain, stress) pairs of equal length")
        if np.any(np.diff(strain) <= 0):
            raise ValueError("material strains must be strictly increasing")
        if not np.isclose(np.interp(0., strain, stress), 0.) or strain[0] > 0 or strain[-1] < 0:
            raise ValueError("material curve must pass through (0, 0)")

        self.strain = strain
        self.stress = stress
        self.moduli = np.diff(stress) / np.diff(strain)
        if np.any(self.moduli <= 0):
            raise ValueError("material tangent modulus must be positive on every segment")

        segment = np.searchsorted(strain, 0., side='right') - 1
        self.E0 = float(self.moduli[min(max(segment, 0), len(self.moduli) - 1)])

    @classmethod
    def linear(cls, E0=1000.):
        """Linear elastic material, E0 in kPa (default 1 MPa)."""
        return cls([-1., 0., 1.], [-E0, 0., E0])

    @classmethod
    def from_csv(cls, filename):
        """Read a curve with columns ``strain`` and ``stress_kPa``."""
        data = pd.read_csv(filename)
        return cls(data['strain'].values, data['stress_kPa'].values)

    @property
    def is_linear(self):
        return np.allclose(self.moduli, self.moduli[0])

    def _segment(self, eps):
        return np.clip(np.searchsorted(self.strain, eps, side='right') - 1, 0, len(self.moduli) - 1)

    def stress_at(self, eps):
        """Stress (kPa) at strain eps."""
        k = self._segment(eps)
        return self.stress[k] + self.moduli[k] * (eps - self.strain[k])

    def tangent_at(self, eps):
        """Tangent modulus (kPa) at strain eps."""
        return self.moduli[self._segment(eps)]


@dataclass
class PropertyCurves:
    """Poisson's ratio and nominal stress (kPa) on the strain grid."""

    strain_grid: np.ndarray
    nu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.strain_grid = np.asarray(self.strain_grid, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not len(self.strain_grid) == len(self.nu) == len(self.sigma):
            raise ValueError("strain grid, nu and sigma must have the same length")

    def to_frame(self):
        return pd.DataFrame({'strain': self.strain_grid, 'nu': self.nu, 'sigma_kPa': self.sigma})


@dataclass
class SolveTrace:
    """Load step history of a tension test."""

    applied_strain: list = field(default_factory=list)
    reaction: list = field(default_factory=list)
    left_reaction: list = field(default_factory=list)
    eps_x: list = field(default_factory=list)
    eps_y: list = field(default_factory=list)
    nu: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    def append(self, **kwargs):
        for key, value in kwargs.items():
            getattr(self, key).append(value)

    def to_dict(self):
        return {k: [float(x) for x in v] for k, v in self.__dict__.items()}


# { Element kernel

def _wrap(angle):
    return (angle + np.pi) % (2 * np.pi) - np.pi


def _element_kinematics(mesh, state):
    X = mesh.nodes
    U = state.reshape(-1, DOF_PER_NODE)
    n1, n2 = mesh.elements[:, 0], mesh.elements[:, 1]

    d0 = X[n2] - X[n1]
    L0 = np.hypot(d0[:, 0], d0[:, 1])
    if np.any(L0 < 1e-12):
        bad = int(np.flatnonzero(L0 < 1e-12)[0])
        raise SingularElement("element {} has zero reference length".format(bad))
    beta0 = np.arctan2(d0[:, 1], d0[:, 0])

    d = d0 + U[n2, :2] - U[n1, :2]
    L = np.hypot(d[:, 0], d[:, 1])
    beta = np.arctan2(d[:, 1], d[:, 0])

    alpha = _wrap(beta - beta0)
    th1 = _wrap(U[n1, 2] - alpha)
    th2 = _wrap(U[n2, 2] - alpha)

    # elongation, written to avoid cancellation for small strains
    u = (L ** 2 - L0 ** 2) / (L + L0)

    return L0, L, beta, u, th1, th2


def _element_dofs(mesh):
    n = mesh.elements
    base = DOF_PER_NODE * n
    return np.column_stack([base[:, 0], base[:, 0] + 1, base[:, 0] + 2,
                            base[:, 1], base[:, 1] + 1, base[:, 1] + 2])


def _section(mesh):
    area = mesh.thickness * mesh.t_e
    inertia = mesh.t_e * mesh.thickness ** 3 / 12.
    return area, inertia


def element_forces(mesh, material, state, tangent=True):
    """
    Vectorised corotational element kernel.

    :return: (f, K) with f of shape (m, 6) and K of shape (m, 6, 6), or (f, None)
    """
    L0, L, beta, u, th1, th2 = _element_kinematics(mesh, state)
    area, inertia = _section(mesh)

    E0 = material.E0 / KPA_PER_MPA
    eps = u / L0
    N = area * material.stress_at(eps) / KPA_PER_MPA
    EI = E0 * inertia
    M1 = 2. * EI / L0 * (2. * th1 + th2)
    M2 = 2. * EI / L0 * (th1 + 2. * th2)

    c, s = np.cos(beta), np.sin(beta)
    zero, one = np.zeros_like(c), np.ones_like(c)

    r = np.stack([-c, -s, zero, c, s, zero], axis=1)
    z = np.stack([s, -c, zero, -s, c, zero], axis=1)
    b1 = np.stack([-s / L, c / L, one, s / L, -c / L, zero], axis=1)
    b2 = np.stack([-s / L, c / L, zero, s / L, -c / L, one], axis=1)

    f = N[:, None] * r + M1[:, None] * b1 + M2[:, None] * b2
    if not tangent:
        return f, None

    EA_t = area * material.tangent_at(eps) / KPA_PER_MPA
    B = np.stack([r, b1, b2], axis=1)
    D = np.zeros((len(L0), 3, 3))
    D[:, 0, 0] = EA_t / L0
    D[:, 1, 1] = D[:, 2, 2] = 4. * EI / L0
    D[:, 1, 2] = D[:, 2, 1] = 2. * EI / L0

    K = np.einsum('eai,eab,ebj->eij', B, D, B)
    K += (N / L)[:, None, None] * np.einsum('ei,ej->eij', z, z)
    rz = np.einsum('ei,ej->eij', r, z)
    K += ((M1 + M2) / L ** 2)[:, None, None] * (rz + rz.transpose(0, 2, 1))

    return f, K


def internal_force(mesh, material, state):
    f, _ = element_forces(mesh, material, state, tangent=False)
    dofs = _element_dofs(mesh)
    return np.bincount(dofs.ravel(), weights=f.ravel(), minlength=DOF_PER_NODE * mesh.n_nodes)


def assemble_tangent(mesh, material, state):
    """
    Global tangent stiffness and internal force vector at a displacement state.

    :param mesh: geometry.Mesh
    :param material: Material
    :param state: nodal displacements (u, v, theta) per node, flat array of length 3 * n_nodes
    :return: (K, f_int) with K a symmetric scipy CSR matrix
    """
    state = np.asarray(state, dtype=float)
    if state.shape != (DOF_PER_NODE * mesh.n_nodes,):
        raise ValueError("state must hold 3 dof per node, expected {} values got {}".format(
            DOF_PER_NODE * mesh.n_nodes, state.shape))

    f, Ke = element_forces(mesh, material, state)
    dofs = _element_dofs(mesh)
    n = DOF_PER_NODE * mesh.n_nodes

    f_int = np.bincount(dofs.ravel(), weights=f.ravel(), minlength=n)

    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    K = sparse.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = ((K + K.T) * 0.5).tocsr()

    return K, f_int

# }


# { Equilibrium solver

def _norm(x):
    return float(np.sqrt(np.dot(x, x)))


def solve_equilibrium(mesh, material, fixed_dofs, fixed_values, state0, loads=None, config=None, step=0):
    """
    Newton-Raphson solve of f_int(state) = loads on the free dofs with prescribed values on fixed_dofs.

    The first iterate is the linear predictor from the tangent at state0. Convergence is reached when the norm of the
    free residual is below newton_tol times the norm of the external forces (reactions plus applied loads).

    :return: (state, info) with info a dict holding reactions, residual and iteration count
    :raises NonConvergence: when max_iters is exceeded or the iterates become non-finite
    """
    config = config or MechanicsConfig()
    n = DOF_PER_NODE * mesh.n_nodes
    fixed_dofs = np.asarray(fixed_dofs, dtype=int)
    fixed_values = np.asarray(fixed_values, dtype=float)
    free = np.setdiff1d(np.arange(n), fixed_dofs)
    loads = np.zeros(n) if loads is None else np.asarray(loads, dtype=float)

    state = np.array(state0, dtype=float)

    # linear predictor
    K, f_int = assemble_tangent(mesh, material, state)
    delta_fixed = fixed_values - state[fixed_dofs]
    K_ff = K[free][:, free].tocsc()
    rhs = loads[free] - f_int[free] - K[free][:, fixed_dofs] @ delta_fixed
    state[fixed_dofs] = fixed_values
    state[free] += spsolve(K_ff, rhs)

    residual = np.inf
    for iteration in range(1, config.max_iters + 1):
        K, f_int = assemble_tangent(mesh, material, state)
        r = f_int[free] - loads[free]
        reference = _norm(f_int[fixed_dofs]) + _norm(loads)
        r_norm = _norm(r)
        residual = r_norm / reference if reference > 0 else r_norm

        if not np.isfinite(residual):
            break
        if r_norm <= config.newton_tol * reference or r_norm < 1e-13:
            reactions = np.zeros(n)
            reactions[fixed_dofs] = f_int[fixed_dofs]
            return state, {'reactions': reactions, 'residual': residual, 'iterations': iteration,
                           'f_int': f_int}

        K_ff = K[free][:, free].tocsc()
        state[free] -= spsolve(K_ff, r)
        if not np.all(np.isfinite(state)):
            break

    raise NonConvergence(step, residual)


def _anchor_node(mesh):
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return int(np.lexsort((y, x))[0])


def tension_constraints(mesh):
    """Dofs fixed in the tension test: u on both vertical edges and v of the anchor node."""
    left = DOF_PER_NODE * mesh.left_edge
    right = DOF_PER_NODE * mesh.right_edge
    anchor = DOF_PER_NODE * _anchor_node(mesh) + 1
    return left, right, anchor


def solve_increment(mesh, material, u_right, prev_state, config=None, u_right_prev=None, step=0):
    """
    Advance the tension test to a prescribed x-displacement of the right edge.

    The left edge has u = 0, one anchor node has v = 0, rotations are free. When Newton fails the increment is cut in
    halves, at most config.max_bisections times.

    :return: (state, info)
    """
    config = config or MechanicsConfig()
    left, right, anchor = tension_constraints(mesh)
    fixed = np.concatenate([left, right, [anchor]])

    if u_right_prev is None:
        u_right_prev = float(np.mean(prev_state[right])) if len(right) else 0.

    def values(u):
        return np.concatenate([np.zeros(len(left)), np.full(len(right), u), [0.]])

    def advance(state, a, b, level):
        try:
            return solve_equilibrium(mesh, material, fixed, values(b), state, config=config, step=step)
        except NonConvergence:
            if level >= config.max_bisections:
                raise
            logger.debug("step %d: bisecting increment %.6g -> %.6g (level %d)", step, a, b, level + 1)
            mid = 0.5 * (a + b)
            state, _ = advance(state, a, mid, level + 1)
            return advance(state, mid, b, level + 1)

    return advance(np.array(prev_state, dtype=float), u_right_prev, u_right, 0)


def linear_reactions(mesh, material, u_right):
    """Small strain reference: sum of x-reactions on the right edge from one linear solve at the reference state."""
    left, right, anchor = tension_constraints(mesh)
    fixed = np.concatenate([left, right, [anchor]])
    n = DOF_PER_NODE * mesh.n_nodes
    free = np.setdiff1d(np.arange(n), fixed)

    K, _ = assemble_tangent(mesh, material, np.zeros(n))
    u = np.zeros(n)
    u[right] = u_right
    u[free] = spsolve(K[free][:, free].tocsc(), -K[free][:, fixed] @ u[fixed])
    return float(np.sum((K @ u)[right]))

# }


# { Measurements

def measure_cell(mesh, state):
    """
    Nominal strains of the central cell from the bounding box of its nodes.

    :return: (eps_x, eps_y)
    """
    idx = np.asarray(mesh.center_cell_nodes)
    if len(idx) == 0:
        raise DegenerateCell("central cell has no nodes")

    X = mesh.nodes[idx]
    x = X + np.asarray(state, dtype=float).reshape(-1, DOF_PER_NODE)[idx, :2]

    ref = X.max(axis=0) - X.min(axis=0)
    if np.any(ref <= 0):
        raise DegenerateCell("central cell has zero reference width or height")
    cur = x.max(axis=0) - x.min(axis=0)
    eps = (cur - ref) / ref
    return float(eps[0]), float(eps[1])


def poisson_ratio(eps_x, eps_y):
    return -eps_y / eps_x


def nominal_stress(F_R, lam, t_e, n_cells=5):
    """
    Nominal stress in kPa: sigma = F_R / (n_cells * lam * t_e) with F_R in N and lengths in mm.
    """
    if lam <= 0 or t_e <= 0:
        raise ValueError("lambda and t_e must be positive")
    return F_R / (n_cells * lam * t_e) * KPA_PER_MPA

# }


def run_tension_test(v, material=None, config=None):
    """
    Stretch the patch of a valid design in 30 increments of 0.5 % nominal strain.

    :param v: geometry.ValidDesign
    :param material: Material, linear 1 MPa when None
    :param config: MechanicsConfig
    :return: (PropertyCurves, SolveTrace)
    :raises NonConvergence: carrying the index of the load step that failed
    """
    material = material or Material.linear()
    config = config or MechanicsConfig()

    mesh = geometry.build_patch(v, max_segment=v.lam / config.segments_per_wavelength,
                                nx=config.nx, ny=config.ny, t_e=config.t_e)
    width = config.nx * v.lam
    left, right, _ = tension_constraints(mesh)

    state = np.zeros(DOF_PER_NODE * mesh.n_nodes)
    trace = SolveTrace()
    u_prev = 0.

    for step, strain in enumerate(config.strain_grid):
        u_right = strain * width
        state, info = solve_increment(mesh, material, u_right, state, config=config, u_right_prev=u_prev, step=step)
        u_prev = u_right

        F_R = float(np.sum(info['reactions'][right]))
        eps_x, eps_y = measure_cell(mesh, state)
        trace.append(applied_strain=strain, reaction=F_R, left_reaction=float(np.sum(info['reactions'][left])),
                     eps_x=eps_x, eps_y=eps_y, nu=poisson_ratio(eps_x, eps_y),
                     sigma=nominal_stress(F_R, v.lam, config.t_e, n_cells=config.ny),
                     residual=info['residual'], iterations=info['iterations'])

    curves = PropertyCurves(strain_grid=config.strain_grid.copy(), nu=np.array(trace.nu),
                            sigma=np.array(trace.sigma))
    return curves, trace
