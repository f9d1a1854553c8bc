"""Uniform tensor grids, coefficient fields, and flux-form operator assembly.

The operator assembled here is the divergence-form elliptic operator

    L u = -d/dx_k ( a_jk(x) du/dx_j ) + c(x) u

on a truncated box [-X, X]^dim with Dirichlet or periodic boundary,
discretized with second-order conservative (flux-form) differences so that
the resulting matrix is symmetric by construction.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

VALID_BOUNDARIES = ("dirichlet", "periodic")
FIELD_KINDS = ("identity", "radial_bump", "tabulated")

# Roundoff-scale slack used by validity checks on assembled matrices.
SYMMETRY_TOL = 1e-12
EIGENVALUE_NEGATIVITY_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on [-X, X]^dim.

    Dirichlet grids include both endpoints (spacing 2X/(N-1)); periodic
    grids drop the duplicate right endpoint (spacing 2X/N).
    """

    dim: int
    points_per_axis: int
    half_length: float
    boundary: str

    @property
    def spacing(self) -> float:
        n, x = self.points_per_axis, self.half_length
        return 2.0 * x / n if self.boundary == "periodic" else 2.0 * x / (n - 1)

    @property
    def n_nodes(self) -> int:
        return self.points_per_axis**self.dim

    def axis_nodes(self) -> np.ndarray:
        """Node coordinates along one axis: -X + i*h."""
        i = np.arange(self.points_per_axis)
        return -self.half_length + i * self.spacing

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, dim), axis-0 fastest last."""
        ax = self.axis_nodes()
        if self.dim == 1:
            return ax[:, None]
        g0, g1 = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])

    def interior_mask(self) -> np.ndarray:
        """Boolean mask of degree-of-freedom nodes (all nodes if periodic)."""
        if self.boundary == "periodic":
            return np.ones(self.n_nodes, dtype=bool)
        n = self.points_per_axis
        ax = (np.arange(n) > 0) & (np.arange(n) < n - 1)
        if self.dim == 1:
            return ax
        return (ax[:, None] & ax[None, :]).ravel()

    @property
    def n_dof(self) -> int:
        if self.boundary == "periodic":
            return self.n_nodes
        return (self.points_per_axis - 2) ** self.dim

    def dof_nodes(self) -> np.ndarray:
        return self.nodes()[self.interior_mask()]


@dataclass(frozen=True)
class CoefficientField:
    """Sampled matrix field a_jk(x) and scalar field c(x) with metadata.

    ``a`` has shape (n_nodes, dim, dim), ``c`` shape (n_nodes,);
    ``ellipticity`` stores the measured uniform lower bound on the
    smallest eigenvalue of a(x) over the grid.
    """

    a: np.ndarray
    c: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    ellipticity: float = 0.0


@dataclass(frozen=True)
class DiscreteOperator:
    """Symmetric matrix realization of the elliptic operator on a grid."""

    matrix: np.ndarray
    grid: Grid
    coefficients: CoefficientField
    stencil: str = "flux_form"

    @property
    def n_dof(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class HypothesisReport:
    """Measured structural hypotheses of a coefficient field."""

    symmetric: bool
    asymmetric_nodes: tuple
    ellipticity_lambda: float
    c_nonnegative: bool
    negative_c_nodes: tuple
    flatness_profile: tuple  # pairs (radius, sup over ||x|| >= radius of sum |a - I|)
    regularity_proxy: dict  # max |d a|, |d^2 a| finite-difference estimates


def build_grid(dim: int, n: int, half_length: float, boundary: str) -> Grid:
    """Construct a validated uniform grid on [-X, X]^dim."""
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if n < 3:
        raise ValueError(f"points_per_axis must be >= 3, got {n}")
    if half_length <= 0:
        raise ValueError(f"half_length must be positive, got {half_length}")
    if boundary not in VALID_BOUNDARIES:
        raise ValueError(f"boundary must be one of {VALID_BOUNDARIES}, got {boundary!r}")
    return Grid(dim, n, float(half_length), boundary)


def _min_eig_2x2(a: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of symmetric 2x2 matrices, shape (n, 2, 2) -> (n,)."""
    tr = a[:, 0, 0] + a[:, 1, 1]
    det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    disc = np.sqrt(np.maximum((tr / 2) ** 2 - det, 0.0))
    return tr / 2 - disc


def min_eigenvalues(a: np.ndarray) -> np.ndarray:
    """Per-node smallest eigenvalue of the coefficient matrices."""
    if a.shape[1] == 1:
        return a[:, 0, 0]
    return _min_eig_2x2(a)


def _validate_field(a: np.ndarray, c: np.ndarray, grid: Grid) -> float:
    """Check symmetry / ellipticity / nonnegativity; return the ellipticity bound."""
    asym = np.abs(a - np.transpose(a, (0, 2, 1))).max(axis=(1, 2))
    if asym.max() > 0:
        node = int(np.argmax(asym))
        raise ValueError(
            f"coefficient matrix not symmetric at node {node} "
            f"(x = {grid.nodes()[node]}, |a - a^T| = {asym[node]:.3e})"
        )
    lam_nodes = min_eigenvalues(a)
    lam = float(lam_nodes.min())
    if lam <= 0:
        node = int(np.argmin(lam_nodes))
        raise ValueError(
            f"ellipticity violated at node {node} (x = {grid.nodes()[node]}, "
            f"min eigenvalue of a = {lam:.3e} <= 0)"
        )
    if c.min() < 0:
        node = int(np.argmin(c))
        raise ValueError(
            f"zeroth-order coefficient negative at node {node} "
            f"(x = {grid.nodes()[node]}, c = {c[node]:.3e})"
        )
    return lam


def make_coefficients(grid: Grid, kind: str, params: dict | None = None) -> CoefficientField:
    """Build a coefficient field of the given kind and validate its hypotheses.

    Kinds:
      identity     a = I, c = 0.
      radial_bump  a(x) = I + s * exp(-|x|^2 / w^2) * M with symmetric M;
                   c(x) = c_amp * exp(-|x|^2 / c_w^2), c_amp >= 0.
      tabulated    explicit arrays in params["a"], params["c"].
    """
    params = dict(params or {})
    n_nodes, dim = grid.n_nodes, grid.dim
    if kind == "identity":
        a = np.broadcast_to(np.eye(dim), (n_nodes, dim, dim)).copy()
        c = np.zeros(n_nodes)
    elif kind == "radial_bump":
        s = float(params.get("s", 0.5))
        w = float(params.get("w", 1.0))
        m = np.atleast_2d(np.asarray(params.get("M", np.eye(dim)), dtype=float))
        if m.shape != (dim, dim):
            raise ValueError(f"M must be {dim}x{dim}, got shape {m.shape}")
        if not np.array_equal(m, m.T):
            raise ValueError("M must be symmetric")
        c_amp = float(params.get("c_amp", 0.0))
        c_w = float(params.get("c_w", w))
        r2 = (grid.nodes() ** 2).sum(axis=1)
        bump = np.exp(-r2 / w**2)
        a = np.eye(dim) + s * bump[:, None, None] * m
        c = c_amp * np.exp(-r2 / c_w**2)
    elif kind == "tabulated":
        a = np.asarray(params.pop("a"), dtype=float).reshape(n_nodes, dim, dim)
        c = np.asarray(params.pop("c"), dtype=float).reshape(n_nodes)
    else:
        raise ValueError(f"unknown coefficient kind {kind!r}, expected one of {FIELD_KINDS}")
    lam = _validate_field(a, c, grid)
    return CoefficientField(a=a, c=c, kind=kind, params=params, ellipticity=lam)


def load_coefficients_csv(grid: Grid, path: str | Path) -> CoefficientField:
    """Load a tabulated field from CSV.

    Columns: one node index per axis, then the dim*dim entries of a
    (row-major), then c. One row per grid node.
    """
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    dim = grid.dim
    expected_cols = dim + dim * dim + 1
    if raw.shape[1] != expected_cols:
        raise ValueError(f"expected {expected_cols} columns, got {raw.shape[1]}")
    if raw.shape[0] != grid.n_nodes:
        raise ValueError(f"expected {grid.n_nodes} rows, got {raw.shape[0]}")
    idx = raw[:, :dim].astype(int)
    flat = idx[:, 0] if dim == 1 else idx[:, 0] * grid.points_per_axis + idx[:, 1]
    order = np.argsort(flat)
    if not np.array_equal(flat[order], np.arange(grid.n_nodes)):
        raise ValueError("node indices do not enumerate the grid exactly once")
    a = raw[order, dim:dim + dim * dim].reshape(grid.n_nodes, dim, dim)
    c = raw[order, -1]
    return make_coefficients(grid, "tabulated", {"a": a, "c": c})


def _axis_index_pairs(grid: Grid, axis: int):
    """(left, right) flat node indices of the faces along one axis.

    For Dirichlet, boundary-adjacent faces are returned too; missing
    neighbors outside the box carry a -1 marker.
    """
    n = grid.points_per_axis
    if grid.dim == 1:
        if grid.boundary == "periodic":
            left = np.arange(n)
            right = (left + 1) % n
        else:
            left = np.arange(n - 1)
            right = left + 1
        return left, right
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    flat = (ii * n + jj).ravel()
    if grid.boundary == "periodic":
        if axis == 0:
            nbr = ((ii + 1) % n * n + jj).ravel()
        else:
            nbr = (ii * n + (jj + 1) % n).ravel()
        return flat, nbr
    if axis == 0:
        keep = (ii < n - 1).ravel()
        nbr = ((ii + 1) * n + jj).ravel()
    else:
        keep = (jj < n - 1).ravel()
        nbr = (ii * n + jj + 1).ravel()
    return flat[keep], nbr[keep]


def _centered_difference(grid: Grid, axis: int) -> sp.csr_matrix:
    """Centered first-difference matrix on dof space (zero-extended Dirichlet)."""
    n = grid.points_per_axis
    h = grid.spacing
    if grid.boundary == "periodic":
        ide = sp.eye(n, format="csr")
        up = sp.diags([np.ones(n - 1)], [1], shape=(n, n), format="lil")
        up[n - 1, 0] = 1.0
        d1 = (up.tocsr() - up.tocsr().T) / (2 * h)
        if grid.dim == 1:
            return d1.tocsr()
        return (sp.kron(d1, ide) if axis == 0 else sp.kron(ide, d1)).tocsr()
    m = n - 2
    ide = sp.eye(m, format="csr")
    d1 = sp.diags([np.ones(m - 1), -np.ones(m - 1)], [1, -1], shape=(m, m)) / (2 * h)
    if grid.dim == 1:
        return d1.tocsr()
    return (sp.kron(d1, ide) if axis == 0 else sp.kron(ide, d1)).tocsr()


def assemble(grid: Grid, coefficients: CoefficientField) -> DiscreteOperator:
    """Assemble the symmetric flux-form matrix of L on the grid dofs.

    Per-axis second derivatives use face-averaged coefficients
    a_{i+1/2} = (a_i + a_{i+1}) / 2. The 2D mixed term -d_j(a_jk d_k u),
    j != k, is discretized through the symmetric bilinear form
    D_0^T B D_1 + D_1^T B D_0 with centered differences D_j and the
    nodal values B = diag(a_01); symmetry is exact by construction and
    positivity is verified by test.
    """
    if coefficients.a.shape[0] != grid.n_nodes:
        raise ValueError(
            f"field has {coefficients.a.shape[0]} nodes, grid has {grid.n_nodes}"
        )
    h = grid.spacing
    n_nodes = grid.n_nodes
    mask = grid.interior_mask()
    dof_of_node = -np.ones(n_nodes, dtype=int)
    dof_of_node[mask] = np.arange(grid.n_dof)

    rows, cols, vals = [], [], []
    diag = np.zeros(grid.n_dof)
    for axis in range(grid.dim):
        left, right = _axis_index_pairs(grid, axis)
        a_face = 0.5 * (
            coefficients.a[left, axis, axis] + coefficients.a[right, axis, axis]
        ) / h**2
        dl, dr = dof_of_node[left], dof_of_node[right]
        both = (dl >= 0) & (dr >= 0)
        np.add.at(diag, dl[dl >= 0], a_face[dl >= 0])
        np.add.at(diag, dr[dr >= 0], a_face[dr >= 0])
        rows.append(dl[both])
        cols.append(dr[both])
        vals.append(-a_face[both])

    r = np.concatenate(rows)
    c_idx = np.concatenate(cols)
    v = np.concatenate(vals)
    off = sp.coo_matrix((v, (r, c_idx)), shape=(grid.n_dof, grid.n_dof)).toarray()
    matrix = off + off.T + np.diag(diag + coefficients.c[mask])

    if grid.dim == 2:
        b = coefficients.a[mask, 0, 1]
        if np.any(b != 0):
            d0 = _centered_difference(grid, 0)
            d1 = _centered_difference(grid, 1)
            k = (d0.T @ sp.diags(b) @ d1).toarray()
            matrix = matrix + (k + k.T)

    return DiscreteOperator(matrix=matrix, grid=grid, coefficients=coefficients)


def gershgorin_lower_bound(matrix: np.ndarray) -> float:
    """Smallest Gershgorin disc lower endpoint of a symmetric matrix."""
    d = np.diag(matrix)
    radii = np.abs(matrix).sum(axis=1) - np.abs(d)
    return float((d - radii).min())


def centered_gradient(grid: Grid, values: np.ndarray) -> list[np.ndarray]:
    """Centered first differences of dof fields along each axis.

    ``values`` has the dof axis first; Dirichlet fields are extended by
    zero, periodic fields wrap. Matches the stencil spacing used by the
    assembled operator.
    """
    h = grid.spacing
    if grid.boundary == "periodic":
        shape = (grid.points_per_axis,) * grid.dim
    else:
        shape = (grid.points_per_axis - 2,) * grid.dim
    v = values.reshape(shape + values.shape[1:])
    grads = []
    for axis in range(grid.dim):
        if grid.boundary == "periodic":
            g = (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2 * h)
        else:
            pad = np.zeros_like(np.take(v, [0], axis=axis))
            vp = np.concatenate([pad, v, pad], axis=axis)
            g = (np.take(vp, range(2, vp.shape[axis]), axis=axis)
                 - np.take(vp, range(0, vp.shape[axis] - 2), axis=axis)) / (2 * h)
        grads.append(g.reshape(values.shape))
    return grads


def check_hypotheses(coefficients: CoefficientField, grid: Grid) -> HypothesisReport:
    """Report on the structural hypotheses; never raises.

    The flatness profile samples sup over ||x|| >= R of sum_jk |a_jk - delta_jk|
    at radii R in {X/4, X/2, 3X/4}. Smoothness of the coefficients cannot be
    enforced on sampled data, so finite-difference magnitudes of first and
    second differences are reported as a proxy only.
    """
    a, c = coefficients.a, coefficients.c
    dim = grid.dim
    asym = np.abs(a - np.transpose(a, (0, 2, 1))).max(axis=(1, 2))
    bad_sym = tuple(int(i) for i in np.nonzero(asym > 0)[0])
    lam = float(min_eigenvalues(0.5 * (a + np.transpose(a, (0, 2, 1)))).min())
    bad_c = tuple(int(i) for i in np.nonzero(c < 0)[0])

    dev = np.abs(a - np.eye(dim)).sum(axis=(1, 2))
    radius = np.sqrt((grid.nodes() ** 2).sum(axis=1))
    x = grid.half_length
    profile = []
    for r in (x / 4, x / 2, 3 * x / 4):
        outside = radius >= r
        sup = float(dev[outside].max()) if outside.any() else 0.0
        profile.append((float(r), sup))

    shape = (grid.points_per_axis,) * dim + (dim, dim)
    a_grid = a.reshape(shape)
    h = grid.spacing
    d1 = max(
        float(np.abs(np.diff(a_grid, axis=ax)).max()) / h for ax in range(dim)
    )
    d2 = max(
        float(np.abs(np.diff(a_grid, n=2, axis=ax)).max()) / h**2 for ax in range(dim)
    )
    return HypothesisReport(
        symmetric=not bad_sym,
        asymmetric_nodes=bad_sym,
        ellipticity_lambda=lam,
        c_nonnegative=not bad_c,
        negative_c_nodes=bad_c,
        flatness_profile=tuple(profile),
        regularity_proxy={"max_first_derivative": d1, "max_second_derivative": d2},
    )
