"""Exact density-matrix algebra over labeled tensor-factor registers.

States are dense ``complex128`` arrays addressed through a
:class:`RegisterLayout` (an ordered list of labeled factors), and every
spectral quantity goes through a Hermitian eigendecomposition with
eigenvalue clamping at ``-tolerance``.  All values are immutable after
construction and every operation is a pure function, so the module is safe
to use from concurrent code.

The text serialization used throughout the toolkit is documented in
:func:`state_to_text`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TOL = 1e-9

#: eigenvalues below this fraction of the largest one count as zero when
#: deciding supports and ranks
SUPPORT_RTOL = 1e-10


class LayoutError(ValueError):
    """Register labels or dimensions are inconsistent."""


class StateValidationError(ValueError):
    """A matrix fails the Hermitian / PSD / unit-trace checks."""


@dataclass(frozen=True)
class RegisterLayout:
    """Ordered decomposition of a Hilbert space into labeled factors.

    ``factors`` is a tuple of ``(label, dim)`` pairs; basis indices are
    row-major over the factors in order, which makes subsystem addressing
    stable under composition and permutation.
    """

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        factors = tuple((str(lb), int(d)) for lb, d in self.factors)
        object.__setattr__(self, "factors", factors)
        labels = [lb for lb, _ in factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate register labels in {labels}")
        if not factors:
            raise LayoutError("layout needs at least one factor")
        for lb, d in factors:
            if d < 1:
                raise LayoutError(f"register {lb!r} has dimension {d} < 1")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lb for lb, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=object))

    def position(self, label: str) -> int:
        for i, (lb, _) in enumerate(self.factors):
            if lb == label:
                return i
        raise LayoutError(f"unknown register label {label!r}")

    def dim_of(self, label: str) -> int:
        return self.factors[self.position(label)][1]

    def restrict(self, labels: Iterable[str]) -> "RegisterLayout":
        """Sub-layout of the given labels, in this layout's order."""
        wanted = set(labels)
        missing = wanted - set(self.labels)
        if missing:
            raise LayoutError(f"unknown register labels {sorted(missing)}")
        return RegisterLayout(tuple(f for f in self.factors if f[0] in wanted))

    def drop(self, labels: Iterable[str]) -> "RegisterLayout":
        dropped = set(labels)
        missing = dropped - set(self.labels)
        if missing:
            raise LayoutError(f"unknown register labels {sorted(missing)}")
        kept = tuple(f for f in self.factors if f[0] not in dropped)
        if not kept:
            raise LayoutError("cannot drop every register")
        return RegisterLayout(kept)

    def concat(self, other: "RegisterLayout") -> "RegisterLayout":
        clash = set(self.labels) & set(other.labels)
        if clash:
            raise LayoutError(f"register labels collide: {sorted(clash)}")
        return RegisterLayout(self.factors + other.factors)

    def reordered(self, label_order: Sequence[str]) -> "RegisterLayout":
        if sorted(label_order) != sorted(self.labels):
            raise LayoutError(
                f"{list(label_order)} is not a permutation of {list(self.labels)}"
            )
        return RegisterLayout(tuple((lb, self.dim_of(lb)) for lb in label_order))


def layout(*factors: tuple[str, int]) -> RegisterLayout:
    """Convenience constructor: ``layout(("M", 2), ("J", 4))``."""
    return RegisterLayout(tuple(factors))


def _as_matrix(matrix: np.ndarray) -> np.ndarray:
    m = np.array(matrix, dtype=np.complex128, order="C")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise StateValidationError(f"expected a square matrix, got shape {m.shape}")
    return m


def _check_psd(matrix: np.ndarray, tol: float) -> None:
    dim = matrix.shape[0]
    shifted = matrix + (tol + 1e-14) * np.eye(dim)
    try:
        np.linalg.cholesky(shifted)
        return
    except np.linalg.LinAlgError:
        pass
    low = float(np.linalg.eigvalsh(matrix)[0])
    if low < -tol:
        raise StateValidationError(f"matrix has eigenvalue {low} < -{tol}")


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, PSD, unit-trace matrix over a register layout.

    ``tolerance`` is the numerical slack used for the Hermitian / PSD /
    trace checks at construction time and inherited by derived quantities.
    """

    layout: RegisterLayout
    matrix: np.ndarray
    tolerance: float = DEFAULT_TOL

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        if m.shape[0] != self.layout.dim:
            raise LayoutError(
                f"matrix dimension {m.shape[0]} != layout dimension {self.layout.dim}"
            )
        tol = float(self.tolerance)
        if tol < 0:
            raise StateValidationError("tolerance must be nonnegative")
        # keep the entries untouched so text round trips stay bit-faithful
        if np.abs(m - m.conj().T).max() > tol:
            raise StateValidationError("matrix is not Hermitian within tolerance")
        tr = m.trace()
        if abs(tr - 1.0) > tol:
            raise StateValidationError(f"trace {tr} is not 1 within {tol}")
        _check_psd(m, tol)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "tolerance", tol)

    # -- constructors -------------------------------------------------

    @classmethod
    def pure(cls, vector, lay: RegisterLayout, tolerance: float = DEFAULT_TOL):
        v = np.asarray(vector, dtype=np.complex128).reshape(-1)
        if v.shape[0] != lay.dim:
            raise LayoutError(f"vector length {v.shape[0]} != layout dim {lay.dim}")
        nrm = np.linalg.norm(v)
        if abs(nrm - 1.0) > tolerance:
            raise StateValidationError(f"vector norm {nrm} is not 1")
        return cls(lay, np.outer(v, v.conj()), tolerance)

    @classmethod
    def maximally_mixed(cls, lay: RegisterLayout, tolerance: float = DEFAULT_TOL):
        d = lay.dim
        return cls(lay, np.eye(d) / d, tolerance)

    @classmethod
    def diagonal(cls, probs, lay: RegisterLayout, tolerance: float = DEFAULT_TOL):
        p = np.asarray(probs, dtype=float).reshape(-1)
        return cls(lay, np.diag(p.astype(np.complex128)), tolerance)

    # -- helpers ------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.layout.dim

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def marginal(self, labels: Iterable[str]) -> "DensityMatrix":
        """State on ``labels`` only (partial trace over the rest)."""
        keep = set(labels)
        discard = [lb for lb in self.layout.labels if lb not in keep]
        if not discard:
            return self
        return partial_trace(self, discard)

    def is_close_to(self, other: "DensityMatrix", atol: float = 1e-10) -> bool:
        return (
            self.layout == other.layout
            and np.abs(self.matrix - other.matrix).max() <= atol
        )


def _unchecked(lay: RegisterLayout, matrix: np.ndarray, tol: float) -> DensityMatrix:
    """Internal constructor for matrices already known to be valid states."""
    dm = object.__new__(DensityMatrix)
    m = np.ascontiguousarray(matrix, dtype=np.complex128)
    m.setflags(write=False)
    object.__setattr__(dm, "layout", lay)
    object.__setattr__(dm, "matrix", m)
    object.__setattr__(dm, "tolerance", tol)
    return dm


# ---------------------------------------------------------------------------
# composition and reduction
# ---------------------------------------------------------------------------


def tensor(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    """Tensor product; the layout is the concatenation of the factors."""
    lay = a.layout.concat(b.layout)
    return _unchecked(lay, np.kron(a.matrix, b.matrix), max(a.tolerance, b.tolerance))


def tensor_all(states: Sequence[DensityMatrix]) -> DensityMatrix:
    if not states:
        raise ValueError("need at least one state")
    out = states[0]
    for s in states[1:]:
        out = tensor(out, s)
    return out


def partial_trace(state: DensityMatrix, discard: Iterable[str]) -> DensityMatrix:
    """Trace out the registers named in ``discard``."""
    discard = list(discard)
    lay = state.layout
    for lb in discard:
        lay.position(lb)  # raises on unknown labels
    if len(set(discard)) == len(lay.labels):
        raise LayoutError("cannot trace out every register")
    dims = lay.dims
    r = len(dims)
    drop = {lay.position(lb) for lb in discard}
    tens = state.matrix.reshape(dims + dims)
    row = list(range(r))
    col = [i if i in drop else i + r for i in range(r)]
    out_idx = [i for i in range(r) if i not in drop] + [
        i + r for i in range(r) if i not in drop
    ]
    reduced = np.einsum(tens, row + col, out_idx)
    new_lay = lay.drop(discard)
    d = new_lay.dim
    return _unchecked(new_lay, reduced.reshape(d, d), state.tolerance)


def permute_registers(state: DensityMatrix, label_order: Sequence[str]) -> DensityMatrix:
    """Reorder the tensor factors; the matrix is permuted accordingly."""
    new_lay = state.layout.reordered(label_order)
    if new_lay == state.layout:
        return state
    dims = state.layout.dims
    r = len(dims)
    perm = [state.layout.position(lb) for lb in label_order]
    tens = state.matrix.reshape(dims + dims)
    tens = tens.transpose(perm + [p + r for p in perm])
    d = state.dim
    return _unchecked(new_lay, np.ascontiguousarray(tens.reshape(d, d)), state.tolerance)


def merge_adjacent_factors(
    state: DensityMatrix, labels: Sequence[str], new_label: str
) -> DensityMatrix:
    """Relabel a contiguous run of factors as one factor (matrix unchanged)."""
    lay = state.layout
    pos = [lay.position(lb) for lb in labels]
    if pos != list(range(pos[0], pos[0] + len(pos))):
        raise LayoutError(f"{list(labels)} are not contiguous in {list(lay.labels)}")
    merged_dim = int(np.prod([lay.dim_of(lb) for lb in labels]))
    factors = (
        lay.factors[: pos[0]]
        + ((new_label, merged_dim),)
        + lay.factors[pos[0] + len(pos):]
    )
    return _unchecked(RegisterLayout(factors), state.matrix, state.tolerance)


def pinch(state: DensityMatrix, labels: Iterable[str] | str) -> DensityMatrix:
    """Dephase the given registers in the computational basis.

    Matrix elements whose basis indices differ on any pinched register are
    zeroed; this is the channel ``X -> sum_j (I (x) |j><j|) X (I (x) |j><j|)``.
    """
    if isinstance(labels, str):
        labels = [labels]
    lay = state.layout
    mask = np.ones((state.dim, state.dim), dtype=bool)
    for lb in labels:
        digits = _digit_array(lay.dims, lay.position(lb))
        mask &= digits[:, None] == digits[None, :]
    return _unchecked(lay, np.where(mask, state.matrix, 0.0), state.tolerance)


def is_classical_on(state: DensityMatrix, labels: Iterable[str] | str) -> bool:
    """True when the off-block-diagonal Frobenius mass is below tolerance."""
    residual = state.matrix - pinch(state, labels).matrix
    return float(np.linalg.norm(residual)) <= max(state.tolerance, 1e-12)


def _digit_array(dims: Sequence[int], position: int) -> np.ndarray:
    """Digit of every basis index at ``position`` (row-major mixed radix)."""
    total = int(np.prod(dims))
    stride = int(np.prod(dims[position + 1:])) if position + 1 < len(dims) else 1
    return (np.arange(total) // stride) % dims[position]


# ---------------------------------------------------------------------------
# spectral helpers
# ---------------------------------------------------------------------------


def hermitian_sqrt(matrix: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Principal square root of a near-PSD Hermitian matrix.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything below
    ``-tol`` raises.
    """
    w, v = np.linalg.eigh(matrix)
    if w[0] < -tol:
        raise StateValidationError(f"matrix has eigenvalue {w[0]} < -{tol}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def support_projector(matrix: np.ndarray, rtol: float = SUPPORT_RTOL) -> np.ndarray:
    """Projector onto the eigenspaces above ``rtol * max eigenvalue``."""
    w, v = np.linalg.eigh(matrix)
    thresh = rtol * max(float(w[-1]), 0.0)
    keep = w > thresh
    vk = v[:, keep]
    return vk @ vk.conj().T


def trace_norm(matrix: np.ndarray) -> float:
    return float(np.linalg.svd(matrix, compute_uv=False).sum())


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Full trace norm ``||a - b||_1`` (not halved)."""
    if a.layout != b.layout:
        raise LayoutError("layouts differ")
    return float(np.abs(np.linalg.eigvalsh(a.matrix - b.matrix)).sum())


def fidelity(a: DensityMatrix, b: DensityMatrix) -> float:
    """Trace norm of ``sqrt(a) sqrt(b)``, in ``[0, 1]``."""
    if a.layout != b.layout:
        raise LayoutError("layouts differ")
    tol = max(a.tolerance, b.tolerance)
    sa = hermitian_sqrt(a.matrix, tol)
    w = np.linalg.eigvalsh(sa @ b.matrix @ sa)
    f = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    return min(max(f, 0.0), 1.0)


def purified_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """``sqrt(1 - F^2)`` with ``F`` the fidelity; a metric on states."""
    f = fidelity(a, b)
    return math.sqrt(max(0.0, 1.0 - f * f))


# ---------------------------------------------------------------------------
# purifications and extensions
# ---------------------------------------------------------------------------


def purify(
    state: DensityMatrix,
    ancilla_label: str,
    ancilla_dim: int | str | None = None,
) -> DensityMatrix:
    """Rank-1 extension of ``state`` on ``layout (x) ancilla``.

    The ancilla dimension defaults to the full layout dimension; pass
    ``"rank"`` for the smallest one that works, or an explicit integer.
    """
    if ancilla_label in state.layout.labels:
        raise LayoutError(f"ancilla label {ancilla_label!r} already in layout")
    w, v = np.linalg.eigh(state.matrix)
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    rank = max(1, int(np.sum(w > SUPPORT_RTOL * w[0])))
    if ancilla_dim is None:
        anc = state.dim
    elif ancilla_dim == "rank":
        anc = rank
    else:
        anc = int(ancilla_dim)
        if anc < rank:
            raise LayoutError(f"ancilla dimension {anc} < rank {rank}")
    amps = v[:, :min(rank, anc)] * np.sqrt(w[:min(rank, anc)])
    vec = np.zeros((state.dim, anc), dtype=np.complex128)
    vec[:, : amps.shape[1]] = amps
    vec = vec.reshape(-1)
    vec /= np.linalg.norm(vec)
    new_lay = state.layout.concat(RegisterLayout(((ancilla_label, anc),)))
    return DensityMatrix.pure(vec, new_lay, state.tolerance)


def _pure_vector(state: DensityMatrix, tol: float) -> np.ndarray:
    w, v = np.linalg.eigh(state.matrix)
    if state.dim > 1 and w[-2] > max(tol, 1e-8):
        raise StateValidationError("state is not rank 1")
    return v[:, -1] * np.sqrt(max(float(w[-1]), 0.0))


def uhlmann_partner(
    rho_pure_ab: DensityMatrix, theta_a: DensityMatrix
) -> DensityMatrix:
    """Purification of ``theta_a`` closest to a given pure bipartite state.

    ``rho_pure_ab`` is rank 1 on registers ``A + B`` where ``A`` carries
    ``theta_a``.  The returned pure state extends ``theta_a`` over ``B`` and
    its overlap with ``rho_pure_ab`` equals the fidelity of the ``A``
    marginals, which is the optimum.
    """
    lay = rho_pure_ab.layout
    a_labels = list(theta_a.layout.labels)
    for lb in a_labels:
        if lb not in lay.labels or lay.dim_of(lb) != theta_a.layout.dim_of(lb):
            raise LayoutError(f"register {lb!r} missing or mismatched in joint layout")
    b_labels = [lb for lb in lay.labels if lb not in a_labels]
    if not b_labels:
        raise LayoutError("no ancilla registers to purify over")
    ordered = permute_registers(rho_pure_ab, a_labels + b_labels)
    d_a = theta_a.layout.dim
    d_b = ordered.dim // d_a

    tolerance = max(rho_pure_ab.tolerance, theta_a.tolerance)
    psi = _pure_vector(ordered, tolerance).reshape(d_a, d_b)

    w, q = np.linalg.eigh(theta_a.matrix)
    w = np.clip(w, 0.0, None)
    keep = w > SUPPORT_RTOL * max(w[-1], 1e-300)
    rank = int(keep.sum())
    if d_b < rank:
        raise LayoutError(f"ancilla dimension {d_b} < rank({rank}) of the target")
    qk = q[:, keep]
    sq = np.sqrt(w[keep])

    # best co-isometry aligning sqrt(theta) against the reduced amplitudes
    n = sq[:, None] * (qk.conj().T @ psi)  # rank x d_b
    u0, _, vh0 = np.linalg.svd(n)
    x = u0 @ np.eye(rank, d_b) @ vh0
    t = (qk * sq) @ x  # d_a x d_b with t t^dag = theta_a

    vec = t.reshape(-1)
    vec = vec / np.linalg.norm(vec)
    partner = DensityMatrix.pure(vec, ordered.layout, tolerance)
    return permute_registers(partner, lay.labels)


def cq_extension(
    rho_ab: DensityMatrix, sigma_a: DensityMatrix, classical_label: str
) -> DensityMatrix:
    """Extend ``sigma_a`` over a classical register without losing fidelity.

    ``rho_ab`` must be classical on ``classical_label``.  The construction
    purifies, aligns the purifications, dephases the classical register and
    folds any weight that landed outside the support of the classical
    marginal back onto its heaviest symbol, so the output keeps
    ``sigma_a`` as its marginal exactly while its fidelity with ``rho_ab``
    is at least the fidelity of the marginals.
    """
    lay = rho_ab.layout
    b = classical_label
    if b not in lay.labels:
        raise LayoutError(f"unknown register {b!r}")
    if list(sigma_a.layout.labels) != [lb for lb in lay.labels if lb != b]:
        raise LayoutError("sigma must live on the non-classical registers, in order")
    if not is_classical_on(rho_ab, b):
        raise StateValidationError(f"state is not classical on {b!r} within tolerance")

    anc = "_purifier"
    while anc in lay.labels:
        anc += "_"
    psi = purify(rho_ab, anc)
    partner = uhlmann_partner(psi, sigma_a)
    ext = partial_trace(partner, [anc])
    ext = pinch(ext, b)

    # fold mass outside supp(rho_B) back in, keeping the A marginal intact
    rho_b = partial_trace(rho_ab, [lb for lb in lay.labels if lb != b])
    p = np.real(np.diag(rho_b.matrix)).copy()
    d_b = lay.dim_of(b)
    supp = p > SUPPORT_RTOL * max(p.max(), 1e-300)
    if not np.all(supp):
        ordered = permute_registers(ext, list(sigma_a.layout.labels) + [b])
        d_a = sigma_a.layout.dim
        tens = ordered.matrix.reshape(d_a, d_b, d_a, d_b)
        blocks = np.ascontiguousarray(np.einsum("ajbj->jab", tens))
        target = int(np.argmax(p))
        for j in range(d_b):
            if not supp[j]:
                blocks[target] += blocks[j]
                blocks[j] = 0.0
        out = np.zeros((d_a, d_b, d_a, d_b), dtype=np.complex128)
        for j in range(d_b):
            out[:, j, :, j] = blocks[j]
        ext = _unchecked(
            ordered.layout, out.reshape(d_a * d_b, d_a * d_b), ext.tolerance
        )
        ext = permute_registers(ext, lay.labels)
    return DensityMatrix(ext.layout, ext.matrix, max(ext.tolerance, 1e-9))


# ---------------------------------------------------------------------------
# unitaries
# ---------------------------------------------------------------------------


class UnitaryOp:
    """Unitary on a register layout.

    Permutation-backed instances (controlled swaps, register permutations)
    store the basis permutation and materialize the dense matrix lazily, so
    large protocol unitaries stay cheap to build and apply.
    """

    __slots__ = ("layout", "permutation", "_matrix")

    def __init__(
        self,
        lay: RegisterLayout,
        matrix: np.ndarray | None = None,
        permutation: np.ndarray | None = None,
        tol: float = 1e-12,
    ):
        if matrix is None and permutation is None:
            raise ValueError("need a matrix or a basis permutation")
        self.layout = lay
        if permutation is not None:
            perm = np.asarray(permutation, dtype=np.intp)
            if perm.shape != (lay.dim,) or sorted(perm.tolist()) != list(range(lay.dim)):
                raise StateValidationError("not a permutation of the basis indices")
            self.permutation = perm
        else:
            self.permutation = None
        if matrix is not None:
            m = _as_matrix(matrix)
            if m.shape[0] != lay.dim:
                raise LayoutError("matrix dimension does not match layout")
            err = np.abs(m @ m.conj().T - np.eye(lay.dim)).max()
            if err > tol:
                raise StateValidationError(f"not unitary: |U U^dag - I| = {err}")
            m.setflags(write=False)
            self._matrix = m
        else:
            self._matrix = None

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            d = self.layout.dim
            m = np.zeros((d, d), dtype=np.complex128)
            m[self.permutation, np.arange(d)] = 1.0
            m.setflags(write=False)
            self._matrix = m
        return self._matrix

    def apply(self, state: DensityMatrix) -> DensityMatrix:
        """``U rho U^dag`` on a state over the same layout."""
        if state.layout != self.layout:
            raise LayoutError("state layout does not match unitary layout")
        if self.permutation is not None:
            inv = np.argsort(self.permutation)
            out = state.matrix[np.ix_(inv, inv)]
        else:
            u = self.matrix
            out = u @ state.matrix @ u.conj().T
        return _unchecked(state.layout, out, state.tolerance)

    def compose(self, other: "UnitaryOp") -> "UnitaryOp":
        """The unitary 'self after other'."""
        if self.layout != other.layout:
            raise LayoutError("layouts differ")
        if self.permutation is not None and other.permutation is not None:
            return UnitaryOp(self.layout, permutation=self.permutation[other.permutation])
        return UnitaryOp(self.layout, self.matrix @ other.matrix)

    def dagger(self) -> "UnitaryOp":
        if self.permutation is not None:
            return UnitaryOp(self.layout, permutation=np.argsort(self.permutation))
        return UnitaryOp(self.layout, self.matrix.conj().T)


def register_permutation(lay: RegisterLayout, label_order: Sequence[str]) -> UnitaryOp:
    """Unitary that moves the content of register ``label_order[i]`` into slot ``i``.

    The dimension profile must be invariant under the reordering.
    """
    new_lay = lay.reordered(label_order)
    if new_lay.dims != lay.dims:
        raise LayoutError("register permutation must preserve the dimension profile")
    dims = lay.dims
    perm_axes = [lay.position(lb) for lb in label_order]
    src = np.arange(lay.dim).reshape(dims)
    # moved[k] = source basis index whose content lands on basis state k
    moved = src.transpose(perm_axes).reshape(-1)
    return UnitaryOp(lay, permutation=_invert(moved))


def _invert(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    return inv


def controlled_swap(
    lay: RegisterLayout,
    control_label: str,
    target_a: str,
    target_b: str | Sequence[str],
) -> UnitaryOp:
    """Swap ``target_a`` with the block of ``target_b`` selected by the control.

    ``target_b`` is either a single register whose dimension is
    ``dim(target_a) ** dim(control)`` (its row-major blocks are the swap
    slots) or an explicit list of registers of the control's length, each
    matching ``target_a`` in dimension.  The result is a basis permutation,
    block diagonal in the control's computational basis, and an involution.
    """
    names = [control_label, target_a] + (
        [target_b] if isinstance(target_b, str) else list(target_b)
    )
    if len(set(names)) != len(names):
        raise LayoutError("control and swap registers must be distinct")
    d = lay.dim_of(target_a)
    n_ctrl = lay.dim_of(control_label)
    dims = lay.dims
    idx = np.arange(lay.dim)
    ctrl = _digit_array(dims, lay.position(control_label))
    a_dig = _digit_array(dims, lay.position(target_a))

    if isinstance(target_b, str):
        if lay.dim_of(target_b) != d**n_ctrl:
            raise LayoutError(
                f"register {target_b!r} has dimension {lay.dim_of(target_b)}, "
                f"expected {d}^{n_ctrl}"
            )
        b_dig = _digit_array(dims, lay.position(target_b))
        # block j of target_b is the j-th base-d digit, most significant first
        shift = d ** (n_ctrl - 1 - ctrl)
        block = (b_dig // shift) % d
        new_b = b_dig + (a_dig - block) * shift
        delta_b = (new_b - b_dig) * _stride(dims, lay.position(target_b))
        delta_a = (block - a_dig) * _stride(dims, lay.position(target_a))
        perm = idx + delta_a + delta_b
    else:
        blocks = list(target_b)
        if len(blocks) != n_ctrl:
            raise LayoutError(
                f"{len(blocks)} block registers for a control of dimension {n_ctrl}"
            )
        for lb in blocks:
            if lay.dim_of(lb) != d:
                raise LayoutError(
                    f"register {lb!r} has dimension {lay.dim_of(lb)}, expected {d}"
                )
        perm = idx.copy()
        for j, lb in enumerate(blocks):
            sel = ctrl == j
            b_dig = _digit_array(dims, lay.position(lb))
            delta = (a_dig - b_dig) * _stride(dims, lay.position(lb)) + (
                b_dig - a_dig
            ) * _stride(dims, lay.position(target_a))
            perm[sel] = idx[sel] + delta[sel]
    # digit swaps are involutions, so the target map is its own inverse
    return UnitaryOp(lay, permutation=np.asarray(perm, dtype=np.intp))


def _stride(dims: Sequence[int], position: int) -> int:
    return int(np.prod(dims[position + 1:])) if position + 1 < len(dims) else 1


def swap_registers(lay: RegisterLayout, label_a: str, label_b: str) -> UnitaryOp:
    """Plain swap of two equal-dimension registers."""
    d = lay.dim_of(label_a)
    if lay.dim_of(label_b) != d:
        raise LayoutError("swapped registers must have equal dimension")
    dims = lay.dims
    idx = np.arange(lay.dim)
    a_dig = _digit_array(dims, lay.position(label_a))
    b_dig = _digit_array(dims, lay.position(label_b))
    perm = (
        idx
        + (b_dig - a_dig) * _stride(dims, lay.position(label_a))
        + (a_dig - b_dig) * _stride(dims, lay.position(label_b))
    )
    return UnitaryOp(lay, permutation=np.asarray(perm, dtype=np.intp))


# ---------------------------------------------------------------------------
# operator dominance
# ---------------------------------------------------------------------------


def dominance_check(
    theta: DensityMatrix, bound: DensityMatrix | np.ndarray, factor: float
) -> bool:
    """True iff ``factor * bound - theta`` is PSD within tolerance."""
    if isinstance(bound, DensityMatrix):
        if theta.layout != bound.layout:
            raise LayoutError("layouts differ")
        bound_m = bound.matrix
        tol = max(theta.tolerance, bound.tolerance)
    else:
        bound_m = np.asarray(bound, dtype=np.complex128)
        if bound_m.shape != theta.matrix.shape:
            raise LayoutError("bound has wrong shape")
        tol = theta.tolerance
    gap = factor * bound_m - theta.matrix
    return float(np.linalg.eigvalsh(gap)[0]) >= -max(tol, 1e-10)


# ---------------------------------------------------------------------------
# random sampling (seeded; used by tests and the experiment harness)
# ---------------------------------------------------------------------------


def random_density_matrix(
    rng: np.random.Generator,
    lay: RegisterLayout,
    rank: int | None = None,
    tolerance: float = DEFAULT_TOL,
) -> DensityMatrix:
    """Hilbert-Schmidt style sample: normalized ``G G^dag`` with Ginibre G."""
    d = lay.dim
    k = d if rank is None else int(rank)
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    m = g @ g.conj().T
    m /= m.trace().real
    return _unchecked(lay, m, tolerance)


def random_pure_state(
    rng: np.random.Generator, lay: RegisterLayout, tolerance: float = DEFAULT_TOL
) -> DensityMatrix:
    v = rng.normal(size=lay.dim) + 1j * rng.normal(size=lay.dim)
    v /= np.linalg.norm(v)
    return DensityMatrix.pure(v, lay, tolerance)


def haar_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases.conj()


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------


def state_to_text(state: DensityMatrix) -> str:
    """Serialize to the toolkit's text format.

    Line 1 is the layout header: space-separated ``label:dim`` tokens.
    Each following line is one matrix row, entries as ``re,im`` pairs
    separated by single spaces.  Floats are printed with ``repr`` so the
    round trip is bit-faithful for 64-bit values.
    """
    return matrix_to_text(state.matrix, state.layout)


def matrix_to_text(matrix: np.ndarray, lay: RegisterLayout) -> str:
    m = np.asarray(matrix, dtype=np.complex128)
    header = " ".join(f"{lb}:{d}" for lb, d in lay.factors)
    rows = [
        " ".join(f"{repr(float(x.real))},{repr(float(x.imag))}" for x in row)
        for row in m
    ]
    return "\n".join([header] + rows) + "\n"


def _parse_header(line: str) -> RegisterLayout:
    factors = []
    for token in line.split():
        if ":" not in token:
            raise ValueError(f"bad layout token {token!r}, expected label:dim")
        lb, _, d = token.rpartition(":")
        factors.append((lb, int(d)))
    return RegisterLayout(tuple(factors))


def matrix_from_text(text: str) -> tuple[np.ndarray, RegisterLayout]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty matrix text")
    lay = _parse_header(lines[0])
    d = lay.dim
    if len(lines) - 1 != d:
        raise ValueError(f"expected {d} matrix rows, found {len(lines) - 1}")
    out = np.empty((d, d), dtype=np.complex128)
    for i, ln in enumerate(lines[1:]):
        entries = ln.split()
        if len(entries) != d:
            raise ValueError(f"row {i} has {len(entries)} entries, expected {d}")
        for j, ent in enumerate(entries):
            re_s, _, im_s = ent.partition(",")
            out[i, j] = complex(float(re_s), float(im_s))
    return out, lay


def state_from_text(text: str, tolerance: float = DEFAULT_TOL) -> DensityMatrix:
    m, lay = matrix_from_text(text)
    return DensityMatrix(lay, m, tolerance)
