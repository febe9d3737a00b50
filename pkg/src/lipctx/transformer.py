"""Deep Lipschitz transformer over (measure, query) pairs.

A scalar model is

    evaluate(mu, x) = readout . ( pi_2 of  B_L o ... o B_1 (Q# mu, Q(x)) )

where Q is an affine lifting applied to the query and pushed forward
over the atoms, and every block B_l applies one attention layer followed
by one MLP layer to query and atoms alike. Crucially the measure is
propagated synchronously: within a block, every atom (and the query)
attends over the *same pre-update* measure, so the update is the
in-context map applied atomwise.

Domain tracking
---------------
The attention step bound depends on the layer's input set, which changes
layer to layer. Each model therefore carries one declared ball per
attention layer; ``propagate_domains`` pushes a sound ball through the
stack (lifting: center through the map, radius times the certified
lifting norm; attention: radius grows by eta * sup_ay since the update
is a convex combination of -eta A y terms; MLP: center through the map,
radius preserved by 1-Lipschitzness) and flags any declared domain that
fails to contain its propagated ball. ``clamp_model`` is the enforcement
path: it rewrites every declared domain to the propagated ball and
re-projects every step size, and is exactly idempotent.

Determinism
-----------
Atom-batch computations run in the measure's canonical atom order and
are scattered back to storage order, so evaluation is invariant under
permutations of the stored atoms bit for bit, and repeated runs are
bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError
from .layers import (
    AttentionLayer,
    MlpLayer,
    _require_inside,
    attn_apply_batch,
    mlp_forward,
    mlp_forward_batch,
    spectral_norm,
)
from .measure import BALL_ABS_TOL, DomainBall, EmpiricalMeasure


@dataclass(frozen=True, eq=False)
class Lifting:
    """Affine embedding Q(x) = A x + b from R^d into R^h."""

    A: np.ndarray  # (h, d)
    b: np.ndarray  # (h,)
    cert_spec_norm: float = field(default=None)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=np.float64)).copy()
        bias = np.asarray(self.b, dtype=np.float64).reshape(-1).copy()
        if bias.shape[0] != a.shape[0]:
            raise DimensionMismatchError(
                f"lifting bias of size {bias.shape[0]} for {a.shape[0]} rows"
            )
        a.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", bias)
        object.__setattr__(self, "cert_spec_norm", spectral_norm(a))

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]

    def apply_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.atleast_2d(xs) @ self.A.T + self.b


@dataclass(frozen=True, eq=False)
class ScalarModel:
    """Lifting, alternating attention/MLP blocks, and a scalar readout."""

    lifting: Lifting
    blocks: tuple  # of (AttentionLayer, MlpLayer)
    readout: np.ndarray  # (h,)
    input_domain: DomainBall
    lipschitz_c: float

    def __post_init__(self):
        blocks = tuple(self.blocks)
        h = self.lifting.out_dim
        if self.lifting.in_dim != self.input_domain.dim:
            raise DimensionMismatchError("lifting input dim vs input domain dim")
        for i, (attn, mlp) in enumerate(blocks):
            if attn.dim != h or mlp.dim != h:
                raise DimensionMismatchError(
                    f"block {i} width {attn.dim}/{mlp.dim}, expected {h}"
                )
        v = np.asarray(self.readout, dtype=np.float64).reshape(-1).copy()
        if v.shape[0] != h:
            raise DimensionMismatchError(
                f"readout of size {v.shape[0]} for width {h}"
            )
        if not self.lipschitz_c > 0:
            raise DimensionMismatchError("lipschitz_c must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "readout", v)
        object.__setattr__(self, "lipschitz_c", float(self.lipschitz_c))

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.lifting.out_dim

    @property
    def in_dim(self) -> int:
        return self.lifting.in_dim

    def __repr__(self) -> str:
        return (
            f"ScalarModel(d={self.in_dim}, h={self.width}, L={self.depth}, "
            f"C={self.lipschitz_c:.6g})"
        )


@dataclass(frozen=True)
class DomainChain:
    """Propagated balls (2L+1 of them) plus per-block containment flags."""

    domains: tuple
    valid: tuple

    @property
    def all_valid(self) -> bool:
        return all(self.valid)


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------
def _check_input(model: ScalarModel, mu: EmpiricalMeasure, queries: np.ndarray) -> None:
    dom = model.input_domain
    if mu.dim != dom.dim:
        raise DimensionMismatchError(
            f"measure of dim {mu.dim} for model of input dim {dom.dim}"
        )
    _require_inside(dom, mu.points, "input atom")
    _require_inside(dom, queries, "input query")


def _map_atoms(mu: EmpiricalMeasure, fn) -> EmpiricalMeasure:
    """Apply a batch map to the atoms in canonical order, keep storage order."""
    pts, _, inv = mu.canonical()
    return EmpiricalMeasure(fn(pts)[inv], mu.weights)


def _forward(
    model: ScalarModel, mu: EmpiricalMeasure, queries: np.ndarray
) -> tuple[EmpiricalMeasure, np.ndarray]:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    _check_input(model, mu, queries)
    meas = _map_atoms(mu, model.lifting.apply_batch)
    qs = model.lifting.apply_batch(queries)
    for stage, (attn, mlp) in enumerate(model.blocks):
        if attn.is_identity:
            # Exact identity; membership stays fail-closed.
            _require_inside(attn.domain, meas.points, "context atom", stage)
            _require_inside(attn.domain, qs, "query", stage)
        else:
            # Every atom attends over the same pre-update measure.
            pre = meas
            meas = _map_atoms(
                pre, lambda pts: attn_apply_batch(attn, pre, pts, stage=stage)
            )
            qs = attn_apply_batch(attn, pre, qs, stage=stage)
        if mlp.tau != 0.0:
            meas = _map_atoms(meas, lambda pts: mlp_forward_batch(mlp, pts))
            qs = mlp_forward_batch(mlp, qs)
    return meas, qs


def lift(
    model: ScalarModel, mu: EmpiricalMeasure, x: np.ndarray
) -> tuple[EmpiricalMeasure, np.ndarray]:
    """Apply the lifting to query and atoms alike (context-free map)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    _check_input(model, mu, x[None, :])
    return _map_atoms(mu, model.lifting.apply_batch), model.lifting.apply_batch(
        x[None, :]
    )[0]


def forward_tokens(
    model: ScalarModel, mu: EmpiricalMeasure, x: np.ndarray
) -> tuple[EmpiricalMeasure, np.ndarray]:
    """Propagate (measure, query) through the full stack."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    meas, qs = _forward(model, mu, x[None, :])
    return meas, qs[0]


def evaluate(model: ScalarModel, mu: EmpiricalMeasure, x: np.ndarray) -> float:
    """Scalar output: readout applied to the propagated query."""
    _, q = forward_tokens(model, mu, x)
    return float(model.readout @ q)


def evaluate_batch(
    model: ScalarModel, mu: EmpiricalMeasure, xs: np.ndarray
) -> np.ndarray:
    """Evaluate many queries against one measure in a single sweep."""
    _, qs = _forward(model, mu, xs)
    return qs @ model.readout


# ---------------------------------------------------------------------------
# Domain propagation and clamping
# ---------------------------------------------------------------------------
def _lifted_ball(model: ScalarModel) -> DomainBall:
    dom = model.input_domain
    center = model.lifting.apply_batch(dom.center[None, :])[0]
    return DomainBall(center, dom.radius * model.lifting.cert_spec_norm)


def _contains_with_tol(declared: DomainBall, propagated: DomainBall) -> bool:
    tol = BALL_ABS_TOL + 1e-12 * max(declared.radius, 1.0)
    return declared.contains_ball(propagated, tol=tol)


def propagate_domains(model: ScalarModel) -> DomainChain:
    """Push a sound ball through the stack; flag declared-domain gaps.

    The MLP image ball assumes the layer is 1-Lipschitz (tau feasible);
    infeasible models are exactly what the flags are for, and
    ``clamp_model`` is the enforcement path.
    """
    current = _lifted_ball(model)
    domains = [current]
    valid = []
    for attn, mlp in model.blocks:
        valid.append(_contains_with_tol(attn.domain, current))
        current = DomainBall(
            current.center, current.radius + attn.eta * attn.sup_ay
        )
        domains.append(current)
        current = DomainBall(mlp_forward(mlp, current.center), current.radius)
        domains.append(current)
    return DomainChain(tuple(domains), tuple(valid))


def clamp_model(model: ScalarModel) -> ScalarModel:
    """Rewrite declared domains to propagated balls and re-project steps.

    Exactly idempotent: a second application reproduces the same layer
    parameters and domains bit for bit.
    """
    current = _lifted_ball(model)
    blocks = []
    for attn, mlp in model.blocks:
        new_attn = AttentionLayer(attn.A, attn.eta, current)
        current = DomainBall(
            current.center, current.radius + new_attn.eta * new_attn.sup_ay
        )
        new_mlp = MlpLayer(mlp.W, mlp.b, mlp.tau)
        current = DomainBall(mlp_forward(new_mlp, current.center), current.radius)
        blocks.append((new_attn, new_mlp))
    return ScalarModel(
        model.lifting,
        tuple(blocks),
        model.readout,
        model.input_domain,
        model.lipschitz_c,
    )


def models_equal(a: ScalarModel, b: ScalarModel) -> bool:
    """Bitwise equality of parameters, domains, and certificates."""
    if a.depth != b.depth:
        return False
    if not (
        np.array_equal(a.lifting.A, b.lifting.A)
        and np.array_equal(a.lifting.b, b.lifting.b)
        and np.array_equal(a.readout, b.readout)
        and np.array_equal(a.input_domain.center, b.input_domain.center)
        and a.input_domain.radius == b.input_domain.radius
        and a.lipschitz_c == b.lipschitz_c
    ):
        return False
    for (attn_a, mlp_a), (attn_b, mlp_b) in zip(a.blocks, b.blocks):
        if not (
            np.array_equal(attn_a.A, attn_b.A)
            and attn_a.eta == attn_b.eta
            and attn_a.sup_ay == attn_b.sup_ay
            and np.array_equal(attn_a.domain.center, attn_b.domain.center)
            and attn_a.domain.radius == attn_b.domain.radius
            and np.array_equal(mlp_a.W, mlp_b.W)
            and np.array_equal(mlp_a.b, mlp_b.b)
            and mlp_a.tau == mlp_b.tau
        ):
            return False
    return True


def is_clamped(model: ScalarModel) -> bool:
    """Whether ``clamp_model`` is a no-op on this model."""
    return models_equal(model, clamp_model(model))
