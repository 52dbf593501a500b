"""Model assembly: architectures, parameter initialization, right-hand-side
dispatch, and the serialized model-file format.

Every model family (grey-box chain, linear time-invariant, neural ODE)
shares the same latent state (passive joint angles and rates of a
pseudo-rigid chain) and the same forward-kinematics decoder; they differ
only in the continuous-time dynamics."""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass
from typing import Any, Optional

import jax
import jax.numpy as jnp
import numpy as np

from .dynamics import (
    GRAVITY,
    DynamicsParams,
    ModelParams,
    _ode_rhs,
    init_dynamics_params,
)
from .errors import DomainError, ParseError
from .integrators import IntegratorConfig, make_rollout, make_step
from .kinematics import KinematicsParams, _decode
from .torques import (
    AffineTorque,
    CubicTorque,
    LinearTorque,
    NeuralTorque,
    init_torque_params,
    variant_name,
)

Array = jnp.ndarray

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelArch:
    """Static architecture description (hashable; safe to close over in jit)."""

    family: str = "prba"        # "prba" | "lti" | "node"
    n_prb: int = 3
    torque: str = "neural"      # prba families: linear | affine | neural | cubic
    hidden: int = 8             # neural-torque hidden width
    canonical_mlp: bool = False
    node_width: int = 64
    freeze_kin: bool = False
    radius: float = 0.03        # [m], cylinder used for inertial initialization
    density: float = 200.0      # [kg/m^3]
    gravity: float = GRAVITY

    @property
    def n_ej(self) -> int:
        return self.n_prb - 1

    @property
    def n_q(self) -> int:
        return 2 * self.n_ej

    @property
    def n_x(self) -> int:
        return 4 * self.n_ej

    def validate(self) -> "ModelArch":
        if self.family not in ("prba", "lti", "node"):
            raise DomainError(f"unknown model family {self.family!r}")
        if self.n_prb < 2:
            raise DomainError("n_prb must be at least 2")
        return self


def init_params(arch: ModelArch, lengths, seed: int = 0):
    """Fresh parameters for an architecture, segments starting at ``lengths``."""
    from . import baselines

    arch.validate()
    lengths = np.asarray(lengths, dtype=float)
    if lengths.shape[0] != arch.n_prb:
        raise DomainError(f"expected {arch.n_prb} segment lengths")
    kin = KinematicsParams.from_lengths(lengths)
    if arch.family == "prba":
        return ModelParams(
            kin=kin,
            dyn=init_dynamics_params(lengths, arch.radius, arch.density),
            torque=init_torque_params(
                arch.torque, arch.n_ej, seed=seed, hidden=arch.hidden,
                canonical_mlp=arch.canonical_mlp,
            ),
        )
    if arch.family == "lti":
        return baselines.init_lti_params(arch, kin)
    return baselines.init_node_params(arch, kin, seed=seed)


def arch_of(params, **overrides) -> ModelArch:
    """Reconstruct the static architecture implied by a parameter pytree."""
    from . import baselines

    if isinstance(params, ModelParams):
        fields = dict(
            family="prba",
            n_prb=params.kin.n_prb,
            torque=variant_name(params.torque),
        )
        if isinstance(params.torque, NeuralTorque):
            fields["hidden"] = params.torque.w1.shape[1]
            fields["canonical_mlp"] = params.torque.b1 is not None
    elif isinstance(params, baselines.LtiParams):
        fields = dict(family="lti", n_prb=params.kin.n_prb)
    elif isinstance(params, baselines.NodeParams):
        fields = dict(
            family="node", n_prb=params.kin.n_prb,
            node_width=params.layers[0][0].shape[0],
        )
    else:
        raise DomainError(f"not a model parameter pytree: {type(params)!r}")
    fields.update(overrides)
    return ModelArch(**fields)


@functools.lru_cache(maxsize=None)
def rhs_fn(arch: ModelArch):
    """Continuous-time dynamics ``f(x, u, params) -> xdot`` for a family."""
    from . import baselines

    if arch.family == "prba":
        gravity = arch.gravity
        return functools.partial(_rhs_prba, gravity)
    if arch.family == "lti":
        return baselines._lti_rhs
    return baselines._node_rhs


def _rhs_prba(gravity, x, u, params):
    return _ode_rhs(x, u, params, gravity=gravity)


def decode_fn(arch: ModelArch):
    """Output decoder ``h(x, u, params) -> y``; identical code path for all
    families (forward kinematics of the chain with the model's lengths)."""
    del arch
    return _shared_decode


def _shared_decode(x, u, params):
    return _decode(x, u, params.kin.lengths)


@dataclass
class Model:
    """A trained (or hand-built) model: architecture, parameters, integrator."""

    arch: ModelArch
    params: Any
    integrator: IntegratorConfig = IntegratorConfig()

    def rhs(self, x, u) -> Array:
        return rhs_fn(self.arch)(jnp.asarray(x, jnp.float64),
                                  jnp.asarray(u, jnp.float64), self.params)

    def decode(self, x, u) -> Array:
        return _shared_decode(jnp.asarray(x, jnp.float64),
                              jnp.asarray(u, jnp.float64), self.params)

    def step(self, x, u):
        step_fn = make_step(rhs_fn(self.arch), self.integrator, ad=None)
        return step_fn(jnp.asarray(x, jnp.float64), jnp.asarray(u, jnp.float64),
                       self.params)

    def simulate(self, x0, inputs):
        """States over a rollout; raises on integration failure."""
        from .integrators import rollout

        return rollout(rhs_fn(self.arch), x0, inputs, self.integrator,
                       params=self.params)

    def predict_outputs(self, x0, inputs) -> Array:
        """Decoded outputs y_1..y_N for a rollout driven by inputs u_0..u_N.

        ``inputs`` has N+1 rows; the state is stepped with u_0..u_{N-1} and
        each successor state decoded with its own input row.
        """
        inputs = jnp.asarray(inputs, jnp.float64)
        states = self.simulate(x0, inputs[:-1])
        dec = jax.vmap(lambda x, u: _shared_decode(x, u, self.params))
        return dec(states[1:], inputs[1:])


def _arch_to_dict(arch: ModelArch) -> dict:
    return dataclasses.asdict(arch)


def _integrator_to_dict(cfg: IntegratorConfig) -> dict:
    return cfg._asdict()


def save_model(path, model: Model, x0: Optional[np.ndarray] = None,
               config_echo: Optional[dict] = None) -> None:
    """Serialize a model to a versioned JSON file.

    The parameter pytree is stored as a flat vector plus a named layout so
    files remain inspectable and diffable.
    """
    from .gradients import FlatParams

    flat = FlatParams.from_pytree(model.params)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "arch": _arch_to_dict(model.arch),
        "integrator": _integrator_to_dict(model.integrator),
        "layout": {k: [s.start, s.stop] for k, s in flat.layout.items()},
        "params": np.asarray(flat.vector).tolist(),
        "x0": None if x0 is None else np.asarray(x0).tolist(),
        "config_echo": config_echo or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_model(path) -> tuple[Model, Optional[np.ndarray], dict]:
    """Inverse of :func:`save_model`; returns (model, x0, config_echo)."""
    from .gradients import FlatParams

    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"model file {path}: {exc}", line=exc.lineno,
                             column=exc.colno) from exc
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported model schema version {version!r}")
    arch = ModelArch(**payload["arch"])
    integrator = IntegratorConfig(**payload["integrator"])
    template = init_params(arch, lengths=np.full(arch.n_prb, 1.0))
    flat = FlatParams.from_pytree(template)
    vector = np.asarray(payload["params"], dtype=float)
    if vector.shape != flat.vector.shape:
        raise ParseError(
            f"model file {path}: expected {flat.vector.shape[0]} parameters, "
            f"got {vector.shape[0]}"
        )
    params = flat.unravel(jnp.asarray(vector))
    x0 = payload.get("x0")
    model = Model(arch=arch, params=params, integrator=integrator)
    return model, (None if x0 is None else np.asarray(x0)), payload.get("config_echo", {})
