"""Architecture types, placement constraints, and analytic cost models.

A large transformer is split into one sub-model per device.  Each sub-model
keeps a prefix of the base layers, a slice of the embedding width, and
per-layer subsets of attention heads and MLP neurons.  The cost models count
FLOPs (one multiply-accumulate = 2 FLOPs) and bytes (parameters plus a
working activation buffer); the test suite cross-checks both against a
shape-by-shape enumeration of the underlying matmuls and tensors.

Placement constraints on a policy {C_n} for a fleet of N devices:

  C1  l_n <= L                       layer prefix fits the base model
  C2  sum_n d_n <= d                 embedding slices partition the width
  C3  sum_n h_n[k] <= h   for all k  per-layer head budget
  C4  sum_n D_n[k] <= D   for all k  per-layer MLP budget
  C5  flops(C_n) <= cap_n            per-device compute ceiling
  C6  memory(C_n) <= mem_n           per-device memory ceiling

C3/C4 sums run over the sub-models that still have a layer k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleFleet, InfeasiblePolicy, MismatchedFleet

_SAMPLER_MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class TransformerConfig:
    """Shape of the base transformer being split."""

    layers: int
    embed_dim: int
    heads: int
    mlp_dim: int
    seq_len: int
    num_classes: int
    bytes_per_param: int = 4

    def __post_init__(self):
        for name in ("layers", "embed_dim", "heads", "mlp_dim", "seq_len",
                     "num_classes", "bytes_per_param"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


@dataclass(frozen=True)
class SubModelConfig:
    """One device's share of the base model.

    ``heads_per_layer`` and ``mlp_dims`` have exactly ``layers`` entries.
    """

    layers: int
    embed_dim: int
    heads_per_layer: tuple[int, ...]
    mlp_dims: tuple[int, ...]

    def __post_init__(self):
        if self.layers < 1 or self.embed_dim < 1:
            raise ValueError("layers and embed_dim must be >= 1")
        if len(self.heads_per_layer) != self.layers:
            raise ValueError("heads_per_layer length must equal layers")
        if len(self.mlp_dims) != self.layers:
            raise ValueError("mlp_dims length must equal layers")
        if any(h < 1 for h in self.heads_per_layer):
            raise ValueError("head counts must be >= 1")
        if any(m < 1 for m in self.mlp_dims):
            raise ValueError("MLP widths must be >= 1")


@dataclass(frozen=True)
class DecompositionPolicy:
    """A full split: one sub-model per fleet device, in device order."""

    sub_models: tuple[SubModelConfig, ...]

    def __post_init__(self):
        if not self.sub_models:
            raise ValueError("policy must contain at least one sub-model")

    def __len__(self) -> int:
        return len(self.sub_models)


@dataclass(frozen=True)
class DeviceSpec:
    """One edge device.

    Units: ``compute`` FLOPs/ms, ``memory`` bytes, ``flops_cap`` FLOPs per
    inference, ``bandwidth`` bits/ms, powers in mW.
    """

    name: str
    compute: float
    memory: float
    flops_cap: float
    bandwidth: float
    busy_power: float
    idle_power: float

    def __post_init__(self):
        for attr in ("compute", "memory", "flops_cap", "bandwidth",
                     "busy_power", "idle_power"):
            if getattr(self, attr) <= 0:
                raise ValueError(f"{attr} must be positive")


@dataclass(frozen=True)
class DeviceFleet:
    devices: tuple[DeviceSpec, ...]
    central_index: int = 0

    def __post_init__(self):
        if not self.devices:
            raise ValueError("fleet must contain at least one device")
        if not 0 <= self.central_index < len(self.devices):
            raise ValueError("central_index out of range")
        names = [d.name for d in self.devices]
        if len(set(names)) != len(names):
            raise ValueError("device names must be unique")

    def __len__(self) -> int:
        return len(self.devices)

    @property
    def central(self) -> DeviceSpec:
        return self.devices[self.central_index]


@dataclass(frozen=True)
class ConstraintViolation:
    constraint: str  # "C1".."C6"
    device: int      # -1 for fleet-wide sums (C2/C3/C4)
    measured: float
    bound: float


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[ConstraintViolation, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def satisfied(self) -> bool:
        return not self.violations


def flops(cfg: SubModelConfig, base: TransformerConfig) -> int:
    """Forward-pass FLOPs of one sub-model at the base sequence length.

    Per layer k, with width e = d_n, attention width a = h_n[k]*head_dim,
    MLP width D_k, and S tokens:

      QKV projections     6*S*e*a
      output projection   2*S*a*e
      attention scores    4*S^2*a        (QK^T plus the value mix)
      MLP                 4*S*e*D_k
    """
    s = base.seq_len
    dh = base.head_dim
    e = cfg.embed_dim
    total = 0
    for hk, dk in zip(cfg.heads_per_layer, cfg.mlp_dims):
        a = hk * dh
        total += 6 * s * e * a + 2 * s * a * e + 4 * s * s * a + 4 * s * e * dk
    return total


def memory(cfg: SubModelConfig, base: TransformerConfig) -> int:
    """Bytes needed to hold one sub-model plus its working activations.

    Parameters per layer: QKV and output projections 4*e*a, MLP 2*e*D_k,
    two layer norms 4*e.  Shared: token/position table e*(S+1) and the
    e*num_classes head.  The activation buffer is double-buffered at the
    widest intermediate: 4*S*max(e, max_k D_k) values.
    """
    e = cfg.embed_dim
    dh = base.head_dim
    params = 0
    for hk, dk in zip(cfg.heads_per_layer, cfg.mlp_dims):
        params += 4 * e * (hk * dh) + 2 * e * dk + 4 * e
    params += e * (base.seq_len + 1) + e * base.num_classes
    activations = 4 * base.seq_len * max(e, max(cfg.mlp_dims))
    return base.bytes_per_param * (params + activations)


def full_submodel(base: TransformerConfig) -> SubModelConfig:
    """The undivided base model expressed as a single sub-model."""
    return SubModelConfig(
        layers=base.layers,
        embed_dim=base.embed_dim,
        heads_per_layer=(base.heads,) * base.layers,
        mlp_dims=(base.mlp_dim,) * base.layers,
    )


def minimal_submodel(base: TransformerConfig) -> SubModelConfig:
    """Smallest admissible sub-model: one layer, one head-width slice."""
    return SubModelConfig(1, base.head_dim, (1,), (1,))


def validate_policy(policy: DecompositionPolicy, base: TransformerConfig,
                    fleet: DeviceFleet) -> ConstraintReport:
    """Check C1-C6; returns every violation, not just the first.

    Shape oddities that are legal but unusual (an embedding slice narrower
    than a layer's total attention width) are reported as warnings.
    """
    if len(policy) != len(fleet):
        raise MismatchedFleet(
            f"policy has {len(policy)} sub-models but fleet has {len(fleet)} devices")
    violations: list[ConstraintViolation] = []
    warnings: list[str] = []
    dh = base.head_dim

    for i, cfg in enumerate(policy.sub_models):
        if cfg.layers > base.layers:
            violations.append(
                ConstraintViolation("C1", i, cfg.layers, base.layers))
        widest = max(h * dh for h in cfg.heads_per_layer)
        if cfg.embed_dim < widest:
            warnings.append(
                f"sub-model {i}: embedding width {cfg.embed_dim} is narrower "
                f"than its widest attention block ({widest})")

    total_embed = sum(c.embed_dim for c in policy.sub_models)
    if total_embed > base.embed_dim:
        violations.append(
            ConstraintViolation("C2", -1, total_embed, base.embed_dim))

    deepest = max(c.layers for c in policy.sub_models)
    for k in range(deepest):
        head_sum = sum(c.heads_per_layer[k] for c in policy.sub_models
                       if c.layers > k)
        if head_sum > base.heads:
            violations.append(
                ConstraintViolation("C3", -1, head_sum, base.heads))
        mlp_sum = sum(c.mlp_dims[k] for c in policy.sub_models if c.layers > k)
        if mlp_sum > base.mlp_dim:
            violations.append(
                ConstraintViolation("C4", -1, mlp_sum, base.mlp_dim))

    for i, (cfg, dev) in enumerate(zip(policy.sub_models, fleet.devices)):
        f = flops(cfg, base)
        if f > dev.flops_cap:
            violations.append(ConstraintViolation("C5", i, f, dev.flops_cap))
        m = memory(cfg, base)
        if m > dev.memory:
            violations.append(ConstraintViolation("C6", i, m, dev.memory))

    return ConstraintReport(tuple(violations), tuple(warnings))


def check_fleet_feasible(base: TransformerConfig, fleet: DeviceFleet) -> None:
    """Raise InfeasibleFleet unless the minimal policy fits everywhere."""
    n = len(fleet)
    tiny = minimal_submodel(base)
    if n * base.head_dim > base.embed_dim:
        raise InfeasibleFleet(
            f"{n} devices need {n * base.head_dim} embedding columns; "
            f"base has {base.embed_dim}")
    if n > base.heads or n > base.mlp_dim:
        raise InfeasibleFleet(
            f"{n} devices exceed the per-layer head or MLP budget")
    for dev in fleet.devices:
        f = flops(tiny, base)
        if f > dev.flops_cap:
            raise InfeasibleFleet(
                f"device {dev.name}: minimal sub-model needs {f} FLOPs, "
                f"cap is {dev.flops_cap:g}")
        m = memory(tiny, base)
        if m > dev.memory:
            raise InfeasibleFleet(
                f"device {dev.name}: minimal sub-model needs {m} bytes, "
                f"memory is {dev.memory:g}")


def _shrunk(cfg: SubModelConfig, base: TransformerConfig,
            factor: float) -> SubModelConfig:
    """Scale every width of ``cfg`` down by ``factor``, floors applied."""
    dh = base.head_dim
    new_d = max(dh, int(cfg.embed_dim * factor))
    new_h = tuple(max(1, int(h * factor)) for h in cfg.heads_per_layer)
    new_m = tuple(max(1, int(m * factor)) for m in cfg.mlp_dims)
    if (new_d, new_h, new_m) == (cfg.embed_dim, cfg.heads_per_layer, cfg.mlp_dims):
        # widths bottomed out; drop a layer instead
        if cfg.layers > 1:
            return SubModelConfig(cfg.layers - 1, new_d,
                                  new_h[:-1], new_m[:-1])
        return cfg
    return SubModelConfig(cfg.layers, new_d, new_h, new_m)


def repair_policy(policy: DecompositionPolicy, base: TransformerConfig,
                  fleet: DeviceFleet,
                  max_attempts: int = _SAMPLER_MAX_ATTEMPTS) -> DecompositionPolicy:
    """Shrink a policy until it satisfies C1-C6.

    Each step reduces the dimension named by the first remaining violation,
    so the walk is deterministic and terminates at the minimal policy in the
    worst case.
    """
    check_fleet_feasible(base, fleet)
    subs = list(policy.sub_models)
    dh = base.head_dim

    for i, cfg in enumerate(subs):
        if cfg.layers > base.layers:  # C1
            subs[i] = SubModelConfig(base.layers, cfg.embed_dim,
                                     cfg.heads_per_layer[:base.layers],
                                     cfg.mlp_dims[:base.layers])

    for _ in range(max_attempts):
        report = validate_policy(DecompositionPolicy(tuple(subs)), base, fleet)
        if report.satisfied:
            return DecompositionPolicy(tuple(subs))
        v = report.violations[0]
        if v.constraint == "C2":
            i = max(range(len(subs)), key=lambda j: subs[j].embed_dim)
            cut = int(v.measured - v.bound)
            new_d = max(dh, subs[i].embed_dim - max(1, cut))
            subs[i] = SubModelConfig(subs[i].layers, new_d,
                                     subs[i].heads_per_layer, subs[i].mlp_dims)
        elif v.constraint in ("C3", "C4"):
            attr = "heads_per_layer" if v.constraint == "C3" else "mlp_dims"
            deepest = max(c.layers for c in subs)
            for k in range(deepest):
                vals = [getattr(c, attr)[k] for c in subs if c.layers > k]
                bound = base.heads if v.constraint == "C3" else base.mlp_dim
                if sum(vals) <= bound:
                    continue
                i = max((j for j, c in enumerate(subs) if c.layers > k),
                        key=lambda j: getattr(subs[j], attr)[k])
                vec = list(getattr(subs[i], attr))
                vec[k] = max(1, vec[k] - max(1, sum(vals) - bound))
                kwargs = {attr: tuple(vec)}
                other = "mlp_dims" if attr == "heads_per_layer" else "heads_per_layer"
                kwargs[other] = getattr(subs[i], other)
                subs[i] = SubModelConfig(subs[i].layers, subs[i].embed_dim,
                                         **kwargs)
                break
        else:  # C5 or C6 on one device
            i = v.device
            ratio = v.bound / v.measured
            factor = min(0.9, max(0.3, ratio ** 0.5))
            subs[i] = _shrunk(subs[i], base, factor)
    raise InfeasibleFleet("policy repair did not converge "
                          f"within {max_attempts} attempts")


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_policy(base: TransformerConfig, fleet: DeviceFleet,
                  rng) -> DecompositionPolicy:
    """Draw a random feasible policy.

    Budget-style draw: the embedding width and each layer's head/MLP budgets
    are split among devices by random shares, so C1-C4 hold by construction;
    the per-device ceilings C5/C6 are then enforced by the shrinking repair.
    Deterministic for a given seed or generator state.
    """
    rng = _as_rng(rng)
    check_fleet_feasible(base, fleet)
    n = len(fleet)
    dh = base.head_dim
    n_slices = base.embed_dim // dh  # embedding budget in head-width units

    layers = rng.integers(1, base.layers + 1, size=n)
    deepest = int(layers.max())

    shares = rng.random(n)
    shares = shares / shares.sum()
    usage = rng.random()
    spare = n_slices - n
    d_widths = dh * (1 + np.floor(shares * spare * usage).astype(int))

    heads = np.ones((n, deepest), dtype=int)
    mlps = np.ones((n, deepest), dtype=int)
    for k in range(deepest):
        present = np.flatnonzero(layers > k)
        raw = rng.random(present.size)
        raw = raw / raw.sum()
        heads[present, k] += np.floor(
            raw * (base.heads - present.size) * rng.random()).astype(int)
        raw = rng.random(present.size)
        raw = raw / raw.sum()
        mlps[present, k] += np.floor(
            raw * (base.mlp_dim - present.size) * rng.random()).astype(int)

    subs = tuple(
        SubModelConfig(int(l), int(d),
                       tuple(int(x) for x in heads[i, :l]),
                       tuple(int(x) for x in mlps[i, :l]))
        for i, (l, d) in enumerate(zip(layers, d_widths)))
    return repair_policy(DecompositionPolicy(subs), base, fleet)


@dataclass(frozen=True)
class LayerSpec:
    """Which pieces of one base layer a sub-model keeps."""

    source_layer: int
    head_ids: tuple[int, ...]
    neuron_ids: tuple[int, ...]


@dataclass(frozen=True)
class SubModelPlan:
    """Structural recipe for materializing one sub-model's weights."""

    embed_width: int  # contiguous prefix of the base embedding
    layer_specs: tuple[LayerSpec, ...] = field(default_factory=tuple)


def decompose(base: TransformerConfig, policy: DecompositionPolicy,
              fleet: DeviceFleet | None = None,
              head_importance: np.ndarray | None = None,
              neuron_importance: np.ndarray | None = None) -> tuple[SubModelPlan, ...]:
    """Turn a policy into per-device structural plans.

    Each sub-model keeps the first l_n base layers, the top-ranked
    h_n[k] heads and D_n[k] MLP neurons per layer, and a contiguous prefix
    of width d_n of the embedding.  Ranking defaults to index order;
    importance matrices of shape (L, h) and (L, D) override it.
    """
    if fleet is not None:
        report = validate_policy(policy, base, fleet)
        if not report.satisfied:
            raise InfeasiblePolicy(report)
    if head_importance is None:
        head_rank = np.tile(np.arange(base.heads), (base.layers, 1))
    else:
        head_rank = np.argsort(-np.asarray(head_importance), axis=1,
                               kind="stable")
    if neuron_importance is None:
        neuron_rank = np.tile(np.arange(base.mlp_dim), (base.layers, 1))
    else:
        neuron_rank = np.argsort(-np.asarray(neuron_importance), axis=1,
                                 kind="stable")

    plans = []
    for cfg in policy.sub_models:
        specs = []
        for k in range(cfg.layers):
            kept_heads = tuple(sorted(int(j) for j in
                                      head_rank[k, :cfg.heads_per_layer[k]]))
            kept_neurons = tuple(sorted(int(j) for j in
                                        neuron_rank[k, :cfg.mlp_dims[k]]))
            specs.append(LayerSpec(k, kept_heads, kept_neurons))
        plans.append(SubModelPlan(cfg.embed_dim, tuple(specs)))
    return tuple(plans)
