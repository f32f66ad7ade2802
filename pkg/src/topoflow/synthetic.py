"""Synthetic flow traces for tests, demos and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .flows import DatasetSchema, FlowDataset

__all__ = ["synthetic_schema", "lateral_movement_traffic", "random_flows"]


def synthetic_schema(m: int = 8, name: str = "synthetic") -> DatasetSchema:
    """Schema with a ``packets`` weight column followed by ``m - 1`` generic
    statistics ``f1 .. f{m-1}``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    cols = ("packets", *(f"f{k}" for k in range(1, m)))
    return DatasetSchema(
        name=name,
        source_ip_column="src",
        dest_ip_column="dst",
        numeric_feature_columns=cols,
        summable_weight_column="packets",
        label_column="label",
        attack_category_column="attack_cat",
        positive_label_values=frozenset({"1"}),
    )


def _flow_stats(rng, n, m):
    X = rng.normal(size=(n, m))
    X[:, 0] = np.round(np.abs(rng.normal(20.0, 6.0, size=n))) + 1.0
    return X


def lateral_movement_traffic(
    n_flows: int = 2000,
    n_clients: int = 120,
    n_servers: int = 8,
    attack_fraction: float = 0.05,
    chain_length: int = 6,
    m: int = 8,
    seed: int = 0,
) -> FlowDataset:
    """Client/server traffic with a hidden machine-to-machine attack chain.

    Normal flows go from a random client to a random server. A fraction
    ``attack_fraction`` of the flows walk a chain of ``chain_length`` hops
    through compromised clients (client to client, which normal traffic
    never does). Every flow, benign or not, draws its statistics from the
    same distribution, so attack flows are indistinguishable feature-wise.
    """
    rng = np.random.default_rng(seed)
    clients = [f"10.0.{k // 250}.{k % 250 + 1}" for k in range(n_clients)]
    servers = [f"192.168.1.{k + 1}" for k in range(n_servers)]
    n_attack = int(round(attack_fraction * n_flows))
    n_normal = n_flows - n_attack

    popularity = rng.dirichlet(np.full(n_servers, 2.0))
    src = [clients[k] for k in rng.integers(n_clients, size=n_normal)]
    dst = [servers[k] for k in rng.choice(n_servers, size=n_normal, p=popularity)]

    hosts = rng.choice(n_clients, size=chain_length + 1, replace=False)
    hops = [(clients[hosts[h]], clients[hosts[h + 1]]) for h in range(chain_length)]
    for k in range(n_attack):
        a, b = hops[k % chain_length]
        src.append(a)
        dst.append(b)

    X = _flow_stats(rng, n_flows, m)
    labels = np.r_[np.zeros(n_normal, dtype=bool), np.ones(n_attack, dtype=bool)]
    order = rng.permutation(n_flows)
    cats = ["LateralMovement" if lab else None for lab in labels]
    return FlowDataset.from_arrays(
        synthetic_schema(m),
        X[order],
        [src[k] for k in order],
        [dst[k] for k in order],
        labels=labels[order],
        categories=[cats[k] for k in order],
    )


def random_flows(rng, n_flows: int, n_endpoints: int, m: int = 3) -> FlowDataset:
    """Small random flow set with integer weights (exact float sums)."""
    ends = [f"h{k}" for k in range(n_endpoints)]
    src = [ends[k] for k in rng.integers(n_endpoints, size=n_flows)]
    dst = [ends[k] for k in rng.integers(n_endpoints, size=n_flows)]
    X = rng.normal(size=(n_flows, m))
    X[:, 0] = rng.integers(-5, 50, size=n_flows)
    return FlowDataset.from_arrays(synthetic_schema(m), X, src, dst, labels=rng.random(n_flows) < 0.1)


def main(argv=None) -> int:
    """``python -m topoflow.synthetic OUT.csv [--flows N] [--seed S]``"""
    import argparse

    from .flows import write_dataset

    ap = argparse.ArgumentParser(prog="python -m topoflow.synthetic", description=main.__doc__)
    ap.add_argument("out")
    ap.add_argument("--flows", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    write_dataset(lateral_movement_traffic(n_flows=args.flows, seed=args.seed), args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
