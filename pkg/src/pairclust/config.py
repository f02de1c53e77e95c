"""Build datasets, networks and run configs from YAML/JSON experiment documents."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import yaml

from .data import BlobSpec, Dataset, load_idx, load_mnist, make_blobs, normalize, select_classes
from .loss import LossConfig
from .network import NetworkConfig, convnet, layer_from_dict, mlp
from .pairs import ConstantOracle, GroundTruthOracle, NoiseSpec, ScorerOracle
from .spn import SpnConfig, SpnModel
from .trainer import ClusterRunConfig

DEFAULT_BLOBS = {"kind": "blobs", "num_classes": 10, "dim": 16, "points_per_class": 500,
                 "class_std": 0.5, "center_scale": 4.0, "seed": 0}


def read_config(path) -> tuple[dict, str]:
    """Parsed document and its verbatim text."""
    text = Path(path).read_text()
    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return doc, text


def build_datasets(d: Optional[dict], classes=None) -> tuple[Dataset, Optional[Dataset]]:
    """``(train, test)`` for a ``dataset`` section; ``test`` may be None.

    ``classes`` (or the section's own ``classes`` key) restricts both splits to
    those classes, relabelled in order. Normalisation statistics come from the
    training split.
    """
    d = dict(DEFAULT_BLOBS if d is None else d)
    kind = d.pop("kind", "blobs")
    do_norm = d.pop("normalize", True)
    classes = classes if classes is not None else d.pop("classes", None)
    d.pop("classes", None)
    if kind == "blobs":
        test_ppc = int(d.pop("test_points_per_class", 0))
        spec = BlobSpec(**d)
        train = make_blobs(spec)
        test = None
        if test_ppc:
            test = make_blobs(BlobSpec(**{**d, "points_per_class": test_ppc}), draw=1)
    elif kind == "mnist":
        train = load_mnist(d["dir"], "train")
        test = load_mnist(d["dir"], "test") if d.get("test", True) else None
    elif kind == "idx":
        train = load_idx(d["images"], d.get("labels"))
        test = None
        if d.get("test_images"):
            test = load_idx(d["test_images"], d.get("test_labels"))
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if classes is not None:
        train = select_classes(train, classes)
        test = select_classes(test, classes) if test is not None else None
    if do_norm:
        train = normalize(train)
        if test is not None:
            test = normalize(test, train.norm_stats)
    return train, test


def build_network(d: Optional[dict], input_shape, out_dim: Optional[int] = None,
                  seed: int = 0) -> NetworkConfig:
    d = dict(d or {"kind": "mlp", "hidden": [256]})
    kind = d.get("kind", "mlp")
    out = out_dim if out_dim is not None else d.get("clusters", d.get("features"))
    if kind == "mlp":
        return mlp(input_shape, d.get("hidden", [256]), out, seed)
    if kind == "convnet":
        return convnet(input_shape, out, tuple(d.get("channels", (16, 32))), d.get("kernel", 5),
                       d.get("hidden", 128), seed)
    if kind == "layers":
        return NetworkConfig(tuple(input_shape), tuple(layer_from_dict(x) for x in d["layers"]), seed)
    raise ValueError(f"unknown network kind {kind!r}")


def build_oracle(d: Optional[dict], seed: int = 0):
    d = dict(d or {"kind": "ground_truth"})
    kind = d.get("kind", "ground_truth")
    if kind == "ground_truth":
        rs = float(d.get("recall_similar", 1.0))
        rd = float(d.get("recall_dissimilar", 1.0))
        return GroundTruthOracle(NoiseSpec(rs, rd, int(d.get("seed", seed))))
    if kind == "spn":
        return ScorerOracle(SpnModel.load(d["checkpoint"]), float(d.get("threshold", 0.5)))
    if kind == "constant":
        return ConstantOracle(int(d.get("label", 1)))
    raise ValueError(f"unknown oracle kind {kind!r}")


def build_cluster_config(doc: dict, dataset: Dataset, seed: int, oracle=None,
                         clusters: Optional[int] = None) -> ClusterRunConfig:
    train = dict(doc.get("train") or {})
    net_doc = doc.get("network") or {}
    m = clusters or net_doc.get("clusters") or dataset.num_classes or 10
    net = build_network(net_doc, dataset.sample_shape, int(m), seed)
    if oracle is None:
        oracle = build_oracle(doc.get("oracle"), seed)
    return ClusterRunConfig(
        network=net,
        loss=LossConfig(margin=float(train.get("margin", 2.0))),
        oracle=oracle,
        density=float(train.get("density", 1.0)),
        batch_size=int(train.get("batch_size", 256)),
        epochs=int(train.get("epochs", 15)),
        lr=float(train.get("lr", 0.1)),
        momentum=float(train.get("momentum", 0.9)),
        restarts=int(train.get("restarts", 5)),
        base_seed=int(seed),
        select_by=train.get("select_by", "nmi"),
    )


def build_spn_config(d: Optional[dict], input_shape, seed: int) -> SpnConfig:
    d = dict(d or {})
    net_doc = d.get("network") or {"kind": "mlp", "hidden": [64], "features": 32}
    base = build_network(net_doc, input_shape, int(net_doc.get("features", 32)), seed)
    return SpnConfig(base, hidden=int(d.get("hidden", 256)), batch_size=int(d.get("batch_size", 64)),
                     epochs=int(d.get("epochs", 5)), lr=float(d.get("lr", 0.1)),
                     momentum=float(d.get("momentum", 0.9)), seed=int(seed))
