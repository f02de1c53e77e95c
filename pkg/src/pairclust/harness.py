"""Experiment orchestration: recall/density/cluster-count grids and transfer runs."""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Optional, Sequence

from .data import Dataset, select_classes
from .network import NetworkConfig
from .pairs import GroundTruthOracle, NoiseSpec, ScorerOracle
from .spn import SpnConfig, eval_pair_recall, train_spn
from .trainer import ClusterRunConfig, train_clusternet

log = logging.getLogger(__name__)

DEFAULT_RECALLS = tuple(round(1.0 - 0.1 * i, 1) for i in range(11))


@dataclass
class ResultRow:
    dataset: str
    M: int
    D: float
    r_s: float
    r_d: float
    restart: int
    seed: int
    nmi_train: Optional[float]
    acc_train: Optional[float]
    nmi_test: Optional[float] = None
    acc_test: Optional[float] = None
    epochs: int = 0
    wall_seconds: float = 0.0
    error: str = ""


COLUMNS = [f.name for f in fields(ResultRow)]
_FLOATS = {"D", "r_s", "r_d", "nmi_train", "acc_train", "nmi_test", "acc_test", "wall_seconds"}
_INTS = {"M", "restart", "seed", "epochs"}


def _fmt(name, value):
    if value is None:
        return ""
    if name in _FLOATS:
        return f"{float(value):.6f}"
    return str(value)


def _parse(name, text):
    if name in _FLOATS:
        return None if text == "" else float(text)
    if name in _INTS:
        return int(text)
    return text


class CsvRowWriter:
    """Header on open, then one flushed line per row."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(COLUMNS)
        self._fh.flush()

    def write(self, row: ResultRow):
        self._writer.writerow([_fmt(c, getattr(row, c)) for c in COLUMNS])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_csv(rows: Iterable[ResultRow], path) -> None:
    with CsvRowWriter(path) as w:
        for row in rows:
            w.write(row)


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [ResultRow(**{c: _parse(c, rec[c]) for c in COLUMNS}) for rec in reader]


# --------------------------------------------------------------------------
# grid


@dataclass
class GridSpec:
    dataset: Dataset
    template: ClusterRunConfig
    test_set: Optional[Dataset] = None
    recall_similar: Sequence[float] = DEFAULT_RECALLS
    recall_dissimilar: Sequence[float] = DEFAULT_RECALLS
    densities: Sequence[float] = (1.0, 0.1)
    cluster_counts: Sequence[int] = (10, 100)
    base_seed: int = 0
    record_all_restarts: bool = True

    def __post_init__(self):
        for axis in ("recall_similar", "recall_dissimilar", "densities", "cluster_counts"):
            if len(getattr(self, axis)) == 0:
                raise ValueError(f"grid axis {axis} is empty")
        for r in (*self.recall_similar, *self.recall_dissimilar):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"recall {r} outside [0, 1]")

    def cells(self) -> list[tuple[int, float, float, float]]:
        """``(M, D, r_s, r_d)`` in emission order."""
        return [(int(m), float(d), float(rs), float(rd))
                for m in self.cluster_counts for d in self.densities
                for rs in self.recall_similar for rd in self.recall_dissimilar]


def cell_seed(base_seed: int, m: int, d: float, rs: float, rd: float) -> int:
    """Stable seed from a cell's coordinates, so sub-grids reproduce full-grid cells."""
    key = f"{int(base_seed)}|{int(m)}|{d:.6f}|{rs:.6f}|{rd:.6f}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=4).digest(), "little") & 0x7FFFFFFF


def cell_config(spec: GridSpec, m: int, d: float, rs: float, rd: float) -> ClusterRunConfig:
    seed = cell_seed(spec.base_seed, m, d, rs, rd)
    net = spec.template.network
    last = net.layers[-1]
    net = NetworkConfig(net.input_shape, net.layers[:-1] + (replace(last, out_dim=m),), seed)
    return replace(spec.template, network=net, density=d, base_seed=seed,
                   oracle=GroundTruthOracle(NoiseSpec(rs, rd, seed)))


def run_cell(spec: GridSpec, cell) -> list[ResultRow]:
    m, d, rs, rd = cell
    seed = cell_seed(spec.base_seed, m, d, rs, rd)
    epochs = spec.template.epochs
    t0 = time.perf_counter()
    try:
        result = train_clusternet(cell_config(spec, m, d, rs, rd), spec.dataset, spec.test_set)
    except Exception as exc:  # recorded in-row so the grid keeps going
        log.warning("cell %s failed: %s", cell, exc)
        return [ResultRow(spec.dataset.name, m, d, rs, rd, -1, seed, None, None, None, None,
                          epochs, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")]
    runs = result.restarts if spec.record_all_restarts else [result.best]
    elapsed = time.perf_counter() - t0
    return [ResultRow(spec.dataset.name, m, d, rs, rd, r.restart, r.seed, r.nmi, r.acc,
                      r.nmi_test, r.acc_test, epochs, elapsed) for r in runs]


def run_grid(spec: GridSpec, on_row: Optional[Callable[[ResultRow], None]] = None,
             threads: int = 1) -> list[ResultRow]:
    """Train every cell; rows reach ``on_row`` in cell order as soon as they are final."""
    cells = spec.cells()
    rows: list[ResultRow] = []

    def emit(batch):
        for row in batch:
            rows.append(row)
            if on_row is not None:
                on_row(row)

    if threads <= 1:
        for i, cell in enumerate(cells):
            log.info("cell %d/%d %s", i + 1, len(cells), cell)
            emit(run_cell(spec, cell))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for batch in pool.map(lambda c: run_cell(spec, c), cells):
                emit(batch)
    return rows


def best_per_cell(rows: Iterable[ResultRow]) -> dict:
    """``(M, D, r_s, r_d) -> row`` holding the highest train NMI of each cell."""
    best: dict = {}
    for r in rows:
        key = (r.M, r.D, r.r_s, r.r_d)
        score = -1.0 if r.nmi_train is None else r.nmi_train
        if key not in best or score > (-1.0 if best[key].nmi_train is None else best[key].nmi_train):
            best[key] = r
    return best


def bright_count(rows: Iterable[ResultRow], density: float, threshold: float = 0.8,
                 clusters: Optional[int] = None) -> int:
    """Cells at ``density`` whose best restart reaches ``threshold`` NMI."""
    return sum(1 for (m, d, _, _), r in best_per_cell(rows).items()
               if d == density and (clusters is None or m == clusters)
               and r.nmi_train is not None and r.nmi_train >= threshold)


# --------------------------------------------------------------------------
# transfer


@dataclass
class TransferReport:
    source_classes: list
    target_classes: list
    spn_recall_similar: float
    spn_recall_dissimilar: float
    nmi: Optional[float]
    acc: Optional[float]
    clean_nmi: Optional[float]
    clean_acc: Optional[float]
    chance_nmi: Optional[float]
    chance_acc: Optional[float]
    chance_recalls: tuple
    nmi_test: Optional[float] = None
    acc_test: Optional[float] = None
    spn_meta: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    @property
    def positive_transfer(self) -> bool:
        return bool(self.nmi is not None and self.chance_nmi is not None and self.nmi > self.chance_nmi)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["chance_recalls"] = list(self.chance_recalls)
        out["positive_transfer"] = self.positive_transfer
        return out


def run_transfer(source_classes: Sequence[int], target_classes: Sequence[int], dataset: Dataset,
                 spn_cfg: SpnConfig, cluster_cfg: ClusterRunConfig,
                 test_set: Optional[Dataset] = None, recall_batches: int = 20,
                 recall_batch_size: int = 256, spn=None) -> TransferReport:
    """Train an SPN on the source classes and use it to cluster the disjoint target classes.

    Alongside the SPN-driven run, the same target is clustered with a clean
    ground-truth oracle and with an oracle degraded to chance-level recalls
    ``(1/K, 1 - 1/K)``. ``cluster_cfg.oracle`` is ignored. A pre-trained ``spn``
    may be passed to skip training.
    """
    src = [int(c) for c in source_classes]
    tgt = [int(c) for c in target_classes]
    if set(src) & set(tgt):
        raise ValueError(f"source and target classes overlap: {sorted(set(src) & set(tgt))}")
    t0 = time.perf_counter()
    source = select_classes(dataset, src, name=f"{dataset.name}-source")
    target = select_classes(dataset, tgt, name=f"{dataset.name}-target")
    target_test = select_classes(test_set, tgt) if test_set is not None else None
    if spn is None:
        spn = train_spn(source, spn_cfg)
    rs, rd = eval_pair_recall(spn, target, recall_batches, recall_batch_size, seed=spn_cfg.seed)

    k = len(tgt)
    chance = (1.0 / k, 1.0 - 1.0 / k)
    spn_run = train_clusternet(replace(cluster_cfg, oracle=ScorerOracle(spn)), target, target_test)
    clean = train_clusternet(replace(cluster_cfg, oracle=GroundTruthOracle()), target)
    noisy = train_clusternet(
        replace(cluster_cfg, oracle=GroundTruthOracle(NoiseSpec(*chance, cluster_cfg.base_seed))),
        target)
    best = spn_run.best
    return TransferReport(src, tgt, rs, rd, best.nmi, best.acc, clean.best.nmi, clean.best.acc,
                          noisy.best.nmi, noisy.best.acc, chance, best.nmi_test, best.acc_test,
                          {k: v for k, v in spn.meta.items() if k != "kind"},
                          time.perf_counter() - t0)
