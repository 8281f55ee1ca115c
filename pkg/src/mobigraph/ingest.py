"""Taxi-trip CSV ingestion and origin-destination graph construction."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Iterable, TextIO

import numpy as np

from .errors import DataError
from .graph_core import MobilityGraph, Modality, Period

log = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"
DEFAULT_COLUMNS = {
    "pickup_time": "tpep_pickup_datetime",
    "dropoff_time": "tpep_dropoff_datetime",
    "pickup_zone": "PULocationID",
    "dropoff_zone": "DOLocationID",
}


@dataclass(frozen=True)
class TripRecord:
    pickup_time: datetime
    dropoff_time: datetime
    pickup_zone: int
    dropoff_zone: int


@dataclass(frozen=True)
class RowDiagnostic:
    row: int  # 1-based line number in the CSV, header is line 1
    reason: str


@dataclass(frozen=True)
class IngestConfig:
    n_nodes: int = 16
    seed: int = 0
    modality: Modality = Modality.AVG_TRAVEL_TIME
    min_duration_minutes: float = 1.0
    max_duration_minutes: float = 180.0
    layout_iterations: int = 50

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise DataError(f"n_nodes must be >= 2, got {self.n_nodes}")
        if not self.min_duration_minutes < self.max_duration_minutes:
            raise DataError(
                f"min_duration ({self.min_duration_minutes}) must be below "
                f"max_duration ({self.max_duration_minutes})"
            )
        object.__setattr__(self, "modality", Modality(self.modality))


def parse_trips(
    stream: TextIO | str,
    columns: dict[str, str] | None = None,
) -> tuple[list[TripRecord], list[RowDiagnostic]]:
    """Parse trip rows, skipping (and diagnosing) malformed ones.

    ``stream`` may be an open text file or the CSV text itself. ``columns``
    overrides entries of :data:`DEFAULT_COLUMNS`.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    for field_name in cols.values():
        if field_name not in header:
            raise DataError(f"missing required column {field_name!r} in CSV header")

    trips: list[TripRecord] = []
    diagnostics: list[RowDiagnostic] = []
    for lineno, row in enumerate(reader, start=2):
        try:
            pickup = datetime.strptime((row[cols["pickup_time"]] or "").strip(), TIMESTAMP_FORMAT)
            dropoff = datetime.strptime((row[cols["dropoff_time"]] or "").strip(), TIMESTAMP_FORMAT)
        except ValueError as exc:
            diagnostics.append(RowDiagnostic(lineno, f"unparseable timestamp: {exc}"))
            continue
        try:
            pu = int((row[cols["pickup_zone"]] or "").strip())
            do = int((row[cols["dropoff_zone"]] or "").strip())
        except ValueError:
            diagnostics.append(RowDiagnostic(lineno, "missing or non-integer location ID"))
            continue
        if pu <= 0 or do <= 0:
            diagnostics.append(RowDiagnostic(lineno, f"non-positive location ID ({pu}, {do})"))
            continue
        if dropoff < pickup:
            diagnostics.append(RowDiagnostic(lineno, "negative duration: dropoff before pickup"))
            continue
        trips.append(TripRecord(pickup, dropoff, pu, do))
    return trips, diagnostics


def trip_duration_minutes(t: TripRecord) -> float:
    return (t.dropoff_time - t.pickup_time).total_seconds() / 60.0


def trip_period(t: TripRecord) -> Period:
    return Period.AM if t.pickup_time.hour < 12 else Period.PM


def filter_trips(
    trips: Iterable[TripRecord],
    min_duration: float = 1.0,
    max_duration: float = 180.0,
    period: Period | None = None,
) -> list[TripRecord]:
    """Keep inter-zone trips whose duration lies in ``[min_duration, max_duration]``."""
    out = []
    for t in trips:
        if t.pickup_zone == t.dropoff_zone:
            continue
        if period is not None and period is not Period.UNSPECIFIED and trip_period(t) is not period:
            continue
        if min_duration <= trip_duration_minutes(t) <= max_duration:
            out.append(t)
    return out


def qualifying_zones(trips: Iterable[TripRecord]) -> list[int]:
    """Sorted zones touched by at least one AM trip and at least one PM trip."""
    seen: dict[Period, set[int]] = {Period.AM: set(), Period.PM: set()}
    for t in trips:
        bucket = seen[trip_period(t)]
        bucket.add(t.pickup_zone)
        bucket.add(t.dropoff_zone)
    return sorted(seen[Period.AM] & seen[Period.PM])


def select_common_nodes(trips: list[TripRecord], n: int, seed: int) -> list[int]:
    """Draw ``n`` distinct zones active in both periods, uniformly, reproducibly from ``seed``."""
    if not trips:
        raise DataError("no trips to select nodes from")
    pool = qualifying_zones(trips)
    if len(pool) < n:
        raise DataError(f"requested {n} nodes but only {len(pool)} zones have both AM and PM trips")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in picks]


def build_mobility_graph(
    trips: Iterable[TripRecord],
    zones: list[int],
    modality: Modality,
    period: Period = Period.UNSPECIFIED,
) -> MobilityGraph:
    """Aggregate trips between ``zones`` into one undirected weighted graph.

    Trips outside ``period`` (unless unspecified), self-loops and trips with
    an endpoint outside ``zones`` are ignored. Both travel directions pool into
    the same edge.
    """
    if len(set(zones)) != len(zones):
        raise DataError("zone list contains duplicates")
    modality = Modality(modality)
    period = Period(period)
    order = sorted(zones)
    index = {z: i for i, z in enumerate(order)}
    n = len(order)
    counts = np.zeros((n, n))
    minutes = np.zeros((n, n))
    for t in trips:
        i = index.get(t.pickup_zone)
        j = index.get(t.dropoff_zone)
        if i is None or j is None or i == j:
            continue
        if period is not Period.UNSPECIFIED and trip_period(t) is not period:
            continue
        a, b = min(i, j), max(i, j)
        counts[a, b] += 1
        minutes[a, b] += trip_duration_minutes(t)
    if modality is Modality.TRIP_COUNT:
        upper = counts
    else:
        upper = np.divide(minutes, counts, out=np.zeros_like(minutes), where=counts > 0)
    adjacency = upper + upper.T
    return MobilityGraph(
        node_ids=tuple(order),
        node_attrs=np.zeros((n, 2)),
        adjacency=adjacency,
        modality=modality,
        period=period,
    )


def layout_fruchterman_reingold(g: MobilityGraph, seed: int, iterations: int = 50) -> MobilityGraph:
    """Spring-embedder layout of the real nodes, rescaled into ``[-1, 1]^2``.

    Attraction along an edge is ``w * d^2 / k`` with ``w`` the edge weight
    divided by the largest weight; repulsion between every pair is ``k^2 / d``;
    ``k = sqrt(1 / n)`` for the unit square. Per-step displacement is capped by
    a temperature that starts at 0.1 and decays linearly to zero. Null nodes
    stay at the origin.
    """
    real = g.real_nodes
    n = real.size
    attrs = np.zeros((g.n, 2))
    if n == 0:
        return replace(g, node_attrs=attrs)
    rng = np.random.default_rng(seed)
    pos = rng.random((n, 2))
    W = g.adjacency[np.ix_(real, real)]
    wmax = W.max() if W.size else 0.0
    strength = W / wmax if wmax > 0 else W
    k = np.sqrt(1.0 / n)
    t0 = 0.1
    for it in range(iterations):
        temp = t0 * (1.0 - it / iterations)
        delta = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt(np.sum(delta * delta, axis=-1))
        np.fill_diagonal(dist, 1.0)
        dist = np.maximum(dist, 0.01)
        # net outward force coefficient on i from j: repulsion minus weighted attraction
        coeff = k * k / dist**2 - strength * dist / k
        np.fill_diagonal(coeff, 0.0)
        disp = np.sum(delta * coeff[:, :, None], axis=1)
        length = np.sqrt(np.sum(disp * disp, axis=1))
        length = np.where(length < 0.01, 0.01, length)
        pos = pos + disp * (np.minimum(length, temp) / length)[:, None]
    pos = pos - pos.mean(axis=0)
    extent = np.abs(pos).max()
    if extent > 0:
        pos = pos / extent
    attrs[real] = pos
    return replace(g, node_attrs=attrs)


def build_period_graphs(
    trips: list[TripRecord], cfg: IngestConfig
) -> tuple[MobilityGraph, MobilityGraph]:
    """Full pipeline: filter, pick common zones, build AM and PM graphs.

    The layout is computed on the AM graph and copied onto the PM graph so
    that node attributes mean the same thing in both.
    """
    kept = filter_trips(trips, cfg.min_duration_minutes, cfg.max_duration_minutes)
    log.info("kept %d of %d trips after duration/self-loop filtering", len(kept), len(trips))
    zones = select_common_nodes(kept, cfg.n_nodes, cfg.seed)
    am = build_mobility_graph(kept, zones, cfg.modality, Period.AM)
    pm = build_mobility_graph(kept, zones, cfg.modality, Period.PM)
    am = layout_fruchterman_reingold(am, cfg.seed, cfg.layout_iterations)
    pm = replace(pm, node_attrs=am.node_attrs)
    return am, pm
