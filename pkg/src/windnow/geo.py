"""Grid construction, virtual-node placement, and the kNN base graph."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

EARTH_RADIUS_KM = 6371.0088

KIND_REAL = "real"
KIND_VIRTUAL = "virtual"

ORIGIN_STATION = "station"
ORIGIN_TEST_REPLACEMENT = "test_replacement"
ORIGIN_CELL_CENTER = "cell_center"


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km on a spherical Earth; accepts arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=np.float64))
                              for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return EARTH_RADIUS_KM * 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise DataError("coordinates must be finite")
        if not (-90.0 <= self.lat <= 90.0):
            raise DataError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise DataError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class GridSpec:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    rows: int
    cols: int

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ConfigError("grid bbox must have positive extent")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid needs at least one row and one column")

    def cell_of(self, lat, lon):
        """Cell (row, col) under the half-open convention [edge, next_edge).

        Points exactly on the top/right boundary belong to the last cell;
        interior boundary points go to the higher-index cell.
        """
        if not (self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max):
            raise DataError(f"point ({lat}, {lon}) outside grid bbox")
        row = int((lat - self.lat_min) / self.cell_height)
        col = int((lon - self.lon_min) / self.cell_width)
        return min(row, self.rows - 1), min(col, self.cols - 1)

    def center_of(self, row, col):
        lat = self.lat_min + (row + 0.5) * self.cell_height
        lon = self.lon_min + (col + 0.5) * self.cell_width
        return GeoPoint(lat, lon)

    @property
    def cell_height(self):
        return (self.lat_max - self.lat_min) / self.rows

    @property
    def cell_width(self):
        return (self.lon_max - self.lon_min) / self.cols


def assign_cells(points, grid):
    """Map each (lat, lon) point to its grid cell."""
    return [grid.cell_of(lat, lon) for lat, lon in points]


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    lat: float
    lon: float
    cell: tuple
    origin: str
    station_id: str = ""


class NodeSet:
    """Ordered real + virtual nodes covering every grid cell exactly once.

    Node ids are assigned in row-major cell order, so the ordering is
    stable across runs for the same inputs.
    """

    def __init__(self, nodes):
        self.nodes = list(nodes)
        ids = [n.id for n in self.nodes]
        if ids != list(range(len(ids))):
            raise ConfigError("node ids must be consecutive from 0")
        self.kinds = np.array([0 if n.kind == KIND_REAL else 1 for n in self.nodes],
                              dtype=np.int64)
        self.lats = np.array([n.lat for n in self.nodes])
        self.lons = np.array([n.lon for n in self.nodes])
        self.real_indices = np.where(self.kinds == 0)[0]
        self.virtual_indices = np.where(self.kinds == 1)[0]
        self.station_to_node = {n.station_id: n.id for n in self.nodes if n.station_id}

    def __len__(self):
        return len(self.nodes)

    @property
    def n_real(self):
        return len(self.real_indices)

    @property
    def n_virtual(self):
        return len(self.virtual_indices)

    def test_replacement_nodes(self):
        return [n for n in self.nodes if n.origin == ORIGIN_TEST_REPLACEMENT]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "kind", "lat", "lon", "cell_row", "cell_col",
                        "origin", "station_id"])
            for n in self.nodes:
                w.writerow([n.id, n.kind, repr(n.lat), repr(n.lon),
                            n.cell[0], n.cell[1], n.origin, n.station_id])


def build_node_set(stations, grid, withheld_ids):
    """Place one node per grid cell.

    stations: list of (station_id, lat, lon). Training stations become
    real nodes; withheld stations become virtual nodes at the exact
    station coordinates; cells with no station get a virtual node at the
    cell's geometric center.
    """
    withheld = set(withheld_ids)
    known = {s[0] for s in stations}
    missing = withheld - known
    if missing:
        raise ConfigError(f"withheld ids not in station list: {sorted(missing)}")

    by_cell = {}
    for sid, lat, lon in stations:
        cell = grid.cell_of(lat, lon)
        if cell in by_cell:
            raise ConfigError(
                f"stations {by_cell[cell][0]} and {sid} share grid cell {cell}"
            )
        by_cell[cell] = (sid, lat, lon)

    nodes = []
    for row in range(grid.rows):
        for col in range(grid.cols):
            nid = len(nodes)
            cell = (row, col)
            if cell in by_cell:
                sid, lat, lon = by_cell[cell]
                if sid in withheld:
                    nodes.append(Node(nid, KIND_VIRTUAL, lat, lon, cell,
                                      ORIGIN_TEST_REPLACEMENT, sid))
                else:
                    nodes.append(Node(nid, KIND_REAL, lat, lon, cell,
                                      ORIGIN_STATION, sid))
            else:
                center = grid.center_of(row, col)
                nodes.append(Node(nid, KIND_VIRTUAL, center.lat, center.lon, cell,
                                  ORIGIN_CELL_CENTER))
    return NodeSet(nodes)


def pairwise_distances(node_set):
    """Full haversine distance matrix in km."""
    lat = node_set.lats
    lon = node_set.lons
    return haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])


def knn_adjacency(node_set, k):
    """Symmetric binary adjacency from directed kNN by haversine distance.

    Each node links to its k nearest others (ties broken by lower node
    id); the union of directed edges gives the undirected graph. The
    diagonal stays zero.
    """
    n = len(node_set)
    if k < 1 or k >= n:
        raise ConfigError(f"k must be in [1, {n - 1}], got {k}")
    dist = pairwise_distances(node_set)
    adj = np.zeros((n, n))
    ids = np.arange(n)
    for i in range(n):
        order = sorted((dist[i, j], j) for j in ids if j != i)
        for _, j in order[:k]:
            adj[i, j] = 1.0
    adj = np.maximum(adj, adj.T)
    np.fill_diagonal(adj, 0.0)
    return adj


def nearest_real_nodes(node_set, query_lat, query_lon, k, min_distance_km=0.001):
    """Indices of and distances to the k nearest real nodes.

    Distances are floored at 1 m so inverse-distance weights stay finite
    for coincident points. Ties break on lower node id.
    """
    real = node_set.real_indices
    if len(real) < k:
        raise DataError(f"need at least {k} real nodes, have {len(real)}")
    d = haversine_km(query_lat, query_lon, node_set.lats[real], node_set.lons[real])
    d = np.maximum(d, min_distance_km)
    order = np.lexsort((real, d))[:k]
    return real[order], d[order]
