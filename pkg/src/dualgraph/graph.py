"""Factor graph of pose/landmark nodes and odometry/detection/prior edges.

The objective is the usual sum of squared Mahalanobis residuals over every
edge.  Residual conventions (right perturbation, twists ``[rho, phi]``):

* odometry ``(a, b, Z)``:       ``log(Z^-1 o a^-1 o b)``
* pose detection ``(x, l, Z)``: ``log(Z^-1 o x^-1 o l)``
* point detection ``(x, p, z)``: ``x^-1 * p - z`` (body frame of ``x``)
* pose prior ``(n, Z)``:        ``log(Z^-1 o n)``; point prior: ``p - z``

Per-edge evaluation (:func:`edge_error`) goes through the ``Pose`` value
types.  Linearization is batched over numpy arrays and lives in
:class:`Problem`, which the solver also uses for its inner loop.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .exceptions import DuplicateLandmarkError, GaugeError, StructuralError
from .geometry import Pose

ODOMETRY_INFORMATION = np.diag([100.0, 100.0, 100.0, 400.0, 400.0, 400.0])
DETECTION_POSE_INFORMATION = np.diag([25.0] * 6)
DETECTION_POINT_INFORMATION = np.diag([25.0] * 3)
PRIOR_INFORMATION_SCALE = 1e6


def check_information(info, dim):
    """Return ``info`` as a read-only SPD ``dim x dim`` array or raise ``ValueError``."""
    info = np.array(info, dtype=float)
    if info.shape != (dim, dim):
        raise ValueError(f"information must be {dim}x{dim}, got {info.shape}")
    if not np.all(np.isfinite(info)):
        raise ValueError("information has non-finite entries")
    scale = max(1.0, float(np.abs(info).max()))
    if np.abs(info - info.T).max() > 1e-12 * scale:
        raise ValueError("information matrix is not symmetric")
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise ValueError("information matrix is not positive definite") from None
    info.flags.writeable = False
    return info


def _as_point(x):
    p = np.array(x, dtype=float).reshape(3)
    p.flags.writeable = False
    return p


@dataclass
class PoseNode:
    id: int
    estimate: Pose
    fixed: bool = False
    stamp: float = 0.0


@dataclass
class LandmarkNode:
    id: int
    estimate: object  # Pose for pose landmarks, (3,) array for points
    semantic_id: object
    fixed: bool = False

    @property
    def kind(self):
        return "pose" if isinstance(self.estimate, Pose) else "point"


@dataclass
class OdometryEdge:
    source: int
    target: int
    measurement: Pose
    information: np.ndarray = field(repr=False)


@dataclass
class DetectionEdge:
    pose: int
    landmark: int
    measurement: object  # Pose or (3,) array in the body frame of ``pose``
    information: np.ndarray = field(repr=False)

    @property
    def kind(self):
        return "pose" if isinstance(self.measurement, Pose) else "point"


@dataclass
class PriorEdge:
    node: int
    measurement: object
    information: np.ndarray = field(repr=False)


def _endpoints(edge):
    if isinstance(edge, OdometryEdge):
        return (edge.source, edge.target)
    if isinstance(edge, DetectionEdge):
        return (edge.pose, edge.landmark)
    return (edge.node,)


def _inverse_arrays(edge):
    # inverse measurement as arrays, cached on the edge while the measurement object is unchanged
    cached = getattr(edge, "_inv_cache", None)
    if cached is not None and cached[0] is edge.measurement:
        return cached[1], cached[2]
    inv = edge.measurement.inverse()
    R, t = inv.rotation.matrix, inv.translation
    edge._inv_cache = (edge.measurement, R, t)
    return R, t


def _node_dim(node):
    return 3 if isinstance(node, LandmarkNode) and node.kind == "point" else 6


class Graph:
    """Nodes keyed by integer id plus an ordered edge list.

    Ids come from a monotone counter and are never reused.
    """

    def __init__(self):
        self.nodes = {}
        self.edges = []
        self._next_id = 0
        self._by_semantic = {}

    # -- construction -------------------------------------------------------

    def _take_id(self):
        nid = self._next_id
        self._next_id += 1
        return nid

    def add_pose_node(self, estimate: Pose, fixed=False, stamp=0.0) -> int:
        if not isinstance(estimate, Pose):
            raise TypeError("pose node estimate must be a Pose")
        nid = self._take_id()
        self.nodes[nid] = PoseNode(nid, estimate, bool(fixed), float(stamp))
        return nid

    def add_landmark_node(self, estimate, semantic_id, fixed=False) -> int:
        if semantic_id in self._by_semantic:
            raise DuplicateLandmarkError(f"landmark {semantic_id!r} already in graph")
        if not isinstance(estimate, Pose):
            estimate = _as_point(estimate)
        nid = self._take_id()
        self.nodes[nid] = LandmarkNode(nid, estimate, semantic_id, bool(fixed))
        self._by_semantic[semantic_id] = nid
        return nid

    def _insert(self, node):
        # used by the text parser, which must keep the original ids
        if node.id in self.nodes:
            raise StructuralError(f"duplicate node id {node.id}")
        if isinstance(node, LandmarkNode):
            if node.semantic_id in self._by_semantic:
                raise DuplicateLandmarkError(f"landmark {node.semantic_id!r} already in graph")
            self._by_semantic[node.semantic_id] = node.id
        self.nodes[node.id] = node
        self._next_id = max(self._next_id, node.id + 1)

    def _require(self, nid, cls=None):
        node = self.nodes.get(nid)
        if node is None:
            raise StructuralError(f"edge references unknown node {nid}")
        if cls is not None and not isinstance(node, cls):
            raise StructuralError(f"node {nid} is a {type(node).__name__}, expected {cls.__name__}")
        return node

    def add_odometry_edge(self, source, target, measurement: Pose, information=None):
        self._require(source, PoseNode)
        self._require(target, PoseNode)
        if not isinstance(measurement, Pose):
            raise StructuralError("odometry measurement must be a Pose")
        info = check_information(ODOMETRY_INFORMATION if information is None else information, 6)
        edge = OdometryEdge(source, target, measurement, info)
        self.edges.append(edge)
        return edge

    def add_detection_edge(self, pose, landmark, measurement, information=None):
        self._require(pose, PoseNode)
        lm = self._require(landmark, LandmarkNode)
        if lm.kind == "pose":
            if not isinstance(measurement, Pose):
                raise StructuralError("pose landmark needs a Pose measurement")
            default = DETECTION_POSE_INFORMATION
        else:
            if isinstance(measurement, Pose):
                raise StructuralError("point landmark needs a 3-vector measurement")
            measurement = _as_point(measurement)
            default = DETECTION_POINT_INFORMATION
        info = check_information(default if information is None else information, _node_dim(lm))
        edge = DetectionEdge(pose, landmark, measurement, info)
        self.edges.append(edge)
        return edge

    def add_prior_edge(self, node, measurement, information=None):
        n = self._require(node)
        dim = _node_dim(n)
        if dim == 6:
            if not isinstance(measurement, Pose):
                raise StructuralError("prior on a pose-valued node needs a Pose measurement")
        else:
            if isinstance(measurement, Pose):
                raise StructuralError("prior on a point landmark needs a 3-vector")
            measurement = _as_point(measurement)
        if information is None:
            information = PRIOR_INFORMATION_SCALE * np.eye(dim)
        edge = PriorEdge(node, measurement, check_information(information, dim))
        self.edges.append(edge)
        return edge

    # -- queries ------------------------------------------------------------

    def landmark_id(self, semantic_id):
        return self._by_semantic[semantic_id]

    def has_landmark(self, semantic_id):
        return semantic_id in self._by_semantic

    def pose_nodes(self):
        return [n for n in self.nodes.values() if isinstance(n, PoseNode)]

    def landmark_nodes(self):
        return [n for n in self.nodes.values() if isinstance(n, LandmarkNode)]

    def detection_edges(self):
        return [e for e in self.edges if isinstance(e, DetectionEdge)]

    def counts(self):
        return {
            "nodes": len(self.nodes),
            "pose_nodes": sum(isinstance(n, PoseNode) for n in self.nodes.values()),
            "landmark_nodes": sum(isinstance(n, LandmarkNode) for n in self.nodes.values()),
            "edges": len(self.edges),
            "odometry_edges": sum(isinstance(e, OdometryEdge) for e in self.edges),
            "detection_edges": sum(isinstance(e, DetectionEdge) for e in self.edges),
            "prior_edges": sum(isinstance(e, PriorEdge) for e in self.edges),
        }

    def edge_error(self, edge):
        return edge_error(self, edge)

    def chi2(self):
        return Problem(self).chi2()

    def linearize(self, fixed=None):
        return Problem(self, fixed=fixed).linearize()

    def copy(self):
        g = Graph()
        g.nodes = {k: _copy_node(v) for k, v in self.nodes.items()}
        g.edges = list(self.edges)
        g._next_id = self._next_id
        g._by_semantic = dict(self._by_semantic)
        return g


def _copy_node(n):
    if isinstance(n, PoseNode):
        return PoseNode(n.id, n.estimate, n.fixed, n.stamp)
    return LandmarkNode(n.id, n.estimate, n.semantic_id, n.fixed)


def edge_error(graph: Graph, edge) -> np.ndarray:
    """Residual of a single edge, computed with the scalar ``Pose`` operations."""
    if isinstance(edge, OdometryEdge):
        a = graph._require(edge.source, PoseNode).estimate
        b = graph._require(edge.target, PoseNode).estimate
        return geo.log(geo.compose(edge.measurement.inverse(), geo.relative(a, b)))
    if isinstance(edge, DetectionEdge):
        x = graph._require(edge.pose, PoseNode).estimate
        lm = graph._require(edge.landmark, LandmarkNode)
        if lm.kind != edge.kind:
            raise StructuralError(f"{edge.kind} detection against {lm.kind} landmark {lm.id}")
        if lm.kind == "pose":
            return geo.log(geo.compose(edge.measurement.inverse(), geo.relative(x, lm.estimate)))
        return geo.transform_point(x.inverse(), lm.estimate) - edge.measurement
    if isinstance(edge, PriorEdge):
        est = graph._require(edge.node).estimate
        if isinstance(est, Pose):
            if not isinstance(edge.measurement, Pose):
                raise StructuralError("point prior on a pose-valued node")
            return geo.log(geo.compose(edge.measurement.inverse(), est))
        if isinstance(edge.measurement, Pose):
            raise StructuralError("pose prior on a point landmark")
        return est - edge.measurement
    raise StructuralError(f"unknown edge type {type(edge).__name__}")


# ---------------------------------------------------------------------------
# batched problem
# ---------------------------------------------------------------------------

@dataclass
class LinearSystem:
    """Normal equations at the current estimate.

    ``H`` is sparse (CSC) over the free variables in ``order``; ``offsets``
    maps node id -> first row of its block.
    """
    H: sp.csc_matrix
    b: np.ndarray
    chi2: float
    order: list
    offsets: dict
    dims: dict
    diag_index: np.ndarray | None = field(default=None, repr=False)
    border_start: int | None = None  # first row of the landmark block

    def block(self, nid):
        o, d = self.offsets[nid], self.dims[nid]
        return slice(o, o + d)


class _Group:
    __slots__ = ("kind", "a", "b", "mR", "mt", "info", "edges")


class Problem:
    """Array view of a graph for fast residual/Jacobian evaluation.

    ``fixed`` (an iterable of node ids) overrides the per-node fixed flags,
    which is how a caller linearizes the same graph in a different gauge.
    """

    def __init__(self, graph: Graph, fixed=None):
        self.graph = graph
        if fixed is None:
            fixed = {nid for nid, n in graph.nodes.items() if n.fixed}
        else:
            fixed = set(fixed)
            for nid in fixed:
                graph._require(nid)
        self.fixed = fixed

        se3_ids, pt_ids = [], []
        self.slot = {}
        for nid in sorted(graph.nodes):
            node = graph.nodes[nid]
            if _node_dim(node) == 6:
                self.slot[nid] = len(se3_ids)
                se3_ids.append(nid)
            else:
                self.slot[nid] = len(pt_ids)
                pt_ids.append(nid)
        self.se3_ids = se3_ids
        self.pt_ids = pt_ids
        self.R, self.t = geo.stack([graph.nodes[i].estimate for i in se3_ids])
        self.p = (np.array([graph.nodes[i].estimate for i in pt_ids], dtype=float)
                  if pt_ids else np.zeros((0, 3)))

        # variable layout: free pose nodes in id order, then free landmarks; a
        # keyframe chain then gives a banded block followed by a dense border
        free = [nid for nid in sorted(graph.nodes) if nid not in fixed]
        self.order = ([nid for nid in free if isinstance(graph.nodes[nid], PoseNode)]
                      + [nid for nid in free if isinstance(graph.nodes[nid], LandmarkNode)])
        self.offsets, self.dims = {}, {}
        off = 0
        for nid in self.order:
            d = _node_dim(graph.nodes[nid])
            self.offsets[nid] = off
            self.dims[nid] = d
            off += d
        self.size = off
        n_pose = sum(isinstance(graph.nodes[nid], PoseNode) for nid in self.order)
        self.border_start = 6 * n_pose
        self.se3_off = np.array([self.offsets.get(i, -1) for i in se3_ids], dtype=np.int64)
        self.pt_off = np.array([self.offsets.get(i, -1) for i in pt_ids], dtype=np.int64)

        self.groups = self._build_groups()
        self._build_pattern()

    def _build_groups(self):
        g = self.graph
        buckets = {"between": [], "point": [], "prior6": [], "prior3": []}
        for e in g.edges:
            if isinstance(e, OdometryEdge):
                g._require(e.source, PoseNode)
                g._require(e.target, PoseNode)
                buckets["between"].append(e)
            elif isinstance(e, DetectionEdge):
                g._require(e.pose, PoseNode)
                lm = g._require(e.landmark, LandmarkNode)
                if lm.kind != e.kind:
                    raise StructuralError(f"{e.kind} detection against {lm.kind} landmark {lm.id}")
                buckets["between" if lm.kind == "pose" else "point"].append(e)
            elif isinstance(e, PriorEdge):
                n = g._require(e.node)
                if _node_dim(n) == 6:
                    if not isinstance(e.measurement, Pose):
                        raise StructuralError("point prior on a pose-valued node")
                    buckets["prior6"].append(e)
                else:
                    if isinstance(e.measurement, Pose):
                        raise StructuralError("pose prior on a point landmark")
                    buckets["prior3"].append(e)
            else:
                raise StructuralError(f"unknown edge type {type(e).__name__}")

        groups = []
        for kind, edges in buckets.items():
            if not edges:
                continue
            grp = _Group()
            grp.kind = kind
            grp.edges = edges
            ends = [_endpoints(e) for e in edges]
            grp.a = np.array([self.slot[x[0]] for x in ends], dtype=np.int64)
            grp.b = (np.array([self.slot[x[1]] for x in ends], dtype=np.int64)
                     if len(ends[0]) > 1 else None)
            if kind in ("between", "prior6"):
                grp.mR = np.empty((len(edges), 3, 3))
                grp.mt = np.empty((len(edges), 3))
                for k, e in enumerate(edges):
                    grp.mR[k], grp.mt[k] = _inverse_arrays(e)
            else:
                grp.mR = None
                grp.mt = np.array([e.measurement for e in edges], dtype=float)
            grp.info = np.array([e.information for e in edges])
            groups.append(grp)
        return groups

    # -- gauge -----------------------------------------------------------------

    def check_gauge(self):
        """Raise :class:`GaugeError` if a free node cannot reach an anchor.

        Anchors are fixed nodes and nodes carrying a full SE(3) prior.
        """
        g = self.graph
        adj = {nid: [] for nid in g.nodes}
        anchors = set(self.fixed)
        for e in g.edges:
            ends = _endpoints(e)
            if len(ends) == 2:
                adj[ends[0]].append(ends[1])
                adj[ends[1]].append(ends[0])
            elif isinstance(e.measurement, Pose):
                anchors.add(ends[0])
        seen = set(anchors)
        queue = deque(anchors)
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        missing = [nid for nid in self.order if nid not in seen]
        if missing:
            raise GaugeError(f"{len(missing)} free node(s) not connected to any anchor, e.g. {missing[:5]}")

    # -- evaluation -----------------------------------------------------------

    def _residuals(self, grp, R, t, p, jacobians):
        if grp.kind == "between":
            Ra, ta = R[grp.a], t[grp.a]
            Rb, tb = R[grp.b], t[grp.b]
            RaT = np.swapaxes(Ra, -1, -2)
            Rrel = RaT @ Rb
            trel = np.einsum("nij,nj->ni", RaT, tb - ta)
            RE = grp.mR @ Rrel
            tE = np.einsum("nij,nj->ni", grp.mR, trel) + grp.mt
            e = geo.se3_log(RE, tE)
            if not jacobians:
                return e, None, None
            Jb = geo.se3_right_jacobian_inv(e)
            RrelT = np.swapaxes(Rrel, -1, -2)
            adj_inv = geo.se3_adjoint(RrelT, -np.einsum("nij,nj->ni", RrelT, trel))
            Ja = -Jb @ adj_inv
            return e, Ja, Jb
        if grp.kind == "prior6":
            Rn, tn = R[grp.a], t[grp.a]
            RE = grp.mR @ Rn
            tE = np.einsum("nij,nj->ni", grp.mR, tn) + grp.mt
            e = geo.se3_log(RE, tE)
            return e, (geo.se3_right_jacobian_inv(e) if jacobians else None), None
        if grp.kind == "point":
            Ra, ta = R[grp.a], t[grp.a]
            RaT = np.swapaxes(Ra, -1, -2)
            q = np.einsum("nij,nj->ni", RaT, p[grp.b] - ta)
            e = q - grp.mt
            if not jacobians:
                return e, None, None
            Ja = np.zeros((len(e), 3, 6))
            Ja[:, :, :3] = -np.eye(3)
            Ja[:, :, 3:] = geo.hat(q)
            return e, Ja, RaT
        # prior3
        e = p[grp.a] - grp.mt
        if not jacobians:
            return e, None, None
        return e, np.broadcast_to(np.eye(3), (len(e), 3, 3)), None

    def chi2(self, state=None):
        R, t, p = state if state is not None else (self.R, self.t, self.p)
        total = 0.0
        for grp in self.groups:
            e, _, _ = self._residuals(grp, R, t, p, False)
            total += float(np.einsum("ni,nij,nj->", e, grp.info, e))
        return total

    def edge_errors(self):
        """Residual of every edge, in graph edge order (batched path)."""
        out = {}
        for grp in self.groups:
            e, _, _ = self._residuals(grp, self.R, self.t, self.p, False)
            for edge, r in zip(grp.edges, e):
                out[id(edge)] = r
        return [out[id(edge)] for edge in self.graph.edges]

    def jacobians(self):
        """Per-edge ``(residual, J_first, J_second)`` in graph edge order."""
        out = {}
        for grp in self.groups:
            e, Ja, Jb = self._residuals(grp, self.R, self.t, self.p, True)
            for k, edge in enumerate(grp.edges):
                out[id(edge)] = (e[k], Ja[k], None if Jb is None else Jb[k])
        return [out[id(edge)] for edge in self.graph.edges]

    def _offsets_for(self, grp, which):
        idx = grp.a if which == 0 else grp.b
        if grp.kind == "prior3" or (grp.kind == "point" and which == 1):
            return self.pt_off[idx]
        return self.se3_off[idx]

    def _build_pattern(self):
        """Fixed sparsity pattern of ``H`` and scatter maps for ``b``."""
        n = self.size
        self._blocks = []   # per group: [(u, v, mask)] of active Jacobian pairs
        self._grad = []     # per group: [(u, mask, index array)]
        rows, cols, grad_idx = [], [], []
        for grp in self.groups:
            nj = 1 if grp.b is None else 2
            dims = [3 if grp.kind == "prior3" else 6, 6 if grp.kind == "between" else 3]
            if grp.kind == "prior6":
                dims = [6]
            offs = [self._offsets_for(grp, k) for k in range(nj)]
            pairs, grads = [], []
            for u in range(nj):
                mu = offs[u] >= 0
                if not mu.any():
                    continue
                idx = offs[u][mu, None] + np.arange(dims[u])
                grads.append((u, mu))
                grad_idx.append(idx.ravel())
                for v in range(nj):
                    m = mu & (offs[v] >= 0)
                    if not m.any():
                        continue
                    r = offs[u][m, None, None] + np.arange(dims[u])[None, :, None]
                    c = offs[v][m, None, None] + np.arange(dims[v])[None, None, :]
                    r, c = np.broadcast_arrays(r, c)
                    rows.append(r.ravel())
                    cols.append(c.ravel())
                    pairs.append((u, v, m))
            self._blocks.append(pairs)
            self._grad.append(grads)
        self._grad_idx = np.concatenate(grad_idx) if grad_idx else np.zeros(0, np.int64)
        if rows:
            rows, cols = np.concatenate(rows), np.concatenate(cols)
            key = cols.astype(np.int64) * max(n, 1) + rows
            uniq, self._scatter = np.unique(key, return_inverse=True)
            self._indices = (uniq % n).astype(np.int32)
            col_of = uniq // n
            self._indptr = np.concatenate([[0], np.cumsum(np.bincount(col_of, minlength=n))]).astype(np.int32)
            diag = np.nonzero(self._indices == col_of)[0]
            self._diag_index = diag if len(diag) == n else None
        else:
            self._scatter = np.zeros(0, np.int64)
            self._indices = np.zeros(0, np.int32)
            self._indptr = np.zeros(n + 1, np.int32)
            self._diag_index = None

    def linearize(self, state=None) -> LinearSystem:
        R, t, p = state if state is not None else (self.R, self.t, self.p)
        n = self.size
        vals, grads = [], []
        chi2 = 0.0
        for grp, pairs, gparts in zip(self.groups, self._blocks, self._grad):
            e, Ja, Jb = self._residuals(grp, R, t, p, True)
            info = grp.info
            We = np.einsum("nij,nj->ni", info, e)
            chi2 += float(np.einsum("ni,ni->", e, We))
            Js = (Ja,) if Jb is None else (Ja, Jb)
            WJ = [info @ J for J in Js]
            for u, mu in gparts:
                grads.append(np.einsum("nij,ni->nj", Js[u][mu], We[mu]).ravel())
            for u, v, m in pairs:
                vals.append((np.swapaxes(Js[u][m], 1, 2) @ WJ[v][m]).ravel())
        b = (np.bincount(self._grad_idx, weights=np.concatenate(grads), minlength=n)
             if grads else np.zeros(n))
        if vals:
            data = np.bincount(self._scatter, weights=np.concatenate(vals), minlength=len(self._indices))
        else:
            data = np.zeros(0)
        H = sp.csc_matrix((data, self._indices, self._indptr), shape=(n, n))
        return LinearSystem(H, b, chi2, list(self.order), dict(self.offsets), dict(self.dims),
                            self._diag_index, self.border_start)

    # -- updates --------------------------------------------------------------

    def retracted(self, dx):
        """State ``(R, t, p)`` after applying increment ``dx`` (not stored)."""
        R, t, p = self.R.copy(), self.t.copy(), self.p.copy()
        m = self.se3_off >= 0
        if m.any():
            idx = self.se3_off[m, None] + np.arange(6)
            dR, dt = geo.se3_exp(dx[idx])
            Rm = R[m]
            t[m] = t[m] + np.einsum("nij,nj->ni", Rm, dt)
            R[m] = Rm @ dR
        m = self.pt_off >= 0
        if m.any():
            p[m] = p[m] + dx[self.pt_off[m, None] + np.arange(3)]
        return R, t, p

    def set_state(self, state):
        self.R, self.t, self.p = state

    def write_back(self):
        poses = geo.unstack(self.R, self.t)
        for nid, pose in zip(self.se3_ids, poses):
            if nid in self.offsets:
                self.graph.nodes[nid].estimate = pose
        for k, nid in enumerate(self.pt_ids):
            if nid in self.offsets:
                self.graph.nodes[nid].estimate = _as_point(self.p[k])


# ---------------------------------------------------------------------------
# plain-text dump
# ---------------------------------------------------------------------------

_UPPER6 = np.triu_indices(6)
_UPPER3 = np.triu_indices(3)


def _f(x):
    return repr(float(x))


def _pose_fields(p: Pose):
    return [_f(v) for v in p.to_array()]


def _info_fields(info):
    iu = _UPPER6 if info.shape[0] == 6 else _UPPER3
    return [_f(v) for v in info[iu]]


def dump_graph(graph: Graph) -> str:
    """Serialize ``graph`` to the line-oriented text format.

    Floats use the shortest decimal that round-trips (``repr``).
    """
    lines = []
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        tail = ["FIXED"] if n.fixed else []
        if isinstance(n, PoseNode):
            lines.append(" ".join(["POSE", str(nid), _f(n.stamp)] + _pose_fields(n.estimate) + tail))
        elif n.kind == "pose":
            lines.append(" ".join(["LANDMARK_SE3", str(nid), str(n.semantic_id)]
                                  + _pose_fields(n.estimate) + tail))
        else:
            lines.append(" ".join(["LANDMARK_XYZ", str(nid), str(n.semantic_id)]
                                  + [_f(v) for v in n.estimate] + tail))
    for e in graph.edges:
        if isinstance(e, OdometryEdge):
            head = ["EDGE_ODOM", str(e.source), str(e.target)]
        elif isinstance(e, DetectionEdge):
            head = ["EDGE_DET_SE3" if e.kind == "pose" else "EDGE_DET_XYZ", str(e.pose), str(e.landmark)]
        else:
            head = ["EDGE_PRIOR_SE3" if isinstance(e.measurement, Pose) else "EDGE_PRIOR_XYZ", str(e.node)]
        meas = (_pose_fields(e.measurement) if isinstance(e.measurement, Pose)
                else [_f(v) for v in e.measurement])
        lines.append(" ".join(head + meas + _info_fields(e.information)))
    return "\n".join(lines) + "\n"


def _info_from(vals, dim):
    iu = _UPPER6 if dim == 6 else _UPPER3
    m = np.zeros((dim, dim))
    m[iu] = vals
    return m + np.triu(m, 1).T


def _semantic(tok):
    try:
        return int(tok)
    except ValueError:
        return tok


def parse_graph(text: str) -> Graph:
    """Inverse of :func:`dump_graph`; raises ``ValueError`` with the line number."""
    g = Graph()
    pending = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            tag = tok[0]
            if tag == "POSE":
                fixed = tok[-1] == "FIXED"
                vals = [float(v) for v in tok[3:10]]
                g._insert(PoseNode(int(tok[1]), Pose.from_array(vals), fixed, float(tok[2])))
            elif tag == "LANDMARK_SE3":
                fixed = tok[-1] == "FIXED"
                vals = [float(v) for v in tok[3:10]]
                g._insert(LandmarkNode(int(tok[1]), Pose.from_array(vals), _semantic(tok[2]), fixed))
            elif tag == "LANDMARK_XYZ":
                fixed = tok[-1] == "FIXED"
                g._insert(LandmarkNode(int(tok[1]), _as_point([float(v) for v in tok[3:6]]),
                                       _semantic(tok[2]), fixed))
            elif tag in ("EDGE_ODOM", "EDGE_DET_SE3"):
                ids = int(tok[1]), int(tok[2])
                vals = [float(v) for v in tok[3:]]
                if len(vals) != 28:
                    raise ValueError(f"expected 28 floats, got {len(vals)}")
                pending.append((tag, ids, Pose.from_array(vals[:7]), _info_from(vals[7:], 6)))
            elif tag == "EDGE_DET_XYZ":
                ids = int(tok[1]), int(tok[2])
                vals = [float(v) for v in tok[3:]]
                if len(vals) != 9:
                    raise ValueError(f"expected 9 floats, got {len(vals)}")
                pending.append((tag, ids, np.array(vals[:3]), _info_from(vals[3:], 3)))
            elif tag == "EDGE_PRIOR_SE3":
                vals = [float(v) for v in tok[2:]]
                if len(vals) != 28:
                    raise ValueError(f"expected 28 floats, got {len(vals)}")
                pending.append((tag, (int(tok[1]),), Pose.from_array(vals[:7]), _info_from(vals[7:], 6)))
            elif tag == "EDGE_PRIOR_XYZ":
                vals = [float(v) for v in tok[2:]]
                if len(vals) != 9:
                    raise ValueError(f"expected 9 floats, got {len(vals)}")
                pending.append((tag, (int(tok[1]),), np.array(vals[:3]), _info_from(vals[3:], 3)))
            else:
                raise ValueError(f"unknown record {tag!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    for tag, ids, meas, info in pending:
        if tag == "EDGE_ODOM":
            g.add_odometry_edge(*ids, meas, info)
        elif tag.startswith("EDGE_DET"):
            g.add_detection_edge(*ids, meas, info)
        else:
            g.add_prior_edge(*ids, meas, info)
    return g
