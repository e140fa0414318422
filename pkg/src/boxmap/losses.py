"""TSDF-, box- and gate-based losses with analytic subgradients.

Every loss returns ``(value, Grad)``; gradients are taken with respect to the
room parameters (x0, y0, x1, y1, q) and door parameters (cx, cy, s, q).  At
ties of min/max/ReLU the first-listed argument supplies the subgradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .boxcalc import BoxSet, shift_boxes
from .gridworld import TsdfGrid

WALL_BAND = 1.0
ROOM_PARAMS = ("x0", "y0", "x1", "y1", "q")
DOOR_PARAMS = ("cx", "cy", "s", "q")


@dataclass
class Grad:
    rooms: np.ndarray
    doors: np.ndarray

    @classmethod
    def zeros(cls, n_rooms: int, n_doors: int) -> Grad:
        return cls(np.zeros((n_rooms, 5)), np.zeros((n_doors, 4)))

    def __add__(self, other: Grad) -> Grad:
        return Grad(self.rooms + other.rooms, self.doors + other.doors)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rooms.ravel(), self.doors.ravel()])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.rooms).all() and np.isfinite(self.doors).all())


@dataclass
class LossReport:
    l_tsdf: float
    l_tsdf_W: float
    l_door: float
    l_iou: float
    l_gate: float
    total: float
    grad: Grad = field(repr=False)

    def to_dict(self, with_grad: bool = False) -> dict:
        d = {k: getattr(self, k) for k in ("l_tsdf", "l_tsdf_W", "l_door", "l_iou", "l_gate", "total")}
        if with_grad:
            d["grad"] = {"rooms": self.grad.rooms.tolist(), "doors": self.grad.doors.tolist()}
        return d

    def to_json(self, with_grad: bool = False) -> str:
        return json.dumps(self.to_dict(with_grad))


@dataclass
class BoxParams:
    """Array view of a BoxSet: rooms (M, 5), doors (D, 4) and door room pairs.

    Unlike BoxSet it is not validated, so optimisers and finite differences
    may step through degenerate boxes.
    """

    rooms: np.ndarray
    doors: np.ndarray
    pairs: np.ndarray
    M: int | None = None

    @classmethod
    def of(cls, boxes: BoxSet | BoxParams) -> BoxParams:
        if isinstance(boxes, BoxParams):
            return boxes
        return cls(boxes.room_array(), boxes.door_array(), boxes.door_pairs(), boxes.M)

    def copy(self) -> BoxParams:
        return BoxParams(self.rooms.copy(), self.doors.copy(), self.pairs.copy(), self.M)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rooms.ravel(), self.doors.ravel()])

    def with_vector(self, theta: np.ndarray) -> BoxParams:
        m, d = len(self.rooms), len(self.doors)
        return BoxParams(theta[:5 * m].reshape(m, 5).copy(), theta[5 * m:5 * m + 4 * d].reshape(d, 4).copy(),
                         self.pairs, self.M)

    def stacked(self, doors: bool = True) -> np.ndarray:
        parts = [self.rooms.reshape(-1, 5)]
        if doors and len(self.doors):
            d = self.doors
            h = d[:, 2:3] / 2
            parts.append(np.hstack([d[:, 0:1] - h, d[:, 1:2] - h, d[:, 0:1] + h, d[:, 1:2] + h, d[:, 3:4]]))
        return np.ascontiguousarray(np.vstack(parts))

    def to_boxset(self) -> BoxSet:
        return BoxSet.from_arrays(self.rooms, self.doors, self.pairs, self.M)


def pack(boxes: BoxSet | BoxParams) -> np.ndarray:
    """Flatten room then door parameters into one vector."""
    return BoxParams.of(boxes).vector()


def unpack(theta: np.ndarray, like: BoxSet | BoxParams) -> BoxParams:
    return BoxParams.of(like).with_vector(theta)


# --- field helpers ----------------------------------------------------------

def _field(p: BoxParams, truth: TsdfGrid, doors: bool):
    arr = shift_boxes(p.stacked(doors), truth.frame)
    out = kernels.box_field(arr, truth.height, truth.width, float(truth.gamma))
    return arr, out


def _field_backward(arr, out, grad_value, gamma, n_rooms, n_doors) -> Grad:
    value, winner, term, lin, fw = out
    g = kernels.box_field_backward(arr, winner, term, lin, fw, np.ascontiguousarray(grad_value), float(gamma))
    rooms = g[:n_rooms].copy()
    doors = np.zeros((n_doors, 4))
    if arr.shape[0] > n_rooms:
        sq = g[n_rooms:]
        doors[:, 0] = sq[:, 0] + sq[:, 2]
        doors[:, 1] = sq[:, 1] + sq[:, 3]
        doors[:, 2] = 0.5 * (sq[:, 2] + sq[:, 3] - sq[:, 0] - sq[:, 1])
        doors[:, 3] = sq[:, 4]
    return Grad(rooms, doors)


# --- map-based losses -------------------------------------------------------

def loss_tsdf(pred: BoxSet | BoxParams, truth: TsdfGrid) -> tuple[float, Grad]:
    """Mean squared difference between the predicted composite and the truth."""
    return _masked_l2(pred, truth, None)


def loss_tsdf_wall(pred: BoxSet | BoxParams, truth: TsdfGrid, wall: np.ndarray | None = None) -> tuple[float, Grad]:
    """Squared error summed over wall pixels, still normalised by the total pixel count."""
    if wall is None:
        wall = truth.wall_mask()
    return _masked_l2(pred, truth, np.asarray(wall, dtype=bool))


def _masked_l2(pred, truth, mask):
    pred = BoxParams.of(pred)
    n_rooms, n_doors = len(pred.rooms), len(pred.doors)
    arr, out = _field(pred, truth, doors=True)
    diff = truth.values - out[0]
    if mask is not None:
        diff = np.where(mask, diff, 0.0)
    P = diff.size
    value = float(np.sum(diff * diff) / P)
    grad = _field_backward(arr, out, -2.0 * diff / P, truth.gamma, n_rooms, n_doors)
    return value, grad


def _diamonds(doors: np.ndarray, shape, frame):
    """Stack of gated door diamonds plus the winning door per cell."""
    h, w = shape
    n = doors.shape[0]
    if n == 0:
        return None
    xs = np.arange(w, dtype=np.float64)[None, None, :]
    ys = np.arange(h, dtype=np.float64)[None, :, None]
    cx = doors[:, 0, None, None] - frame.col0
    cy = doors[:, 1, None, None] - frame.row0
    s = doors[:, 2, None, None]
    q = doors[:, 3, None, None]
    dxs = xs - cx
    dys = ys - cy
    arg = s / 2 - (np.abs(dxs) + np.abs(dys))
    act = arg > 0
    relu_v = np.where(act, arg, 0.0)
    gated = q * relu_v
    win = np.argmax(gated, axis=0)
    pick = win[None]
    take = lambda a: np.take_along_axis(np.broadcast_to(a, (n, h, w)), pick, axis=0)[0]
    return {
        "value": take(gated),
        "winner": win,
        "active": take(act),
        "relu": take(relu_v),
        "sx": take(np.sign(dxs)),
        "sy": take(np.sign(dys)),
    }


def door_target(pred: BoxSet | BoxParams, truth: TsdfGrid, wall_band: float = WALL_BAND, input_walls=None):
    """Truth minus the rooms-only composite, and the emphasis mask around walls."""
    arr, out = _field(BoxParams.of(pred), truth, doors=False)
    rooms_only = out[0]
    target = truth.values - rooms_only
    if input_walls is None:
        input_walls = truth.wall_mask()
    mask = (np.abs(rooms_only) <= wall_band) | np.asarray(input_walls, dtype=bool)
    return target, mask, arr, out


def loss_door(pred: BoxSet | BoxParams, truth: TsdfGrid, wall_band: float = WALL_BAND, input_walls=None) -> tuple[float, Grad]:
    """Door-highlight residual against the max of gated door diamonds, on the wall band."""
    pred = BoxParams.of(pred)
    n_rooms, n_doors = len(pred.rooms), len(pred.doors)
    target, mask, arr, out = door_target(pred, truth, wall_band, input_walls)
    dia = _diamonds(pred.doors, truth.shape, truth.frame)
    d_hat = dia["value"] if dia is not None else 0.0
    err = np.where(mask, target - d_hat, 0.0)
    P = err.size
    value = float(np.sum(err * err) / P)
    g_pix = -2.0 * err / P  # same for d_hat and the rooms-only composite
    grad = _field_backward(arr, out, g_pix, truth.gamma, n_rooms, 0)
    doors = np.zeros((n_doors, 4))
    if dia is not None:
        win = dia["winner"].ravel()
        gp = g_pix.ravel()
        q = pred.doors[:, 3][win]
        act = dia["active"].ravel()
        gq = gp * q * act
        doors[:, 0] = np.bincount(win, weights=gq * dia["sx"].ravel(), minlength=n_doors)
        doors[:, 1] = np.bincount(win, weights=gq * dia["sy"].ravel(), minlength=n_doors)
        doors[:, 2] = np.bincount(win, weights=0.5 * gq, minlength=n_doors)
        doors[:, 3] = np.bincount(win, weights=gp * dia["relu"].ravel(), minlength=n_doors)
    return value, Grad(grad.rooms, doors)


# --- box-based losses -------------------------------------------------------

def _pair_iou_grad(a: np.ndarray, b: np.ndarray):
    """IoU(a, b) and its gradient w.r.t. a's and b's (x0, y0, x1, y1)."""
    ga = np.zeros(4)
    gb = np.zeros(4)
    # min(a1, b1) and max(a0, b0) with first-argument tie-breaking
    xa1 = a[2] <= b[2]
    ya1 = a[3] <= b[3]
    xa0 = a[0] >= b[0]
    ya0 = a[1] >= b[1]
    iw = (a[2] if xa1 else b[2]) - (a[0] if xa0 else b[0])
    ih = (a[3] if ya1 else b[3]) - (a[1] if ya0 else b[1])
    wa, ha = a[2] - a[0], a[3] - a[1]
    wb, hb = b[2] - b[0], b[3] - b[1]
    area_a, area_b = wa * ha, wb * hb
    if iw <= 0 or ih <= 0:
        return 0.0, ga, gb
    inter = iw * ih
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0, ga, gb
    # d inter
    di_a = np.zeros(4)
    di_b = np.zeros(4)
    (di_a if xa1 else di_b)[2] += ih
    (di_a if xa0 else di_b)[0] -= ih
    (di_a if ya1 else di_b)[3] += iw
    (di_a if ya0 else di_b)[1] -= iw
    darea_a = np.array([-ha, -wa, ha, wa])
    darea_b = np.array([-hb, -wb, hb, wb])
    du_a = darea_a - di_a
    du_b = darea_b - di_b
    ga = (di_a * union - inter * du_a) / union ** 2
    gb = (di_b * union - inter * du_b) / union ** 2
    return inter / union, ga, gb


def loss_iou(pred: BoxSet | BoxParams) -> tuple[float, Grad]:
    """Mean IoU over ordered pairs of distinct active rooms."""
    pred = BoxParams.of(pred)
    rooms = pred.rooms
    n_rooms, n_doors = len(pred.rooms), len(pred.doors)
    grad = np.zeros((n_rooms, 5))
    active = [i for i in range(n_rooms) if rooms[i, 4] > 0.5]
    m = len(active)
    if m < 2:
        return 0.0, Grad(grad, np.zeros((n_doors, 4)))
    total = 0.0
    norm = m * (m - 1)
    for i in active:
        for j in active:
            if i == j:
                continue
            v, ga, gb = _pair_iou_grad(rooms[i, :4], rooms[j, :4])
            total += v
            grad[i, :4] += ga / norm
            grad[j, :4] += gb / norm
    return total / norm, Grad(grad, np.zeros((n_doors, 4)))


def loss_gate(gates) -> tuple[float, np.ndarray]:
    """Bimodal q(1-q) term plus sparsity term q, averaged over gates."""
    q = np.asarray(gates, dtype=np.float64)
    if q.size == 0:
        return 0.0, q.copy()
    value = float(np.sum(q * (1.0 - q) + q) / q.size)
    return value, (2.0 - 2.0 * q) / q.size


# --- combined ----------------------------------------------------------------

ALL_TERMS = ("tsdf", "tsdf_W", "door", "iou", "gate")


def loss_total(pred: BoxSet | BoxParams, truth: TsdfGrid, wall: np.ndarray | None = None, input_walls=None,
               wall_band: float = WALL_BAND, terms=ALL_TERMS) -> LossReport:
    """Sum of the map losses, the pairwise IoU loss and the gate loss."""
    pred = BoxParams.of(pred)
    vals = dict.fromkeys(ALL_TERMS, 0.0)
    grad = Grad.zeros(len(pred.rooms), len(pred.doors))
    if "tsdf" in terms:
        vals["tsdf"], g = loss_tsdf(pred, truth)
        grad = grad + g
    if "tsdf_W" in terms:
        vals["tsdf_W"], g = loss_tsdf_wall(pred, truth, wall)
        grad = grad + g
    if "door" in terms:
        vals["door"], g = loss_door(pred, truth, wall_band, input_walls)
        grad = grad + g
    if "iou" in terms:
        vals["iou"], g = loss_iou(pred)
        grad = grad + g
    if "gate" in terms:
        vals["gate"], gq = loss_gate(pred.rooms[:, 4])
        grad.rooms[:, 4] += gq
    total = vals["tsdf"] + vals["tsdf_W"] + vals["door"] + vals["iou"] + vals["gate"]
    return LossReport(vals["tsdf"], vals["tsdf_W"], vals["door"], vals["iou"], vals["gate"], total, grad)


# --- gradient verification ---------------------------------------------------

def kink_signature(pred: BoxSet | BoxParams, truth: TsdfGrid, wall_band: float = WALL_BAND, input_walls=None) -> list[np.ndarray]:
    """Every discrete choice the losses make (argmin/argmax winners, ReLU
    activity, clamp zones, mask membership, IoU clipping).  Two parameter
    vectors with equal signatures lie in the same smooth piece."""
    pred = BoxParams.of(pred)
    sig = []
    for doors in (True, False):
        _, out = _field(pred, truth, doors)
        value, winner, term, lin, _ = out
        sig += [winner, term, lin]
        if not doors:
            sig += [np.sign(value - wall_band), np.sign(value + wall_band)]
    dia = _diamonds(pred.doors, truth.shape, truth.frame)
    if dia is not None:
        sig += [dia["winner"], dia["active"], dia["sx"], dia["sy"]]
    r = pred.rooms
    if r.shape[0]:
        act = r[:, 4] > 0.5
        sig.append(act)
        for c in range(4):
            sig.append(np.sign(r[:, None, c] - r[None, :, c]))
        # overlap widths along each axis (positive part switch)
        iw = np.minimum(r[:, None, 2], r[None, :, 2]) - np.maximum(r[:, None, 0], r[None, :, 0])
        ih = np.minimum(r[:, None, 3], r[None, :, 3]) - np.maximum(r[:, None, 1], r[None, :, 1])
        sig += [iw > 0, ih > 0]
    return sig


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class GradCheckReport:
    max_rel_err: float
    checked: list[str]
    skipped: list[str]
    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.checked) and self.max_rel_err <= self.tol


def param_names(boxes: BoxSet) -> list[str]:
    p = BoxParams.of(boxes)
    m, d = len(p.rooms), len(p.doors)
    return [f"room{i}.{p}" for i in range(m) for p in ROOM_PARAMS] + [
        f"door{i}.{p}" for i in range(d) for p in DOOR_PARAMS
    ]


def check_gradients(pred: BoxSet | BoxParams, truth: TsdfGrid, h: float = 1e-4, tol: float = 1e-6,
                    terms=ALL_TERMS, floor: float = 1e-3, **kw) -> GradCheckReport:
    """Central differences on every parameter, skipping parameters whose
    +-10h neighbourhood crosses a kink.

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    pred = BoxParams.of(pred)
    theta = pred.vector()
    names = param_names(pred)
    base = loss_total(pred, truth, terms=terms, **kw)
    analytic = base.grad.vector()
    band = kw.get("wall_band", WALL_BAND)
    sig0 = kink_signature(pred, truth, band)
    checked, skipped, errors = [], [], {}
    for k, name in enumerate(names):
        far = []
        for sgn in (-1.0, 1.0):
            t = theta.copy()
            t[k] += sgn * 10 * h
            far.append(kink_signature(pred.with_vector(t), truth, band))
        if not (_same(sig0, far[0]) and _same(sig0, far[1])):
            skipped.append(name)
            continue
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h
        tm[k] -= h
        fp = loss_total(pred.with_vector(tp), truth, terms=terms, **kw).total
        fm = loss_total(pred.with_vector(tm), truth, terms=terms, **kw).total
        num = (fp - fm) / (2 * h)
        err = abs(analytic[k] - num) / max(abs(analytic[k]), abs(num), floor)
        errors[name] = err
        checked.append(name)
    max_err = max(errors.values()) if errors else 0.0
    return GradCheckReport(max_err, checked, skipped, errors, tol)
