"""2D room geometry: colored wall segments, raycasting, and the built-in layouts.

A world is a flat list of colored line segments inside an axis-aligned bounding
rectangle, plus a rectangular spawn region and one or more target points.
Rays and collision queries are vectorized over segments with plain numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, ContractViolation

# all built-in rooms share these palette entries
GRAY = (0.6, 0.6, 0.6)
RED = (0.85, 0.1, 0.1)
GREEN = (0.1, 0.8, 0.15)
BLUE = (0.15, 0.2, 0.9)
YELLOW = (0.9, 0.85, 0.1)
MAGENTA = (0.8, 0.15, 0.8)
CYAN = (0.1, 0.75, 0.8)
ORANGE = (0.95, 0.55, 0.1)
PURPLE = (0.5, 0.15, 0.7)
LIME = (0.6, 0.9, 0.2)
TEAL = (0.05, 0.45, 0.45)
PINK = (0.95, 0.6, 0.75)
# muted bases reserved for shaded (textured) walls
BROWN = (0.65, 0.45, 0.25)
NAVY = (0.25, 0.4, 0.65)
FOREST = (0.25, 0.55, 0.3)
MAUVE = (0.6, 0.35, 0.55)

LAYOUT_IDS = ("Env1", "Env2", "Env3", "Env4", "Env5")


@dataclass
class WorldMap:
    layout_id: str
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    segments: np.ndarray  # (S, 4) rows x1 y1 x2 y2
    colors: np.ndarray  # (S, 3) rgb in [0, 1]
    spawn: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    targets: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.segments) != len(self.colors):
            raise ContractViolation("segment/color count mismatch")


@njit(cache=True)
def _raycast_kernel(ox, oy, angles, seg, max_range):
    n = angles.shape[0]
    n_seg = seg.shape[0]
    ranges = np.empty(n)
    hit_idx = np.full(n, -1, dtype=np.int64)
    for b in range(n):
        rx = math.cos(angles[b])
        ry = math.sin(angles[b])
        best_t = np.inf
        best = -1
        for s in range(n_seg):
            sx = seg[s, 2] - seg[s, 0]
            sy = seg[s, 3] - seg[s, 1]
            denom = rx * sy - ry * sx
            if abs(denom) <= 1e-12:
                continue  # parallel (or degenerate wall): no hit
            relx = seg[s, 0] - ox
            rely = seg[s, 1] - oy
            t = (relx * sy - rely * sx) / denom
            if t <= 1e-9 or t >= best_t:
                continue
            u = (relx * ry - rely * rx) / denom
            if u < 0.0 or u > 1.0:
                continue
            best_t = t
            best = s
        if best_t <= max_range:
            ranges[b] = best_t
            hit_idx[b] = best
        else:
            ranges[b] = max_range
    return ranges, hit_idx


def raycast_batch(
    wm: WorldMap, origin, angles: np.ndarray, max_range: float
) -> tuple[np.ndarray, np.ndarray]:
    """Cast one ray per angle from a shared origin.

    Returns (ranges, hit_index): ranges clamped to max_range, hit_index is the
    row of the nearest intersected segment or -1 when nothing lies within
    max_range.  Solves o + t*r = p + u*(q-p) for t >= 0, u in [0, 1].
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    if len(wm.segments) == 0:
        return np.full(len(angles), max_range), np.full(len(angles), -1, dtype=np.int64)
    return _raycast_kernel(float(origin[0]), float(origin[1]), angles, wm.segments, float(max_range))


def ray_cast(wm: WorldMap, origin, direction: float, max_range: float):
    """Single ray: (range clamped to max_range, hit color or None)."""
    ranges, idx = raycast_batch(wm, origin, np.array([direction]), max_range)
    color = None if idx[0] < 0 else tuple(wm.colors[idx[0]])
    return float(ranges[0]), color


def lidar_scan(wm: WorldMap, pose, n_beams: int, max_range: float) -> np.ndarray:
    """360-degree range scan; beam k points at theta + 2*pi*k/n_beams."""
    x, y, theta = pose
    angles = theta + 2.0 * np.pi * np.arange(n_beams) / n_beams
    ranges, _ = raycast_batch(wm, (x, y), angles, max_range)
    return ranges


def camera_angles(theta: float, n_px: int, fov: float) -> np.ndarray:
    """Pixel-center directions, leftmost pixel first (positive relative angle)."""
    rel = fov / 2.0 - fov * (np.arange(n_px) + 0.5) / n_px
    return theta + rel


def camera_render(
    wm: WorldMap, pose, n_px: int, fov: float, max_range: float
) -> np.ndarray:
    """(n_px, 3) color strip; black where no wall lies within max_range."""
    x, y, theta = pose
    angles = camera_angles(theta, n_px, fov)
    _, idx = raycast_batch(wm, (x, y), angles, max_range)
    out = np.zeros((n_px, 3))
    hit = idx >= 0
    out[hit] = wm.colors[idx[hit]]
    return out


# -- collision geometry ----------------------------------------------------


def point_segment_dist(px: float, py: float, seg: np.ndarray) -> np.ndarray:
    """Distance from a point to each segment row (S, 4)."""
    ax, ay, bx, by = seg[:, 0], seg[:, 1], seg[:, 2], seg[:, 3]
    dx, dy = bx - ax, by - ay
    length_sq = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((px - ax) * dx + (py - ay) * dy) / length_sq
    t = np.where(length_sq > 0, np.clip(t, 0.0, 1.0), 0.0)
    cx, cy = ax + t * dx, ay + t * dy
    return np.hypot(px - cx, py - cy)


def _segments_intersect(p1, p2, seg: np.ndarray) -> np.ndarray:
    """Boolean per wall row: does open segment p1-p2 properly cross it?"""
    d1x, d1y = p2[0] - p1[0], p2[1] - p1[1]
    ax, ay = seg[:, 0], seg[:, 1]
    sx, sy = seg[:, 2] - ax, seg[:, 3] - ay
    denom = d1x * sy - d1y * sx
    relx, rely = ax - p1[0], ay - p1[1]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = (relx * sy - rely * sx) / denom
        u = (relx * d1y - rely * d1x) / denom
    return (np.abs(denom) > 1e-12) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)


def sweep_min_dist(p1, p2, seg: np.ndarray) -> np.ndarray:
    """Minimum distance between path segment p1-p2 and each wall segment.

    Zero if they cross; otherwise the smallest of the four endpoint-to-segment
    distances (exact for non-crossing segment pairs).
    """
    if len(seg) == 0:
        return np.array([])
    d = np.minimum(
        np.minimum(
            point_segment_dist(p1[0], p1[1], seg),
            point_segment_dist(p2[0], p2[1], seg),
        ),
        np.minimum(
            _endpoint_to_path(p1, p2, seg[:, 0], seg[:, 1]),
            _endpoint_to_path(p1, p2, seg[:, 2], seg[:, 3]),
        ),
    )
    return np.where(_segments_intersect(p1, p2, seg), 0.0, d)


def _endpoint_to_path(p1, p2, qx, qy):
    dx, dy = p2[0] - p1[0], p2[1] - p1[1]
    length_sq = dx * dx + dy * dy
    if length_sq == 0:
        return np.hypot(qx - p1[0], qy - p1[1])
    t = np.clip(((qx - p1[0]) * dx + (qy - p1[1]) * dy) / length_sq, 0.0, 1.0)
    return np.hypot(qx - (p1[0] + t * dx), qy - (p1[1] + t * dy))


@njit(cache=True)
def _pt_seg_dist(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    length_sq = dx * dx + dy * dy
    if length_sq <= 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / length_sq
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


@njit(cache=True)
def _sweep_kernel(p1x, p1y, p2x, p2y, seg):
    """Scalar min distance between the path segment and all wall segments."""
    best = np.inf
    d1x = p2x - p1x
    d1y = p2y - p1y
    for s in range(seg.shape[0]):
        ax, ay, bx, by = seg[s, 0], seg[s, 1], seg[s, 2], seg[s, 3]
        sx = bx - ax
        sy = by - ay
        denom = d1x * sy - d1y * sx
        if abs(denom) > 1e-12:
            relx = ax - p1x
            rely = ay - p1y
            t = (relx * sy - rely * sx) / denom
            u = (relx * d1y - rely * d1x) / denom
            if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
                return 0.0  # proper crossing
        d = _pt_seg_dist(p1x, p1y, ax, ay, bx, by)
        d = min(d, _pt_seg_dist(p2x, p2y, ax, ay, bx, by))
        d = min(d, _pt_seg_dist(ax, ay, p1x, p1y, p2x, p2y))
        d = min(d, _pt_seg_dist(bx, by, p1x, p1y, p2x, p2y))
        if d < best:
            best = d
    return best


def path_collides(wm: WorldMap, p1, p2, radius: float) -> bool:
    """Swept-circle test: does a disc of given radius moving p1 -> p2 touch a wall?"""
    if len(wm.segments) == 0:
        return False
    return bool(
        _sweep_kernel(float(p1[0]), float(p1[1]), float(p2[0]), float(p2[1]), wm.segments)
        < radius
    )


def point_clear(wm: WorldMap, p, radius: float) -> bool:
    """Is a disc at p free of every wall?"""
    d = point_segment_dist(p[0], p[1], wm.segments)
    return bool(len(d) == 0 or np.min(d) >= radius)


def segment_blocked(wm: WorldMap, p1, p2) -> bool:
    """Does the straight segment p1 -> p2 cross any wall?"""
    return bool(np.any(_segments_intersect(p1, p2, wm.segments)))


def point_in_free_interior(wm: WorldMap, p) -> bool:
    """Is p inside the room but outside every closed obstacle loop?

    Crossing parity against all walls: a segment from p to a point well
    outside the room crosses the outer boundary once; from inside an
    obstacle box it additionally crosses the box boundary, flipping the
    parity back to even.  The anchor is offset at an irregular angle so the
    test segment cannot run along a wall.
    """
    x0, y0, _, _ = wm.bounds
    anchor = (x0 - 1.2345, float(p[1]) + 0.67891)
    crossings = int(np.count_nonzero(_segments_intersect(p, anchor, wm.segments)))
    return crossings % 2 == 1


# -- built-in layouts ------------------------------------------------------


def _rect_walls(x0, y0, x1, y1):
    return [
        (x0, y0, x1, y0),  # bottom
        (x1, y0, x1, y1),  # right
        (x1, y1, x0, y1),  # top
        (x0, y1, x0, y0),  # left
    ]


def _split_walls(walls, colors):
    """Halve each wall, alternating the two colors: a coarse stripe texture."""
    seg, col = [], []
    for (x0, y0, x1, y1), flip in zip(walls, range(len(walls))):
        mx, my = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        seg.append((x0, y0, mx, my))
        col.append(colors[flip % 2])
        seg.append((mx, my, x1, y1))
        col.append(colors[(flip + 1) % 2])
    return seg, col


def _shaded_walls(walls, bases, shades=(0.55, 0.8, 1.0, 0.7)):
    """Quarter each wall and shade its base color piecewise.

    Hue identifies the wall, brightness the position along it, so a color
    strip glimpse pins the camera pose the way room texture does for a real
    camera.  A single uniform color would leave the square rotationally
    ambiguous to both sensors.
    """
    seg, col = [], []
    for (x0, y0, x1, y1), base in zip(walls, bases):
        k = len(shades)
        for j, shade in enumerate(shades):
            ax, ay = x0 + (x1 - x0) * j / k, y0 + (y1 - y0) * j / k
            bx, by = x0 + (x1 - x0) * (j + 1) / k, y0 + (y1 - y0) * (j + 1) / k
            seg.append((ax, ay, bx, by))
            col.append(tuple(c * shade for c in base))
    return seg, col


def _thin_slab(ax, ay, bx, by, half_t):
    """Closed 4-segment loop around the segment a-b: a wall of finite
    thickness.  Obstacles must be closed loops so the crossing-parity rule
    in point_in_free_interior stays valid."""
    dx, dy = bx - ax, by - ay
    length = float(np.hypot(dx, dy))
    nx, ny = -dy / length * half_t, dx / length * half_t
    return [
        (ax + nx, ay + ny, bx + nx, by + ny),
        (bx + nx, by + ny, bx - nx, by - ny),
        (bx - nx, by - ny, ax - nx, ay - ny),
        (ax - nx, ay - ny, ax + nx, ay + ny),
    ]


def make_layout(layout_id: str) -> WorldMap:
    """One of the five built-in rooms.

    Env1: 4x4 square, shaded-texture walls.
    Env2: the same square with four distinct solid wall colors.
    Env3: 4x4 square, uniform color, plus a thin diagonal barrier that
          shields the first target and breaks the square's symmetry.
    Env4: 5x3 rectangle, four distinct wall colors.
    Env5: 5x3 rectangle with two-color striped walls.
    """
    # Spawn coverage is matched to what the sensors can disambiguate: rooms
    # whose appearance or geometry pins the pose globally (textures in Env1,
    # wall colors in Env2/4/5, the asymmetric obstacle in Env3) spawn over
    # the whole floor, except Env1, which keeps a fixed corner start so its
    # runs share a common approach route for representation analysis.
    if layout_id in ("Env1", "Env2", "Env3"):
        bounds = (0.0, 0.0, 4.0, 4.0)
        walls = _rect_walls(*bounds)
        targets = [(3.25, 3.25), (3.25, 0.75)]
        if layout_id == "Env1":
            walls, colors = _shaded_walls(walls, [BROWN, NAVY, FOREST, MAUVE])
            spawn = (0.5, 0.5, 1.0, 1.0)
        else:
            colors = (
                [RED, GREEN, BLUE, YELLOW] if layout_id == "Env2" else [GRAY] * 4
            )
            spawn = (0.35, 0.35, 3.65, 3.65)
        if layout_id == "Env3":
            # thin diagonal barrier across the lower-left approach cone to
            # the first target: straight-line descent on distance fails from
            # much of the floor, both barrier ends leave wide passages, and
            # the off-center slab breaks the square's rotational ambiguity
            walls += _thin_slab(1.7, 3.0, 3.0, 1.7, 0.03)
            colors += [GRAY] * 4
    elif layout_id in ("Env4", "Env5"):
        bounds = (0.0, 0.0, 5.0, 3.0)
        walls = _rect_walls(*bounds)
        spawn = (0.35, 0.35, 4.65, 2.65)
        targets = [(4.25, 2.25), (4.25, 0.75)]
        if layout_id == "Env4":
            colors = [CYAN, ORANGE, PURPLE, LIME]
        else:
            walls, colors = _split_walls(walls, [TEAL, PINK])
    else:
        raise ConfigError(f"unknown layout {layout_id!r}; expected one of {LAYOUT_IDS}")
    return WorldMap(layout_id, bounds, np.array(walls), np.array(colors), spawn, targets)


# -- layout files ----------------------------------------------------------


def layout_to_text(wm: WorldMap) -> str:
    lines = [
        f"layout: {wm.layout_id}",
        "bounds: " + " ".join(repr(float(v)) for v in wm.bounds),
        "spawn: " + " ".join(repr(float(v)) for v in wm.spawn),
    ]
    for tx, ty in wm.targets:
        lines.append(f"target: {float(tx)!r} {float(ty)!r}")
    for s, c in zip(wm.segments, wm.colors):
        vals = " ".join(repr(float(v)) for v in list(s) + list(c))
        lines.append(f"wall: {vals}")
    return "\n".join(lines) + "\n"


def layout_from_text(text: str) -> WorldMap:
    layout_id = None
    bounds = spawn = None
    targets, segs, cols = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigError(f"layout line {lineno}: expected 'key: values'")
        key, _, rest = line.partition(":")
        key = key.strip()
        parts = rest.split()
        try:
            if key == "layout":
                layout_id = rest.strip()
            elif key == "bounds":
                bounds = tuple(float(v) for v in parts)
                if len(bounds) != 4:
                    raise ValueError("need 4 values")
            elif key == "spawn":
                spawn = tuple(float(v) for v in parts)
                if len(spawn) != 4:
                    raise ValueError("need 4 values")
            elif key == "target":
                if len(parts) != 2:
                    raise ValueError("need 2 values")
                targets.append((float(parts[0]), float(parts[1])))
            elif key == "wall":
                vals = [float(v) for v in parts]
                if len(vals) != 7:
                    raise ValueError("need x1 y1 x2 y2 r g b")
                segs.append(vals[:4])
                cols.append(vals[4:])
            else:
                raise ConfigError(f"layout line {lineno}: unknown key {key!r}")
        except ValueError as e:
            raise ConfigError(f"layout line {lineno}: {e}") from e
    if layout_id is None or bounds is None or spawn is None:
        raise ConfigError("layout file must define layout, bounds, and spawn")
    if not segs:
        raise ConfigError("layout file defines no walls")
    if not targets:
        raise ConfigError("layout file defines no targets")
    return WorldMap(layout_id, bounds, np.array(segs), np.array(cols), spawn, targets)


def save_layout(wm: WorldMap, path) -> None:
    with open(path, "w") as fh:
        fh.write(layout_to_text(wm))


def load_layout(path) -> WorldMap:
    with open(path) as fh:
        return layout_from_text(fh.read())
