"""Pinhole camera model, reference runway rasterizer, and the change of coordinates.

Frames: runway (RCF), camera (CCF) and pixel (PCF).  A state is
(theta, x, y, z): pitch, across-runway, altitude and along-runway offsets.
The change of coordinates maps a state to the raw (un-floored) pixel
coordinates of the two endpoints of a runway line plus the cross term
z5 = z1*z4 - z2*z3.

Pixel (i, j), 1 <= i, j <= q, covers [i-1, i] x [j-1, j] in raw pixel
coordinates; i runs along the image x axis.  Image arrays are stored as
``bits[i-1, j-1]`` and flattened in that (i-major) order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class GeometryError(ValueError):
    pass


class BehindCamera(GeometryError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class DegenerateInverse(GeometryError):
    pass


@dataclass(frozen=True)
class AircraftState:
    theta: float
    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.theta, self.x, self.y, self.z])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class RunwaySpec:
    Lx: float = -20.0
    Lz: float = 0.0
    rw: float = 40.0
    rl: float = 3000.0

    def __post_init__(self):
        if not (self.rw > 0 and self.rl > 0):
            raise GeometryError("runway width and length must be positive")

    @property
    def Rx(self):
        return self.Lx + self.rw

    @property
    def Rz(self):
        return self.Lz

    def line(self, which):
        """Start/end points (RCF) of line 'L' or 'R'."""
        x0, z0 = {"L": (self.Lx, self.Lz), "R": (self.Rx, self.Rz)}[which]
        return np.array([x0, 0.0, z0]), np.array([x0, 0.0, z0 + self.rl])

    def line_x(self, which):
        return {"L": self.Lx, "R": self.Rx}[which]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics.  W and H are the sensor size in meters.

    The defaults (f = 0.4 m, sensor 0.08 m) give rho*f = 5q, an 11.4 degree
    field of view: from 200 m to a few km out on a glide slope below about
    5.7 degrees, the runway threshold lands inside the pixel plane [0, q].
    """
    f: float = 0.4
    W: float = 0.08
    H: float = 0.08
    WP: int = 16
    HP: int = 16

    def __post_init__(self):
        if min(self.f, self.W, self.H) <= 0 or min(self.WP, self.HP) <= 0:
            raise GeometryError("camera parameters must be positive")
        if self.WP != self.HP:
            raise GeometryError("only square images are supported (WP == HP)")

    @property
    def q(self):
        return self.WP

    @property
    def u0(self):
        return 0.5 * self.WP

    @property
    def v0(self):
        return 0.5 * self.HP

    @property
    def rho_w(self):
        return self.WP / self.W

    @property
    def rho_h(self):
        return self.HP / self.H

    @property
    def fx(self):
        return self.rho_w * self.f

    @property
    def fy(self):
        return self.rho_h * self.f

    def with_q(self, q):
        return CameraIntrinsics(self.f, self.W, self.H, q, q)


@dataclass(frozen=True)
class ZetaCoords:
    z1: float
    z2: float
    z3: float
    z4: float
    z5: float

    def as_array(self):
        return np.array([self.z1, self.z2, self.z3, self.z4, self.z5])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))

    @classmethod
    def from_endpoints(cls, z1, z2, z3, z4):
        return cls(z1, z2, z3, z4, z1 * z4 - z2 * z3)


@dataclass(frozen=True, eq=False)
class MonoImage:
    q: int
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.shape != (self.q, self.q):
            raise GeometryError(f"image must be {self.q}x{self.q}")
        object.__setattr__(self, "bits", b)

    def __eq__(self, other):
        return isinstance(other, MonoImage) and np.array_equal(self.bits, other.bits)

    def flat(self):
        return self.bits.ravel().astype(np.float64)

    def to_ascii(self, on="#", off="."):
        # one text row per image row j
        return "\n".join("".join(on if self.bits[i, j] else off for i in range(self.q))
                         for j in range(self.q))


# ---------------------------------------------------------------------------
# point projection


def rcf_to_ccf(p, state):
    """Rotate about the x axis by the pitch, then translate by the state offsets."""
    px, py, pz = p
    c, s = math.cos(state.theta), math.sin(state.theta)
    return np.array([px + state.x, c * py + s * pz + state.y, -s * py + c * pz + state.z])


def project_to_pcf(p_ccf, cam):
    """Return (floored pixel pair, raw pixel pair) for a camera-frame point."""
    px, py, pz = (float(v) for v in p_ccf)
    if not pz > 0:
        raise BehindCamera(f"point depth {pz} is not in front of the camera")
    raw = (cam.fx * px / pz + cam.u0, -cam.fy * py / pz + cam.v0)
    return (math.floor(raw[0]), math.floor(raw[1])), raw


def is_visible(raw, cam):
    return 0.0 <= raw[0] < cam.WP and 0.0 <= raw[1] < cam.HP


# ---------------------------------------------------------------------------
# change of coordinates


def _as_states(states):
    if isinstance(states, AircraftState):
        return states.as_array()[None, :], True
    a = np.asarray(states, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    return a, False


def zeta_array(states, runway, cam, which="L"):
    """Vectorised change of coordinates: (n, 4) states -> (n, 5) zeta for one line.

    Raises NonPositiveDepth if either endpoint depth is not positive.
    """
    s, _ = _as_states(states)
    theta, x, y, z = s.T
    c, sn = np.cos(theta), np.sin(theta)
    X = runway.line_x(which) + x
    z_near, z_far = runway.Lz, runway.Lz + runway.rl
    a = z_near * c + z
    b = z_far * c + z
    if np.any(a <= 0) or np.any(b <= 0):
        raise NonPositiveDepth("runway endpoint depth is not positive")
    z1 = cam.fx * X / a + cam.u0
    z2 = -cam.fy * (z_near * sn + y) / a + cam.v0
    z3 = cam.fx * X / b + cam.u0
    z4 = -cam.fy * (z_far * sn + y) / b + cam.v0
    return np.stack([z1, z2, z3, z4, z1 * z4 - z2 * z3], axis=1)


def state_to_zeta(state, runway, cam, which="L"):
    return ZetaCoords.from_array(zeta_array(state, runway, cam, which)[0])


def zeta_to_state(zeta, runway, cam, which="L"):
    """Closed-form inverse of the change of coordinates for one line.

    From z1 and z3 the depths a, b of the two endpoints satisfy
    (z1-u0)*a = (z3-u0)*b and b - a = rl*cos(theta); with the z2/z4
    equations this yields tan(theta), then a, then the offsets.
    """
    z = zeta.as_array() if isinstance(zeta, ZetaCoords) else np.asarray(zeta, dtype=float)
    s1, s3 = z[0] - cam.u0, z[2] - cam.u0
    t2 = -(z[1] - cam.v0) / cam.fy
    t4 = -(z[3] - cam.v0) / cam.fy
    den = s1 - s3
    if den == 0 or abs(den) <= 1e-14 * max(abs(s1), abs(s3), 1.0):
        raise DegenerateInverse("line projects to a vertical point pair (z1 == z3)")
    theta = math.atan((t4 * s1 - t2 * s3) / den)
    c, sn = math.cos(theta), math.sin(theta)
    a = runway.rl * c * s3 / den
    if not a > 0:
        raise DegenerateInverse("recovered depth is not positive")
    X = s1 * a / cam.fx
    return AircraftState(theta=theta, x=X - runway.line_x(which),
                         y=t2 * a - runway.Lz * sn, z=a - runway.Lz * c)


# ---------------------------------------------------------------------------
# reduced (working) coordinates used by the abstraction


@dataclass(frozen=True)
class Geometry:
    """Everything needed to move between states, zeta vectors and images.

    The lateral offset ``x_offset`` is constant along trajectories (the
    dynamics never change it), and ``pitch_sign`` selects the pitch branch
    when reconstructing a state from the three working coordinates
    (z1, z2, z3) of line L, which determine |theta| only.
    """
    runway: RunwaySpec = field(default_factory=RunwaySpec)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    x_offset: float = 0.0
    pitch_sign: int = 1
    lines: tuple = ("L", "R")

    @property
    def q(self):
        return self.camera.q

    @property
    def input_dim(self):
        return 5 * len(self.lines)

    def full_zeta(self, states):
        """(n, 5*lines) network input; line blocks in ``self.lines`` order."""
        s, single = _as_states(states)
        out = np.concatenate([zeta_array(s, self.runway, self.camera, w) for w in self.lines],
                             axis=1)
        return out[0] if single else out

    def working(self, states):
        s, single = _as_states(states)
        out = zeta_array(s, self.runway, self.camera, "L")[:, :3]
        return out[0] if single else out

    def working_checked(self, states):
        """Like ``working`` but returns (w, ok) instead of raising; bad rows are NaN."""
        s, _ = _as_states(states)
        c = np.cos(s[:, 0])
        rw = self.runway
        ok = ((rw.Lz * c + s[:, 3]) > 0) & (((rw.Lz + rw.rl) * c + s[:, 3]) > 0)
        ok &= np.all(np.isfinite(s), axis=1)
        w = np.full((len(s), 3), np.nan)
        if ok.any():
            w[ok] = zeta_array(s[ok], rw, self.camera, "L")[:, :3]
        return w, ok

    def working_to_states(self, w):
        """Invert (z1, z2, z3) -> states, vectorised.

        Returns (states (n, 4), ok mask).  Rows with ok == False have no
        preimage with the configured lateral offset and pitch branch.
        """
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        cam, rw = self.camera, self.runway
        X = rw.Lx + self.x_offset
        s1 = w[:, 0] - cam.u0
        s3 = w[:, 2] - cam.u0
        t2 = -(w[:, 1] - cam.v0) / cam.fy
        with np.errstate(divide="ignore", invalid="ignore"):
            a = cam.fx * X / s1
            b = cam.fx * X / s3
            c = (b - a) / rw.rl
        ok = np.isfinite(a) & np.isfinite(b) & (a > 0) & (b > 0) & (c > 0) & (c <= 1)
        c = np.clip(np.where(ok, c, 1.0), 0.0, 1.0)
        theta = self.pitch_sign * np.arccos(c)
        a = np.where(ok, a, 1.0)
        states = np.stack([theta, np.full_like(theta, self.x_offset),
                           t2 * a - rw.Lz * np.sin(theta), a - rw.Lz * c], axis=1)
        return states, ok

    def working_to_state(self, w):
        states, ok = self.working_to_states(w)
        if not ok[0]:
            raise DegenerateInverse(f"no state with the configured offsets maps to {tuple(w)}")
        return AircraftState.from_array(states[0])

    def segments(self, states):
        """(n, lines, 4) pixel-plane endpoints of each runway line."""
        s, _ = _as_states(states)
        try:
            blocks = [zeta_array(s, self.runway, self.camera, w)[:, :4] for w in self.lines]
        except NonPositiveDepth as exc:
            raise BehindCamera(str(exc)) from None
        return np.stack(blocks, axis=1)

    def margins(self, states):
        """(n, q, q) signed pixel margins of the union of the runway lines."""
        segs = self.segments(states)
        n, nl, _ = segs.shape
        m = _kernels.pixel_margins(segs.reshape(n * nl, 4), self.q).reshape(n, nl, self.q, self.q)
        return m.min(axis=1)

    def render(self, state):
        return render_image_oracle(state, self.runway, self.camera, self.lines)

    def render_batch(self, states):
        return self.margins(states) < 0


def segment_margins(zeta_rows, q):
    """Signed pixel margins for (n, >=4) zeta rows of a single line."""
    z = np.atleast_2d(np.asarray(zeta_rows, dtype=np.float64))[:, :4]
    return _kernels.pixel_margins(z, q)


def render_image_oracle(state, runway, cam, lines=("L", "R")):
    """Reference rasterizer.

    A pixel is lit when a projected runway segment strictly crosses one of
    its four edges (orientation-sign test).  Touching a corner, running
    along an edge, or lying entirely inside one pixel does not light it;
    the perception network follows the same convention.
    """
    s = state.as_array()[None, :] if isinstance(state, AircraftState) else np.atleast_2d(state)
    geo = Geometry(runway=runway, camera=cam, lines=tuple(lines))
    return MonoImage(cam.q, geo.margins(s)[0] < 0)


@dataclass(frozen=True)
class StateDomain:
    """Box of states used for sampling and for the abstraction's pitch range."""
    theta: tuple = (0.0, 0.15)
    y: tuple = (0.0, 300.0)
    z: tuple = (200.0, 3000.0)
    x: tuple = (0.0, 0.0)
    max_slope: float = 0.1

    def sample(self, rng, n):
        """Uniform samples with altitude/distance ratio capped at ``max_slope``."""
        out = np.empty((0, 4))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            s = np.column_stack([rng.uniform(*self.theta, m), rng.uniform(*self.x, m),
                                 rng.uniform(*self.y, m), rng.uniform(*self.z, m)])
            s = s[s[:, 2] <= self.max_slope * s[:, 3]]
            out = np.vstack([out, s])
        return out[:n]

    def contains(self, states):
        s = np.atleast_2d(states)
        return ((s[:, 0] >= self.theta[0]) & (s[:, 0] <= self.theta[1])
                & (s[:, 2] >= self.y[0]) & (s[:, 2] <= self.y[1])
                & (s[:, 3] >= self.z[0]) & (s[:, 3] <= self.z[1]))
