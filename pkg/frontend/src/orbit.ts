/**
 * Orbit camera state and the row-major 3x4 world-to-camera pose the
 * render endpoint consumes. The math mirrors the server's look-at
 * convention (+z forward, +y down in camera frame, world up +y).
 */

export interface OrbitState {
  target: [number, number, number];
  radius: number;
  azimuth: number; // radians around world +y
  elevation: number; // radians above the equator
}

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]);
  return [a[0] / n, a[1] / n, a[2] / n];
}

export function orbitPosition(state: OrbitState): Vec3 {
  const { target, radius, azimuth, elevation } = state;
  return [
    target[0] + radius * Math.cos(azimuth) * Math.cos(elevation),
    target[1] + radius * Math.sin(elevation),
    target[2] + radius * Math.sin(azimuth) * Math.cos(elevation),
  ];
}

/** Row-major [R | t] with R rows (right, down, forward), t = -R p. */
export function lookAtPose(position: Vec3, target: Vec3, up: Vec3 = [0, 1, 0]): number[] {
  const fwd = normalize(sub(target, position));
  const right = normalize(cross(fwd, normalize(up)));
  const down = cross(fwd, right);
  const rows = [right, down, fwd];
  const t = rows.map((r) => -(r[0] * position[0] + r[1] * position[1] + r[2] * position[2]));
  const out: number[] = [];
  for (let i = 0; i < 3; i++) {
    out.push(rows[i][0], rows[i][1], rows[i][2], t[i]);
  }
  return out;
}

export function orbitPose(state: OrbitState): number[] {
  return lookAtPose(orbitPosition(state), state.target);
}

/** Drag deltas in pixels -> azimuth/elevation steps, clamped at the poles. */
export function applyDrag(state: OrbitState, dxPx: number, dyPx: number): OrbitState {
  const k = 0.01;
  const maxElev = Math.PI / 2 - 0.05;
  return {
    ...state,
    azimuth: state.azimuth + k * dxPx,
    elevation: Math.min(maxElev, Math.max(-maxElev, state.elevation + k * dyPx)),
  };
}

/** The wire format: 12 comma-separated numbers. */
export function poseParam(pose: number[]): string {
  return pose.map((x) => String(x)).join(",");
}

/** Initial orbit matching a listed view's camera pose (approximately). */
export function orbitFromCamera(pose: number[], target: Vec3): OrbitState {
  // camera center = -R^T t
  const r = [
    [pose[0], pose[1], pose[2]],
    [pose[4], pose[5], pose[6]],
    [pose[8], pose[9], pose[10]],
  ];
  const t = [pose[3], pose[7], pose[11]];
  const c: Vec3 = [0, 1, 2].map(
    (i) => -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]),
  ) as Vec3;
  const d = sub(c, target);
  const radius = Math.hypot(d[0], d[1], d[2]);
  return {
    target,
    radius,
    azimuth: Math.atan2(d[2], d[0]),
    elevation: Math.asin(d[1] / radius),
  };
}
