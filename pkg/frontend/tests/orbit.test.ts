import { describe, expect, it } from "vitest";

import {
  applyDrag,
  lookAtPose,
  orbitFromCamera,
  orbitPose,
  orbitPosition,
  poseParam,
  OrbitState,
} from "../src/orbit.js";

function rotOf(pose: number[]): number[][] {
  return [
    [pose[0], pose[1], pose[2]],
    [pose[4], pose[5], pose[6]],
    [pose[8], pose[9], pose[10]],
  ];
}

describe("lookAtPose", () => {
  it("produces an orthonormal rotation", () => {
    const pose = lookAtPose([3, 2, -5], [0, 0, 0]);
    const r = rotOf(pose);
    for (let i = 0; i < 3; i++) {
      for (let j = 0; j < 3; j++) {
        const dot = r[i][0] * r[j][0] + r[i][1] * r[j][1] + r[i][2] * r[j][2];
        expect(dot).toBeCloseTo(i === j ? 1 : 0, 10);
      }
    }
  });

  it("camera on -z axis looking at origin has +z forward", () => {
    const pose = lookAtPose([0, 0, -4], [0, 0, 0]);
    // forward row maps world +z to camera +z
    expect(pose[8]).toBeCloseTo(0, 12);
    expect(pose[9]).toBeCloseTo(0, 12);
    expect(pose[10]).toBeCloseTo(1, 12);
    // translation puts the camera 4 units in front: t_z = -fwd . p = 4
    expect(pose[11]).toBeCloseTo(4, 12);
  });

  it("round-trips through orbitFromCamera", () => {
    const state: OrbitState = {
      target: [0, 0, 0],
      radius: 6,
      azimuth: 0.8,
      elevation: 0.3,
    };
    const pose = orbitPose(state);
    const back = orbitFromCamera(pose, [0, 0, 0]);
    expect(back.radius).toBeCloseTo(6, 9);
    expect(back.azimuth).toBeCloseTo(0.8, 9);
    expect(back.elevation).toBeCloseTo(0.3, 9);
  });
});

describe("orbit interaction", () => {
  it("drag changes azimuth and clamps elevation at the poles", () => {
    let state: OrbitState = { target: [0, 0, 0], radius: 5, azimuth: 0, elevation: 0 };
    state = applyDrag(state, 50, 10);
    expect(state.azimuth).toBeCloseTo(0.5, 10);
    expect(state.elevation).toBeCloseTo(0.1, 10);
    state = applyDrag(state, 0, 10_000);
    expect(state.elevation).toBeLessThan(Math.PI / 2);
  });

  it("identity drag re-requests the identical pose string", () => {
    const state: OrbitState = { target: [0, 0, 0], radius: 5, azimuth: 0.4, elevation: 0.2 };
    const before = poseParam(orbitPose(state));
    const after = poseParam(orbitPose(applyDrag(state, 0, 0)));
    expect(after).toBe(before);
  });

  it("positions lie on the orbit sphere", () => {
    const state: OrbitState = { target: [1, -2, 3], radius: 7, azimuth: 2.1, elevation: -0.5 };
    const p = orbitPosition(state);
    const d = Math.hypot(p[0] - 1, p[1] + 2, p[2] - 3);
    expect(d).toBeCloseTo(7, 10);
  });
});
