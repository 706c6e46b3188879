import { describe, expect, it } from "vitest";

import type { SceneView } from "../src/api.js";
import {
  assign,
  canSubmit,
  duplicateNames,
  isComplete,
  newViewState,
  slotColorClass,
  validationError,
} from "../src/state.js";

const scene: SceneView = {
  movie_id: "m",
  scene_index: 0,
  heading: "INT. SOMEWHERE - DAY",
  utterances: [
    { speaker: "P0", text: "hello", is_background: false },
    { speaker: "P1", text: "hi", is_background: false },
  ],
  candidates: ["EPPS", "GREER", "DODGE"],
  slots: ["P0", "P1"],
};

describe("view state", () => {
  it("submit stays disabled until every slot is assigned", () => {
    let s = newViewState(scene);
    expect(canSubmit(s)).toBe(false);
    s = assign(s, "P0", "EPPS");
    expect(canSubmit(s)).toBe(false);
    s = assign(s, "P1", "GREER");
    expect(canSubmit(s)).toBe(true);
  });

  it("assigning the same name twice is a validation error before any network call", () => {
    let s = newViewState(scene);
    s = assign(s, "P0", "EPPS");
    s = assign(s, "P1", "EPPS");
    expect(isComplete(s)).toBe(true);
    expect(duplicateNames(s)).toEqual(["EPPS"]);
    expect(validationError(s)).toMatch(/once/);
    expect(canSubmit(s)).toBe(false);
  });

  it("rejects names outside the candidate list", () => {
    let s = newViewState(scene);
    s = { ...s, assignments: { P0: "NOBODY", P1: "GREER" } };
    expect(validationError(s)).toMatch(/not a candidate/);
    expect(canSubmit(s)).toBe(false);
  });

  it("clearing an assignment disables submit again", () => {
    let s = newViewState(scene);
    s = assign(s, "P0", "EPPS");
    s = assign(s, "P1", "GREER");
    expect(canSubmit(s)).toBe(true);
    s = assign(s, "P1", "");
    expect(canSubmit(s)).toBe(false);
  });

  it("ignores assignments for unknown slots", () => {
    let s = newViewState(scene);
    s = assign(s, "P4", "EPPS");
    expect(Object.keys(s.assignments)).toHaveLength(0);
  });

  it("no duplicate submit: a submitted state cannot submit again", () => {
    let s = newViewState(scene);
    s = assign(s, "P0", "EPPS");
    s = assign(s, "P1", "GREER");
    s = { ...s, submitted: true };
    expect(canSubmit(s)).toBe(false);
  });

  it("colors are stable per ID", () => {
    expect(slotColorClass("P0")).toBe("pid pid-0");
    expect(slotColorClass("P4")).toBe("pid pid-4");
  });
});
