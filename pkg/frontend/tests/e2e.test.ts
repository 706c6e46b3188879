// End-to-end: a scripted session over a 3-scene fixture against the real
// backend, driven through the same client the browser bundle uses.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";

import { GameClient } from "../src/api.js";

const SCRIPT = `INT. LIGHTHOUSE - NIGHT

The lamp turns. Two figures climb the spiral stairs.

                    WINSLOW
          The light has to keep turning, no
          matter what we hear below.

                    EFFIE
          What I hear below is the dinghy
          coming loose again.

INT. LIGHTHOUSE - LAMP ROOM - NIGHT

Brass and glass. The storm rattles the panes.

                    EFFIE
          Hand me the spare mantle before we
          lose the flame.

                    WINSLOW
          Caught it. Mind the wick.

EXT. LIGHTHOUSE - ROCKS - DAWN

The sea has calmed. A dinghy lies upside down on the shingle.

                    WINSLOW
          Told you the dinghy would find its
          own way home.

                    EFFIE
          It always does. Put the kettle on.
`;

const PY = process.env.PYTHON ?? "python3";
let server: ChildProcess | null = null;
let base = "";

function allKeys(obj: unknown, keys = new Set<string>()): Set<string> {
  if (Array.isArray(obj)) {
    for (const v of obj) allKeys(v, keys);
  } else if (obj && typeof obj === "object") {
    for (const [k, v] of Object.entries(obj)) {
      keys.add(k);
      allKeys(v, keys);
    }
  }
  return keys;
}

beforeAll(async () => {
  const work = mkdtempSync(join(tmpdir(), "amc-e2e-"));
  const scripts = join(work, "scripts");
  spawnSync("mkdir", ["-p", scripts]);
  writeFileSync(join(scripts, "lighthouse.txt"), SCRIPT);

  const parsed = join(work, "parsed.jsonl");
  const bench = join(work, "bench");
  let out = spawnSync(PY, ["-m", "amc.cli", "parse", "--in", scripts, "--out", parsed]);
  expect(out.status, String(out.stderr)).toBe(0);
  out = spawnSync(PY, [
    "-m", "amc.cli", "build", "--parsed", parsed, "--out", bench,
    "--seed", "5", "--split", "0,1,0",
  ]);
  expect(out.status, String(out.stderr)).toBe(0);

  const port = 8750 + (process.pid % 200);
  base = `http://127.0.0.1:${port}`;
  const uiDir = resolve(__dirname, "..", "dist");
  server = spawn(PY, [
    "-m", "amc.cli", "serve", "--benchmark", bench, "--port", String(port),
    "--data-dir", join(work, "data"), "--ui", uiDir,
  ]);

  const deadline = Date.now() + 20_000;
  for (;;) {
    try {
      const ping = await fetch(`${base}/api/movies`);
      if (ping.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("backend did not start");
    await new Promise((r) => setTimeout(r, 200));
  }
}, 40_000);

afterAll(() => {
  server?.kill();
});

describe("end-to-end game over a 3-scene fixture", () => {
  it("plays a full session; report matches; no gold pre-submit; duplicate is 409", async () => {
    const client = new GameClient(base);
    const { session_id } = await client.createSession("e2e-rater");

    const perInstance: { gold: string; guess: string }[] = [];
    let scenesPlayed = 0;
    let firstScene: { scene_index: number; assignments: Record<string, string> } | null = null;

    for (;;) {
      const next = await client.next(session_id);
      if (next.done || !next.scene) break;

      // gold labels must be absent from every pre-submit payload
      const keys = allKeys(next);
      expect(keys.has("id_map")).toBe(false);
      expect(keys.has("answer")).toBe(false);
      expect(keys.has("revealed")).toBe(false);

      const scene = next.scene;
      const assignments: Record<string, string> = {};
      scene.slots.forEach((slot, i) => {
        assignments[slot] = scene.candidates[i % scene.candidates.length]!;
      });
      const result = await client.guess(
        session_id, scene.scene_index, assignments, scenesPlayed % 2 === 0, scene.movie_id
      );
      for (const [slot, info] of Object.entries(result.results)) {
        perInstance.push({ gold: info.answer, guess: assignments[slot]! });
      }
      if (!firstScene) {
        firstScene = { scene_index: scene.scene_index, assignments };
      }
      scenesPlayed += 1;
    }

    expect(scenesPlayed).toBe(3);

    // duplicate submission rejected with 409
    await expect(
      client.guess(session_id, firstScene!.scene_index, firstScene!.assignments, false)
    ).rejects.toMatchObject({ status: 409 });

    const report = await client.report(session_id);
    const expected =
      perInstance.filter((p) => p.gold === p.guess).length / perInstance.length;
    expect(report.overall_accuracy).toBeCloseTo(expected, 10);
    expect(report.n_instances).toBe(perInstance.length);
    expect(report.answered).toBe(3);
    expect(report.needs_history_fraction).toBeCloseTo(2 / 3, 10);

    // history is re-readable and now carries the revealed answers
    const history = await client.history(session_id);
    expect(history.scenes).toHaveLength(3);
    expect(Object.keys(history.scenes[0]!.revealed).length).toBeGreaterThan(0);
  }, 30_000);

  it("serves the UI bundle at /", async () => {
    const page = await fetch(`${base}/`);
    expect(page.ok).toBe(true);
    const html = await page.text();
    expect(html).toContain('<script type="module" src="/main.js">');
    const js = await fetch(`${base}/main.js`);
    expect(js.ok).toBe(true);
  });
});
