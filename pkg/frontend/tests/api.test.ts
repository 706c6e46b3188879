import { describe, expect, it, vi } from "vitest";

import { ApiError, GameClient } from "../src/api.js";

function fakeFetch(status: number, body: unknown) {
  return vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  })) as unknown as typeof fetch;
}

describe("GameClient", () => {
  it("posts rater id on session create", async () => {
    const f = fakeFetch(200, { session_id: "abc" });
    const client = new GameClient("http://x", f);
    const created = await client.createSession("r1");
    expect(created.session_id).toBe("abc");
    const [url, init] = (f as any).mock.calls[0];
    expect(url).toBe("http://x/api/session");
    expect(JSON.parse(init.body as string)).toEqual({ rater_id: "r1" });
  });

  it("sends assignments and the needs-history flag on guess", async () => {
    const f = fakeFetch(200, { results: {}, scene_accuracy: 1 });
    const client = new GameClient("", f);
    await client.guess("s", 3, { P0: "EPPS" }, true, "movie");
    const [url, init] = (f as any).mock.calls[0];
    expect(url).toBe("/api/session/s/guess");
    expect(JSON.parse(init.body as string)).toEqual({
      scene_index: 3,
      assignments: { P0: "EPPS" },
      needs_history: true,
      movie_id: "movie",
    });
  });

  it("raises ApiError with the server status on conflict", async () => {
    const f = fakeFetch(409, { error: "scene 3 was already answered" });
    const client = new GameClient("", f);
    await expect(client.guess("s", 3, { P0: "EPPS" }, false)).rejects.toMatchObject({
      status: 409,
      message: "scene 3 was already answered",
    });
    await expect(client.guess("s", 3, { P0: "EPPS" }, false)).rejects.toBeInstanceOf(ApiError);
  });

  it("fetches the report without recomputing anything", async () => {
    const payload = {
      rater_id: "r",
      answered: 2,
      total: 2,
      n_instances: 4,
      overall_accuracy: 0.75,
      per_scene: [],
      needs_history_fraction: 0.5,
    };
    const f = fakeFetch(200, payload);
    const client = new GameClient("", f);
    expect(await client.report("s")).toEqual(payload);
  });
});
