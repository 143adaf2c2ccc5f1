import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import type { FetchLike } from "../src/api.js";

describe("ApiClient", () => {
  it("builds URLs and sends JSON bodies", async () => {
    const seen: Array<{ url: string; method?: string; body?: string }> = [];
    const fake: FetchLike = async (url, init) => {
      seen.push({ url, method: init?.method, body: init?.body });
      return { status: 200, ok: true, json: async () => ({}) };
    };
    const api = new ApiClient("http://h", fake);
    await api.getNodeWaveforms(2, 3, 7);
    await api.postFlag({ trace_id: "x y", reason: "ambiguous" });
    await api.deleteFlag("x y");
    await api.getAudit("left", 5, 9);
    expect(seen[0].url).toBe("http://h/som/node/2/3/waveforms?limit=7");
    expect(seen[1].method).toBe("POST");
    expect(JSON.parse(seen[1].body!)).toEqual({ trace_id: "x y", reason: "ambiguous" });
    expect(seen[2].url).toBe("http://h/flags/x%20y");
    expect(seen[3].url).toBe("http://h/audit/extremal?bin=left&k=5&seed=9");
  });

  it("raises ApiError with status and parsed body", async () => {
    const fake: FetchLike = async () => ({
      status: 409,
      ok: false,
      json: async () => ({ detail: "busy" }),
    });
    const api = new ApiClient("", fake);
    const err = await api.postCycle().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.body).toEqual({ detail: "busy" });
  });

  it("tolerates non-JSON error bodies", async () => {
    const fake: FetchLike = async () => ({
      status: 500,
      ok: false,
      json: async () => {
        throw new Error("not json");
      },
    });
    const api = new ApiClient("", fake);
    const err = await api.health().catch((e) => e);
    expect(err.status).toBe(500);
    expect(err.body).toBeNull();
  });
});
