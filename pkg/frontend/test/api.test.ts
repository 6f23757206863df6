// Wire-level behavior of the API client: idempotency keys, the single retry,
// and error mapping. The mock backend implements the same replay semantics
// as the real service, so these tests pin both sides of the contract.

import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError, NetworkError } from "../src/api.js";
import { MOCK_TOKEN, MockBackend, STEPS } from "./mock_backend.js";

let backend: MockBackend;

interface Recorded {
  url: string;
  method: string;
  key: string | null;
  ok: boolean;
}

/** Wrap backend.fetch so every attempt (including failed ones) is recorded. */
function recordingFetch(log: Recorded[]): typeof backend.fetch {
  return async (url, init) => {
    const headers = new Headers(init?.headers);
    const entry: Recorded = {
      url: String(url),
      method: init?.method ?? "GET",
      key: headers.get("Idempotency-Key"),
      ok: false,
    };
    log.push(entry);
    const response = await backend.fetch(url, init);
    entry.ok = true;
    return response;
  };
}

function client(extra: Record<string, unknown> = {}): ApiClient {
  return new ApiClient("http://svc.test", MOCK_TOKEN, {
    fetchFn: backend.fetch,
    retryDelayMs: 1,
    ...extra,
  });
}

beforeEach(() => {
  backend = new MockBackend();
});

describe("idempotent mutations", () => {
  it("retries a dropped request once with the same key; backend applies it once", async () => {
    const log: Recorded[] = [];
    const api = client({ fetchFn: recordingFetch(log) });
    const view = await api.createSession("mia");

    backend.failNextFetches = 1;
    const result = await api.choose(view.session_id, STEPS[0]!.mcq!.correct);
    expect(result.correct).toBe(true);

    const attempts = log.filter((e) => e.url.endsWith("/choice"));
    expect(attempts).toHaveLength(2);
    expect(attempts[0]!.ok).toBe(false);
    expect(attempts[1]!.ok).toBe(true);
    expect(attempts[0]!.key).toBeTruthy();
    expect(attempts[1]!.key).toBe(attempts[0]!.key);
    expect(backend.applied.choice).toBe(1);
  });

  it("gives up with NetworkError when the retry also fails, applying nothing", async () => {
    const api = client();
    const view = await api.createSession("mia");

    backend.failNextFetches = 2;
    await expect(api.choose(view.session_id, 0)).rejects.toBeInstanceOf(NetworkError);
    expect(backend.applied.choice ?? 0).toBe(0);
  });

  it("replays a duplicate key + body without re-applying", async () => {
    const api = client({ newKey: () => "fixed-key" });
    const view = await api.createSession("mia");
    const first = await api.choose(view.session_id, STEPS[0]!.mcq!.correct);
    const second = await api.choose(view.session_id, STEPS[0]!.mcq!.correct);

    expect(backend.applied.choice).toBe(1);
    expect(second).toEqual(first);
  });

  it("rejects a reused key with a different body", async () => {
    const api = client({ newKey: () => "fixed-key" });
    const view = await api.createSession("mia");
    await api.choose(view.session_id, 0);

    const error = await api.choose(view.session_id, 1).catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(409);
    expect((error as ApiError).code).toBe("IdempotencyConflict");
  });

  it("does not retry on application errors", async () => {
    const log: Recorded[] = [];
    const api = client({ fetchFn: recordingFetch(log) });
    const view = await api.createSession("mia");

    await expect(api.submitSegment(view.session_id, "early")).rejects.toMatchObject({
      status: 409,
      code: "WrongPhase",
    });
    expect(log.filter((e) => e.url.endsWith("/segment"))).toHaveLength(1);
  });
});

describe("error mapping", () => {
  it("maps structured backend errors onto ApiError", async () => {
    const api = client();
    const error = await api.view("no-such-session").catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(404);
    expect((error as ApiError).code).toBe("UnknownSession");
    expect((error as ApiError).message).toContain("no-such-session");
  });

  it("rejects a bad token with AuthError", async () => {
    const api = new ApiClient("http://svc.test", "wrong-token", {
      fetchFn: backend.fetch,
      retryDelayMs: 1,
    });
    await expect(api.listScenarios()).rejects.toMatchObject({
      status: 401,
      code: "AuthError",
    });
  });

  it("surfaces field-level validation errors", async () => {
    const api = client();
    const view = await api.createSession("mia");
    await api.choose(view.session_id, STEPS[0]!.mcq!.correct);

    await expect(api.submitSegment(view.session_id, "   ")).rejects.toMatchObject({
      status: 422,
      code: "EmptySegment",
    });
    await expect(api.createSession("ghost")).rejects.toMatchObject({
      status: 404,
      code: "UnknownScenario",
    });
  });
});

describe("scenario catalog and comics", () => {
  it("lists scenarios unwrapped", async () => {
    const rows = await client().listScenarios();
    expect(rows).toHaveLength(1);
    expect(rows[0]).toMatchObject({ id: "mia", character_name: "Mia", comics: 2 });
  });

  it("turns comic bytes into an object URL", async () => {
    const urls: Blob[] = [];
    vi.stubGlobal(
      "URL",
      Object.assign(URL, {
        createObjectURL: vi.fn((blob: Blob) => {
          urls.push(blob);
          return "blob:mock-1";
        }),
      }),
    );
    const api = client();
    const view = await api.createSession("mia");
    const url = await api.comicUrl(view.scenario_id, 0);
    expect(url).toBe("blob:mock-1");
    expect(urls[0]!.size).toBeGreaterThan(0);

    await expect(api.comicUrl(view.scenario_id, 99)).rejects.toMatchObject({
      status: 404,
      code: "PositionOutOfRange",
    });
  });
});

describe("session progression over the wire", () => {
  it("completes a full session and assembles the same prompt the backend holds", async () => {
    const api = client();
    let view = await api.createSession("mia");
    expect(view.status).toBe("in_progress");

    for (const def of STEPS) {
      if (def.mcq) {
        const picked = await api.choose(view.session_id, def.mcq.correct);
        expect(picked.correct).toBe(true);
        view = picked.view;
      }
      const submitted = await api.submitSegment(view.session_id, `mine: ${def.component}`);
      expect(submitted.outcome.all_passed).toBe(true);
      view = await api.advance(submitted.view.session_id);
    }

    expect(view.status).toBe("completed");
    expect(view.assembled_prompt).toBe(backend.assembledPromptOf(view.session_id));
    expect(view.assembled_prompt).toContain("mine: ai_role");
    // canonical assembly order, regardless of writing order
    const body = view.assembled_prompt!;
    expect(body.indexOf("mine: ai_role")).toBeLessThan(body.indexOf("mine: difficulty_identification"));
  });

  it("reveals the sample after three failures and uses it on acceptance", async () => {
    const api = client();
    let view = await api.createSession("mia");
    const choice = await api.choose(view.session_id, STEPS[0]!.mcq!.correct);
    view = choice.view;

    for (let i = 0; i < 3; i++) {
      const result = await api.submitSegment(view.session_id, "fail: nope");
      expect(result.outcome.all_passed).toBe(false);
      view = result.view;
    }
    expect(view.current_step!.phase).toBe("solution_revealed");
    expect(view.current_step!.sample_solution).toBe(STEPS[0]!.sample);

    view = await api.acceptSolution(view.session_id);
    expect(view.current_step!.phase).toBe("passed");
    view = await api.advance(view.session_id);
    expect(view.prior_segments[0]).toMatchObject({
      origin: "sample_accepted",
      text: STEPS[0]!.sample,
    });
  });
});
