import type {
  ChoiceResult,
  ErrorBody,
  ScenarioRow,
  SegmentResult,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;
  readonly details: Record<string, unknown>;

  constructor(status: number, body: ErrorBody) {
    super(body.message);
    this.name = "ApiError";
    this.code = body.code;
    this.status = status;
    this.details = body.details ?? {};
  }
}

/** The request reached nobody: offline, DNS, connection refused. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`request failed: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

export interface ClientOptions {
  /** fetch implementation, injectable for tests */
  fetchFn?: typeof fetch;
  /** delay before the single network-failure retry, ms */
  retryDelayMs?: number;
  newKey?: () => string;
}

function defaultKey(): string {
  const c = globalThis.crypto;
  if (c && "randomUUID" in c) return c.randomUUID();
  return `k-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

/**
 * Typed client for the session service. Every mutation carries an
 * Idempotency-Key; if the request dies on the network (no HTTP response at
 * all) it is retried once with the same key, so the server applies it at
 * most once no matter which attempt got through.
 */
export class ApiClient {
  private readonly base: string;
  private readonly token: string;
  private readonly fetchFn: typeof fetch;
  private readonly retryDelayMs: number;
  private readonly newKey: () => string;

  constructor(baseUrl: string, token: string, options: ClientOptions = {}) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.token = token;
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
    this.retryDelayMs = options.retryDelayMs ?? 250;
    this.newKey = options.newKey ?? defaultKey;
  }

  async listScenarios(): Promise<ScenarioRow[]> {
    const body = await this.request("GET", "/scenarios");
    return (body as { scenarios: ScenarioRow[] }).scenarios;
  }

  /** Comic images need the bearer header, so <img src> can't fetch them. */
  async comicUrl(scenarioId: string, index: number): Promise<string> {
    const response = await this.raw("GET", `/scenarios/${scenarioId}/comics/${index}`);
    if (!response.ok) throw await this.toError(response);
    return URL.createObjectURL(await response.blob());
  }

  async createSession(scenarioId: string, seed?: number): Promise<SessionView> {
    const payload: Record<string, unknown> = { scenario_id: scenarioId };
    if (seed !== undefined) payload.seed = seed;
    return (await this.mutate("/sessions", payload)) as SessionView;
  }

  async view(sessionId: string): Promise<SessionView> {
    return (await this.request("GET", `/sessions/${sessionId}`)) as SessionView;
  }

  async choose(sessionId: string, optionIndex: number): Promise<ChoiceResult> {
    return (await this.mutate(`/sessions/${sessionId}/choice`, {
      option_index: optionIndex,
    })) as ChoiceResult;
  }

  async submitSegment(sessionId: string, text: string): Promise<SegmentResult> {
    return (await this.mutate(`/sessions/${sessionId}/segment`, { text })) as SegmentResult;
  }

  async acceptSolution(sessionId: string): Promise<SessionView> {
    const body = await this.mutate(`/sessions/${sessionId}/accept-solution`, {});
    return (body as { view: SessionView }).view;
  }

  async advance(sessionId: string): Promise<SessionView> {
    const body = await this.mutate(`/sessions/${sessionId}/advance`, {});
    return (body as { view: SessionView }).view;
  }

  private async mutate(path: string, payload: unknown): Promise<unknown> {
    const key = this.newKey();
    try {
      return await this.request("POST", path, payload, key);
    } catch (err) {
      if (!(err instanceof NetworkError)) throw err;
      await sleep(this.retryDelayMs);
      return await this.request("POST", path, payload, key);
    }
  }

  private async request(
    method: string,
    path: string,
    payload?: unknown,
    idempotencyKey?: string,
  ): Promise<unknown> {
    const response = await this.raw(method, path, payload, idempotencyKey);
    if (!response.ok) throw await this.toError(response);
    return response.json();
  }

  private async raw(
    method: string,
    path: string,
    payload?: unknown,
    idempotencyKey?: string,
  ): Promise<Response> {
    const headers: Record<string, string> = { Authorization: `Bearer ${this.token}` };
    const init: RequestInit = { method, headers };
    if (payload !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(payload);
    }
    if (idempotencyKey) headers["Idempotency-Key"] = idempotencyKey;
    try {
      return await this.fetchFn(this.base + path, init);
    } catch (cause) {
      throw new NetworkError(cause);
    }
  }

  private async toError(response: Response): Promise<ApiError> {
    let body: ErrorBody;
    try {
      body = (await response.json()) as ErrorBody;
    } catch {
      body = { code: `Http${response.status}`, message: response.statusText, details: {} };
    }
    return new ApiError(response.status, body);
  }
}
