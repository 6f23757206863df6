import { ApiClient, ApiError } from "./api.js";
import type { Actions } from "./render.js";
import { Store } from "./store.js";
import type { SessionView } from "./types.js";

/**
 * Wires user intents to API calls and the store. Every state change the user
 * sees comes out of a backend response — the controller never fakes a view.
 */
export class Controller implements Actions {
  constructor(
    private readonly api: ApiClient,
    private readonly store: Store,
  ) {}

  async boot(): Promise<void> {
    await this.guarded(async () => {
      const scenarios = await this.api.listScenarios();
      this.store.set({ scenarios, screen: "picker" });
    });
  }

  async pick(scenarioId: string): Promise<void> {
    await this.guarded(async () => {
      const view = await this.api.createSession(scenarioId);
      this.store.setView(view, { stale: false, copied: "idle" });
      await this.loadComics(view);
    });
  }

  private async loadComics(view: SessionView): Promise<void> {
    const urls: string[] = [];
    for (let i = 0; i < view.scenario.comics.length; i++) {
      try {
        urls.push(await this.api.comicUrl(view.scenario_id, i));
      } catch {
        break; // comics are decoration; never block the flow on them
      }
    }
    if (urls.length > 0) this.store.set({ comicUrls: urls });
  }

  async choose(optionIndex: number): Promise<void> {
    const sid = this.sessionId();
    await this.guarded(async () => {
      const result = await this.api.choose(sid, optionIndex);
      this.store.setView(result.view, { lastHint: result.correct ? null : result.hint });
    });
  }

  async submit(text: string): Promise<void> {
    const sid = this.sessionId();
    if (text.trim() === "") return;
    await this.guarded(async () => {
      const result = await this.api.submitSegment(sid, text);
      this.store.setView(result.view, { lastOutcome: result.outcome });
    });
  }

  editDraft(text: string): void {
    this.store.setSilent({ draft: text });
  }

  async acceptSample(): Promise<void> {
    const sid = this.sessionId();
    await this.guarded(async () => {
      this.store.setView(await this.api.acceptSolution(sid));
    });
  }

  async advance(): Promise<void> {
    const sid = this.sessionId();
    await this.guarded(async () => {
      this.store.setView(await this.api.advance(sid));
    });
  }

  async copyPrompt(): Promise<void> {
    const view = this.store.get().view;
    if (!view || view.assembled_prompt === null) return;
    try {
      await navigator.clipboard.writeText(view.assembled_prompt);
      this.store.set({ copied: "copied" });
    } catch {
      this.store.set({ copied: "denied" });
    }
  }

  backToPicker(): void {
    this.store.set({ screen: "picker", view: null, comicUrls: [], copied: "idle" });
  }

  /**
   * Staleness check, run on tab focus: if the backend view differs from what
   * we're showing and we didn't cause it, another tab moved the session.
   */
  async checkFreshness(): Promise<void> {
    const state = this.store.get();
    if (!state.view || state.busy) return;
    try {
      const latest = await this.api.view(state.view.session_id);
      if (JSON.stringify(latest) !== JSON.stringify(state.view)) {
        this.store.setView(latest, { stale: true });
      }
    } catch {
      // a focus-time probe must never take the app down
    }
  }

  private sessionId(): string {
    const view = this.store.get().view;
    if (!view) throw new Error("no active session");
    return view.session_id;
  }

  private async guarded(work: () => Promise<void>): Promise<void> {
    this.store.set({ busy: true });
    try {
      await work();
      this.store.set({ busy: false });
    } catch (err) {
      const error =
        err instanceof ApiError
          ? { code: err.code, message: err.message }
          : { code: "NetworkError", message: "The service is unreachable. Try again." };
      this.store.set({ busy: false, error });
    }
  }
}
