import type { ScenarioRow, SegmentOutcome, SessionView } from "./types.js";

export interface AppState {
  screen: "picker" | "session";
  scenarios: ScenarioRow[];
  view: SessionView | null;
  comicUrls: string[];
  /** result of the most recent MCQ pick on the current step, if wrong */
  lastHint: string | null;
  /** verdicts from the most recent segment submission on the current step */
  lastOutcome: SegmentOutcome | null;
  error: { code: string; message: string } | null;
  /** another tab (or process) moved the session since we last looked */
  stale: boolean;
  busy: boolean;
  copied: "idle" | "copied" | "denied";
  /** in-flight editor text, survives re-renders, resets on step change */
  draft: string;
}

export const initialState: AppState = {
  screen: "picker",
  scenarios: [],
  view: null,
  comicUrls: [],
  lastHint: null,
  lastOutcome: null,
  error: null,
  stale: false,
  busy: false,
  copied: "idle",
  draft: "",
};

type Listener = (state: AppState) => void;

export class Store {
  private state: AppState;
  private listeners: Listener[] = [];

  constructor(state: AppState = initialState) {
    this.state = state;
  }

  get(): AppState {
    return this.state;
  }

  set(patch: Partial<AppState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  /** Update without notifying — for keystroke-level state like the draft. */
  setSilent(patch: Partial<AppState>): void {
    this.state = { ...this.state, ...patch };
  }

  /** Install a fresh view; per-step transients reset when the step changes. */
  setView(view: SessionView, extra: Partial<AppState> = {}): void {
    const previous = this.state.view;
    const stepChanged =
      !previous ||
      previous.session_id !== view.session_id ||
      previous.current_position !== view.current_position;
    this.set({
      view,
      screen: "session",
      error: null,
      ...(stepChanged ? { lastHint: null, lastOutcome: null, draft: "" } : {}),
      ...extra,
    });
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }
}
