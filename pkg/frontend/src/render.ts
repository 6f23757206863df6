import type { AppState } from "./store.js";
import type { PriorSegment, SessionView, StepView } from "./types.js";

export interface Actions {
  pick(scenarioId: string): void;
  choose(optionIndex: number): void;
  submit(text: string): void;
  editDraft(text: string): void;
  acceptSample(): void;
  advance(): void;
  copyPrompt(): void;
  backToPicker(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/**
 * Rebuild the whole app from state. Deliberately a pure projection: the same
 * state always yields the same DOM, so a re-fetch that returns an identical
 * view changes nothing on screen.
 */
export function render(root: HTMLElement, state: AppState, actions: Actions): void {
  root.innerHTML = "";
  root.appendChild(banners(state));
  if (state.screen === "picker" || !state.view) {
    root.appendChild(picker(state, actions));
    return;
  }
  const layout = el("div", "layout");
  layout.appendChild(scenarioPanel(state));
  layout.appendChild(builderPanel(state, actions));
  root.appendChild(layout);
}

function banners(state: AppState): HTMLElement {
  const box = el("div", "banners");
  if (state.error) {
    const banner = el("div", "banner error-banner");
    banner.appendChild(el("strong", "error-code", state.error.code));
    banner.appendChild(el("span", "error-message", ` ${state.error.message}`));
    box.appendChild(banner);
  }
  if (state.stale) {
    box.appendChild(
      el(
        "div",
        "banner stale-banner",
        "This session moved ahead in another tab — the view below has been refreshed.",
      ),
    );
  }
  return box;
}

function picker(state: AppState, actions: Actions): HTMLElement {
  const panel = el("section", "picker");
  panel.appendChild(el("h1", undefined, "Pick a scenario"));
  const list = el("div", "scenario-list");
  for (const row of state.scenarios) {
    const card = el("button", "scenario-card");
    card.appendChild(el("div", "scenario-name", row.character_name));
    card.appendChild(el("div", "scenario-difficulty", row.difficulty_label));
    card.addEventListener("click", () => actions.pick(row.id));
    list.appendChild(card);
  }
  panel.appendChild(list);
  return panel;
}

// Left pane: always on screen during a session so the learner can re-read
// the problem mid-step instead of memorizing it up front.
function scenarioPanel(state: AppState): HTMLElement {
  const view = state.view as SessionView;
  const panel = el("aside", "scenario-panel");
  panel.appendChild(el("h2", undefined, `${view.scenario.character_name}'s problem`));

  if (state.comicUrls.length > 0) {
    const strip = el("div", "comics");
    state.comicUrls.forEach((url, i) => {
      const img = el("img");
      img.src = url;
      img.alt = `scenario comic panel ${i + 1}`;
      strip.appendChild(img);
    });
    panel.appendChild(strip);
  }

  panel.appendChild(el("h3", undefined, "Task"));
  panel.appendChild(el("p", "problem", view.scenario.problem_description));
  if (view.scenario.current_code) {
    panel.appendChild(el("h3", undefined, "Current code"));
    panel.appendChild(el("pre", "code", view.scenario.current_code));
  }
  if (view.scenario.current_output) {
    panel.appendChild(el("h3", undefined, "Current output"));
    panel.appendChild(el("pre", "output", view.scenario.current_output));
  }
  return panel;
}

function builderPanel(state: AppState, actions: Actions): HTMLElement {
  const view = state.view as SessionView;
  const panel = el("section", "builder-panel");
  panel.appendChild(progress(view));
  if (view.status === "completed") {
    panel.appendChild(review(state, actions));
    return panel;
  }
  panel.appendChild(priorSegments(view.prior_segments));
  if (view.current_step) panel.appendChild(currentStep(state, view.current_step, actions));
  return panel;
}

const TOTAL_STEPS = 6;

function progress(view: SessionView): HTMLElement {
  const bar = el("ol", "progress");
  const done = view.status === "completed" ? TOTAL_STEPS : view.current_position;
  for (let i = 0; i < TOTAL_STEPS; i++) {
    const label =
      i < done
        ? (view.prior_segments.find((s) => s.position === i)?.component ?? `step ${i + 1}`)
        : i === done && view.current_step
          ? view.current_step.component_label
          : `step ${i + 1}`;
    const cls = i < done ? "step-dot done" : i === done ? "step-dot current" : "step-dot";
    bar.appendChild(el("li", cls, label));
  }
  return bar;
}

function priorSegments(segments: PriorSegment[]): HTMLElement {
  const panel = el("section", "prior-segments");
  panel.appendChild(el("h3", undefined, "Your prompt so far"));
  if (segments.length === 0) {
    panel.appendChild(el("p", "prior-empty", "Nothing yet — this is the first step."));
    return panel;
  }
  for (const segment of [...segments].sort((a, b) => a.position - b.position)) {
    const item = el("article", "prior-segment");
    const head = el("header");
    head.appendChild(el("span", "segment-label", labelOf(segment)));
    if (segment.origin === "sample_accepted") {
      head.appendChild(el("span", "badge badge-sample", "sample"));
    }
    item.appendChild(head);
    item.appendChild(el("p", "segment-text", segment.text));
    panel.appendChild(item);
  }
  return panel;
}

const COMPONENT_LABELS: Record<string, string> = {
  ai_role: "AI's Role",
  learner_level: "Learner's Level",
  problem_context: "Problem Context",
  difficulty_identification: "Difficulty Identification",
  guardrails: "Guardrails",
  tutoring_protocol: "Tutoring Protocols",
};

function labelOf(segment: PriorSegment): string {
  return COMPONENT_LABELS[segment.component] ?? segment.component;
}

function currentStep(state: AppState, step: StepView, actions: Actions): HTMLElement {
  const panel = el("section", "current-step");
  panel.appendChild(el("h3", "step-title", step.component_label));

  if (step.phase === "awaiting_choice" && step.mcq) {
    panel.appendChild(mcq(state, step, actions));
  } else if (step.phase === "awaiting_text") {
    panel.appendChild(editor(state, step, actions));
  } else if (step.phase === "solution_revealed") {
    panel.appendChild(sampleCard(step, actions));
  } else if (step.phase === "passed") {
    const done = el("div", "step-passed");
    done.appendChild(el("p", undefined, "Step complete."));
    const next = el("button", "advance", "Continue");
    next.disabled = state.busy;
    next.addEventListener("click", () => actions.advance());
    done.appendChild(next);
    panel.appendChild(done);
  }

  if (step.feedback_history.length > 0 && step.phase !== "solution_revealed") {
    panel.appendChild(feedbackPanel(state, step));
  }
  return panel;
}

function mcq(state: AppState, step: StepView, actions: Actions): HTMLElement {
  const box = el("div", "mcq");
  box.appendChild(el("p", "stem", step.mcq!.stem));
  const options = el("div", "options");
  step.mcq!.options.forEach((option, index) => {
    const cls = index === step.highlighted_option ? "option highlighted" : "option";
    const button = el("button", cls, option);
    button.disabled = state.busy;
    button.addEventListener("click", () => actions.choose(index));
    options.appendChild(button);
  });
  box.appendChild(options);
  if (state.lastHint) {
    // the hint text arrives ready to show; adding our own preamble doubled it
    box.appendChild(el("div", "hint", state.lastHint));
  }
  return box;
}

function editor(state: AppState, step: StepView, actions: Actions): HTMLElement {
  const box = el("div", "editor");
  box.appendChild(
    el("p", "editor-intro", `Write the "${step.component_label}" part of your prompt.`),
  );
  const input = el("textarea", "segment-input");
  input.value = state.draft;
  input.placeholder = "Write this segment in your own words…";
  const submit = el("button", "submit-segment", "Check my answer");
  // the one piece of client-side validation allowed: don't send empty text
  submit.disabled = state.busy || state.draft.trim() === "";
  input.addEventListener("input", () => {
    actions.editDraft(input.value);
    submit.disabled = state.busy || input.value.trim() === "";
  });
  submit.addEventListener("click", () => actions.submit(input.value));
  box.appendChild(input);
  box.appendChild(submit);

  if (step.feedback_history.length > 0) {
    box.appendChild(
      el(
        "div",
        "attempts",
        `${step.attempts_remaining} attempt${step.attempts_remaining === 1 ? "" : "s"} left`,
      ),
    );
  }
  return box;
}

function feedbackPanel(state: AppState, step: StepView): HTMLElement {
  const panel = el("section", "feedback-panel");
  panel.appendChild(el("h4", undefined, "Feedback"));
  if (state.lastOutcome) {
    const failed = state.lastOutcome.verdicts.filter((v) => !v.passed);
    if (failed.length > 0) {
      const list = el("ul", "verdicts");
      for (const verdict of failed) {
        list.appendChild(el("li", "verdict failed", verdict.rationale));
      }
      panel.appendChild(list);
    }
  }
  const history = el("ol", "feedback-history");
  for (const feedback of step.feedback_history) {
    const item = el("li", "feedback-item");
    item.appendChild(el("p", "feedback-summary", feedback.summary));
    if (feedback.advice.length > 0) {
      const advice = el("ul", "feedback-advice");
      for (const line of feedback.advice) advice.appendChild(el("li", undefined, line));
      item.appendChild(advice);
    }
    history.appendChild(item);
  }
  panel.appendChild(history);
  return panel;
}

function sampleCard(step: StepView, actions: Actions): HTMLElement {
  const card = el("section", "sample-card");
  card.appendChild(el("h4", undefined, "Here's a sample solution"));
  card.appendChild(
    el(
      "p",
      "sample-intro",
      "That one's tricky — review this sample, then use it as this step's answer.",
    ),
  );
  card.appendChild(el("blockquote", "sample-text", step.sample_solution ?? ""));
  const accept = el("button", "accept-sample", "Use this sample and continue");
  accept.addEventListener("click", () => actions.acceptSample());
  card.appendChild(accept);
  return card;
}

function review(state: AppState, actions: Actions): HTMLElement {
  const view = state.view as SessionView;
  const panel = el("section", "review");
  panel.appendChild(el("h2", undefined, "Your prompt is ready"));

  const segments = el("div", "review-segments");
  for (const segment of [...view.prior_segments].sort((a, b) => a.position - b.position)) {
    const item = el("article", "review-segment");
    const head = el("header");
    head.appendChild(el("span", "segment-label", labelOf(segment)));
    if (segment.origin === "sample_accepted") {
      head.appendChild(el("span", "badge badge-sample", "sample"));
    }
    item.appendChild(head);
    item.appendChild(el("p", "segment-text", segment.text));
    segments.appendChild(item);
  }
  panel.appendChild(segments);

  panel.appendChild(el("h3", undefined, "Full prompt"));
  panel.appendChild(el("pre", "full-prompt", view.assembled_prompt ?? ""));

  const copy = el("button", "copy-prompt", "Copy prompt");
  copy.disabled = view.assembled_prompt === null;
  copy.addEventListener("click", () => actions.copyPrompt());
  panel.appendChild(copy);

  if (state.copied === "copied") {
    panel.appendChild(el("span", "copy-status", "Copied — paste it into your chatbot."));
  } else if (state.copied === "denied") {
    panel.appendChild(
      el("span", "copy-status copy-denied", "Clipboard blocked — select and copy below."),
    );
    const fallback = el("textarea", "copy-fallback");
    fallback.readOnly = true;
    fallback.value = view.assembled_prompt ?? "";
    panel.appendChild(fallback);
  }

  const again = el("button", "back-to-picker", "Try another scenario");
  again.addEventListener("click", () => actions.backToPicker());
  panel.appendChild(again);
  return panel;
}
