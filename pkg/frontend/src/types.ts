// Wire types for the session service. These mirror the server's JSON exactly;
// the client never invents fields, and the server never sends correct answers
// or unrevealed sample solutions (see render.test for the leak checks).

export interface ScenarioRow {
  id: string;
  character_name: string;
  study_role: string;
  difficulty: string;
  difficulty_label: string;
  comics: number;
}

export interface ScenarioSnapshot {
  character_name: string;
  problem_description: string;
  current_code: string;
  current_output: string;
  comics: string[];
}

export interface PriorSegment {
  position: number;
  component: string;
  text: string;
  origin: "learner_written" | "sample_accepted";
}

export interface Feedback {
  summary: string;
  advice: string[];
}

export interface McqView {
  stem: string;
  options: string[];
}

export interface StepView {
  position: number;
  component: string;
  component_label: string;
  input_mode: "multiple_choice" | "short_answer";
  phase: "awaiting_choice" | "awaiting_text" | "solution_revealed" | "passed";
  attempts_remaining: number;
  mcq_attempts: number;
  feedback_history: Feedback[];
  mcq?: McqView;
  highlighted_option?: number;
  sample_solution?: string;
}

export interface SessionView {
  session_id: string;
  user_id: string;
  scenario_id: string;
  status: "in_progress" | "completed";
  current_position: number;
  scenario: ScenarioSnapshot;
  prior_segments: PriorSegment[];
  current_step: StepView | null;
  assembled_prompt: string | null;
}

export interface Verdict {
  criterion_id: string;
  passed: boolean;
  rationale: string;
}

export interface SegmentOutcome {
  backend: string;
  all_passed: boolean;
  verdicts: Verdict[];
  feedback: Feedback;
}

export interface ChoiceResult {
  correct: boolean;
  hint: string | null;
  view: SessionView;
}

export interface SegmentResult {
  outcome: SegmentOutcome;
  view: SessionView;
}

export interface ErrorBody {
  code: string;
  message: string;
  details: Record<string, unknown>;
}
