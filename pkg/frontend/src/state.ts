/**
 * Pure annotation-session state: which choice is picked for each dimension
 * and when a session is ready to submit. Kept free of DOM and network code
 * so the gating rules are unit-testable.
 */

export const DIMENSIONS = ['IF', 'VQ', 'VC', 'Overall'] as const;
export const CHOICES = ['PreferA', 'BothGood', 'BothBad', 'PreferB'] as const;

export type Dimension = (typeof DIMENSIONS)[number];
export type Choice = (typeof CHOICES)[number];

/** What each dimension asks the annotator to judge. */
export const DIMENSION_LABELS: Record<Dimension, string> = {
  IF: 'Instruction following',
  VQ: 'Visual quality',
  VC: 'Visual consistency',
  Overall: 'Overall preference',
};

/** On-screen wording; candidate A is always presented on the left. */
export const CHOICE_LABELS: Record<Choice, string> = {
  PreferA: 'Prefer left',
  BothGood: 'Both good',
  BothBad: 'Both bad',
  PreferB: 'Prefer right',
};

export interface PairPayload {
  pair_id: string;
  task: string;
  instruction: string;
  original: unknown;
  left: unknown;
  right: unknown;
}

export interface Session {
  pair: PairPayload;
  choices: Partial<Record<Dimension, Choice>>;
}

export interface Submission {
  pair_id: string;
  annotator_id: string;
  choices: Record<Dimension, Choice>;
}

export function createSession(pair: PairPayload): Session {
  return { pair, choices: {} };
}

export function setChoice(session: Session, dimension: Dimension, choice: Choice): Session {
  if (!DIMENSIONS.includes(dimension)) {
    throw new Error(`unknown dimension ${String(dimension)}`);
  }
  if (!CHOICES.includes(choice)) {
    throw new Error(`unknown choice ${String(choice)}`);
  }
  return { pair: session.pair, choices: { ...session.choices, [dimension]: choice } };
}

/** Submit stays disabled until every dimension has a choice. */
export function isComplete(session: Session): boolean {
  return DIMENSIONS.every((dimension) => session.choices[dimension] !== undefined);
}

export function missingDimensions(session: Session): Dimension[] {
  return DIMENSIONS.filter((dimension) => session.choices[dimension] === undefined);
}

/**
 * Map the finished session onto the wire format, field for field. The UI
 * never invents choices: an incomplete session or blank annotator is an
 * error here, mirroring the server-side preconditions.
 */
export function toSubmission(session: Session, annotatorId: string): Submission {
  if (annotatorId.trim() === '') {
    throw new Error('annotator id must not be blank');
  }
  if (!isComplete(session)) {
    throw new Error(`missing choices for ${missingDimensions(session).join(', ')}`);
  }
  const choices = {} as Record<Dimension, Choice>;
  for (const dimension of DIMENSIONS) {
    choices[dimension] = session.choices[dimension] as Choice;
  }
  return { pair_id: session.pair.pair_id, annotator_id: annotatorId, choices };
}
