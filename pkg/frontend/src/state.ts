/** App state and pure update functions.
 *
 * The server is the single source of truth: card controls are derived from
 * the `legal_moves` the API declares for each flow, never from stage names,
 * and every statement is rendered exactly as received.
 */

import type { ApiErrorBody, FlowView, SessionView, StageName } from './types.js';

export interface Controls {
  canAccept: boolean;
  canReject: boolean;
  rejectNeedsFeedback: boolean;
  overrideAllowed: string[] | null;
  canEdit: boolean;
}

export function controlsFor(flow: FlowView): Controls {
  const controls: Controls = {
    canAccept: false,
    canReject: false,
    rejectNeedsFeedback: false,
    overrideAllowed: null,
    canEdit: false,
  };
  for (const move of flow.legal_moves) {
    switch (move.type) {
      case 'accept':
        controls.canAccept = true;
        break;
      case 'reject':
        controls.canReject = true;
        controls.rejectNeedsFeedback = move.requires_feedback ?? false;
        break;
      case 'override':
        controls.overrideAllowed = move.allowed ?? [];
        break;
      case 'edit':
        controls.canEdit = true;
        break;
    }
  }
  return controls;
}

export interface HistoryEntry {
  stage: StageName;
  statement: string | null;
}

export interface CardState {
  flow: FlowView;
  pending: boolean;
  error: ApiErrorBody | null;
  /** Allowed override values to highlight after a rejected override. */
  highlight: string[] | null;
  history: HistoryEntry[];
}

export interface AppState {
  session: SessionView | null;
  cards: Record<string, CardState>;
  order: string[];
  finalRebuttal: string | null;
  finalizing: boolean;
  banner: string | null;
}

export function initialState(): AppState {
  return {
    session: null,
    cards: {},
    order: [],
    finalRebuttal: null,
    finalizing: false,
    banner: null,
  };
}

function newCard(flow: FlowView): CardState {
  return {
    flow,
    pending: false,
    error: null,
    highlight: null,
    history: [{ stage: flow.stage, statement: flow.statement }],
  };
}

export function sessionLoaded(state: AppState, view: SessionView): AppState {
  const cards: Record<string, CardState> = {};
  const order: string[] = [];
  for (const flow of view.segments) {
    cards[flow.segment.segment_id] = newCard(flow);
    order.push(flow.segment.segment_id);
  }
  return {
    ...state,
    session: view,
    cards,
    order,
    finalRebuttal: view.final_rebuttal,
    banner: null,
  };
}

export function interactionStarted(state: AppState, segmentId: string): AppState {
  const card = state.cards[segmentId];
  if (!card) return state;
  return {
    ...state,
    cards: {
      ...state.cards,
      [segmentId]: { ...card, pending: true, error: null, highlight: null },
    },
  };
}

export function flowUpdated(state: AppState, flow: FlowView): AppState {
  const segmentId = flow.segment.segment_id;
  const card = state.cards[segmentId];
  if (!card) return state;
  const last = card.history[card.history.length - 1];
  const history =
    last && last.stage === flow.stage && last.statement === flow.statement
      ? card.history
      : [...card.history, { stage: flow.stage, statement: flow.statement }];
  return {
    ...state,
    cards: {
      ...state.cards,
      [segmentId]: { flow, pending: false, error: null, highlight: null, history },
    },
  };
}

export function interactionFailed(
  state: AppState,
  segmentId: string,
  error: ApiErrorBody,
): AppState {
  const card = state.cards[segmentId];
  if (!card) return { ...state, banner: `${error.code}: ${error.message}` };
  // a rejected override keeps the card and highlights the legal values,
  // which come from the server-declared moves, not from stage knowledge
  const highlight =
    error.code === 'override_outside_allowed_set'
      ? (controlsFor(card.flow).overrideAllowed ?? [])
      : null;
  return {
    ...state,
    cards: {
      ...state.cards,
      [segmentId]: { ...card, pending: false, error, highlight },
    },
  };
}

export function finalizeStarted(state: AppState): AppState {
  return { ...state, finalizing: true, banner: null };
}

export function finalized(state: AppState, text: string): AppState {
  return { ...state, finalizing: false, finalRebuttal: text };
}

export function finalizeFailed(state: AppState, error: ApiErrorBody): AppState {
  return { ...state, finalizing: false, banner: `${error.code}: ${error.message}` };
}

export function progress(state: AppState): { accepted: number; total: number } {
  const total = state.order.length;
  let accepted = 0;
  for (const segmentId of state.order) {
    if (state.cards[segmentId]?.flow.stage === 'accepted') accepted += 1;
  }
  return { accepted, total };
}

export function allAccepted(state: AppState): boolean {
  const { accepted, total } = progress(state);
  return total > 0 && accepted === total;
}
