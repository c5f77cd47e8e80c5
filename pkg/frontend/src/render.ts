/** DOM rendering for the wizard: one card per review segment.
 *
 * Statement text is always set via textContent from the API payload, so
 * what the author reads is byte-identical to what the server sent.
 */

import { allAccepted, controlsFor, progress } from './state.js';
import type { AppState, CardState } from './state.js';
import type { FlowView } from './types.js';

export interface Handlers {
  accept(segmentId: string): void;
  reject(segmentId: string, feedback: string | null): void;
  override(segmentId: string, value: string): void;
  saveEdit(segmentId: string, text: string): void;
  finalize(): void;
}

const STAGE_TITLES: Record<string, string> = {
  draft_proposed: 'Proposed rebuttal draft',
  deficiency_shown: 'Is this review segment deficient?',
  error_type_shown: 'What is wrong with the segment?',
  action_shown: 'How should the rebuttal respond?',
  rebuttal_shown: 'Generated rebuttal',
  accepted: 'Accepted',
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderTimeline(card: CardState): HTMLElement {
  const list = el('ol', { 'data-role': 'timeline', class: 'timeline' });
  for (const entry of card.history) {
    const item = el('li', { 'data-stage': entry.stage });
    item.appendChild(el('span', { class: 'timeline-stage' }, entry.stage));
    if (entry.statement) {
      item.appendChild(el('span', { class: 'timeline-statement' }, entry.statement));
    }
    list.appendChild(item);
  }
  return list;
}

function renderControls(card: CardState, handlers: Handlers): HTMLElement {
  const box = el('div', { class: 'controls' });
  const flow = card.flow;
  const segmentId = flow.segment.segment_id;
  const controls = controlsFor(flow);

  if (controls.canAccept) {
    const button = el('button', { 'data-action': 'accept' }, 'Accept');
    button.onclick = () => handlers.accept(segmentId);
    box.appendChild(button);
  }

  if (controls.canReject) {
    const feedback = el('textarea', {
      'data-role': 'feedback',
      placeholder: controls.rejectNeedsFeedback
        ? 'Feedback (required to reject)'
        : 'Optional feedback',
    });
    const button = el('button', { 'data-action': 'reject' }, 'Reject');
    button.onclick = () => {
      const text = feedback.value.trim();
      handlers.reject(segmentId, text ? text : null);
    };
    box.appendChild(button);
    box.appendChild(feedback);
  }

  if (controls.overrideAllowed !== null) {
    const select = el('select', { 'data-role': 'override-select' });
    for (const value of controls.overrideAllowed) {
      const option = el('option', { value }, value);
      if (card.highlight?.includes(value)) option.setAttribute('class', 'highlight');
      select.appendChild(option);
    }
    const button = el('button', { 'data-action': 'override' }, 'Override');
    button.onclick = () => handlers.override(segmentId, select.value);
    box.appendChild(select);
    box.appendChild(button);
  }

  if (controls.canEdit) {
    const area = el('textarea', { 'data-role': 'edit-area' });
    area.value = card.flow.edit ?? card.flow.draft?.text ?? '';
    const button = el('button', { 'data-action': 'save-edit' }, 'Save edit');
    button.onclick = () => handlers.saveEdit(segmentId, area.value);
    box.appendChild(area);
    box.appendChild(button);
  }

  return box;
}

function renderCard(card: CardState, handlers: Handlers): HTMLElement {
  const flow: FlowView = card.flow;
  const root = el('section', {
    class: 'card',
    'data-role': 'card',
    'data-segment-id': flow.segment.segment_id,
  });

  const header = el('header');
  header.appendChild(
    el('span', { class: 'kind' }, `#${flow.segment.ordinal + 1} ${flow.segment.kind}`),
  );
  header.appendChild(el('span', { 'data-role': 'stage', class: 'stage' }, flow.stage));
  root.appendChild(header);

  root.appendChild(
    el('blockquote', { 'data-role': 'segment-text' }, flow.segment.text),
  );

  root.appendChild(el('h3', {}, STAGE_TITLES[flow.stage] ?? flow.stage));
  if (flow.statement !== null) {
    root.appendChild(el('p', { 'data-role': 'statement', class: 'statement' }, flow.statement));
  }
  if (flow.draft_error) {
    root.appendChild(
      el('p', { 'data-role': 'draft-error', class: 'error' }, `draft failed: ${flow.draft_error}`),
    );
  }

  if (card.error) {
    root.appendChild(
      el(
        'p',
        { 'data-role': 'error', class: 'error' },
        `${card.error.code}: ${card.error.message}`,
      ),
    );
  }

  if (card.pending) {
    root.appendChild(el('p', { 'data-role': 'pending', class: 'pending' }, 'working...'));
  } else {
    root.appendChild(renderControls(card, handlers));
  }

  root.appendChild(renderTimeline(card));
  return root;
}

export function render(root: HTMLElement, state: AppState, handlers: Handlers): void {
  root.textContent = '';
  if (state.banner) {
    root.appendChild(el('p', { 'data-role': 'banner', class: 'error' }, state.banner));
  }
  if (!state.session) {
    root.appendChild(el('p', { 'data-role': 'empty' }, 'No session yet.'));
    return;
  }

  const { accepted, total } = progress(state);
  root.appendChild(
    el('p', { 'data-role': 'progress' }, `${accepted}/${total} segments accepted`),
  );

  for (const segmentId of state.order) {
    root.appendChild(renderCard(state.cards[segmentId], handlers));
  }

  const finalizeButton = el('button', { 'data-action': 'finalize' }, 'Consolidate rebuttal');
  if (!allAccepted(state) || state.finalizing || state.finalRebuttal !== null) {
    finalizeButton.setAttribute('disabled', 'disabled');
  }
  finalizeButton.onclick = () => handlers.finalize();
  root.appendChild(finalizeButton);

  if (state.finalRebuttal !== null) {
    const final = el('section', { 'data-role': 'final', class: 'final' });
    final.appendChild(el('h2', {}, 'Final rebuttal'));
    final.appendChild(el('pre', { 'data-role': 'final-text' }, state.finalRebuttal));
    root.appendChild(final);
  }
}
