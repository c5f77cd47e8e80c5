/** Wires the API client, state, and renderer together. */

import { ApiError, RebutkitClient } from './api.js';
import type { CreateSessionInput } from './api.js';
import {
  finalizeFailed,
  finalizeStarted,
  finalized,
  flowUpdated,
  initialState,
  interactionFailed,
  interactionStarted,
  sessionLoaded,
} from './state.js';
import type { AppState } from './state.js';
import { render } from './render.js';
import type { Handlers } from './render.js';
import type { FlowView } from './types.js';

export class Controller implements Handlers {
  state: AppState = initialState();
  client: RebutkitClient | null = null;
  private operations: Set<Promise<unknown>> = new Set();

  constructor(private root: HTMLElement) {
    this.renderNow();
  }

  connect(baseUrl: string, token: string): void {
    this.client = new RebutkitClient(baseUrl, token);
  }

  /** Resolves once every in-flight operation has settled. */
  async whenIdle(): Promise<void> {
    while (this.operations.size > 0) {
      await Promise.allSettled([...this.operations]);
    }
  }

  track<T>(operation: Promise<T>): Promise<T> {
    this.operations.add(operation);
    operation.finally(() => this.operations.delete(operation));
    return operation;
  }

  async createSession(input: CreateSessionInput): Promise<void> {
    const view = await this.requireClient().createSession(input);
    this.state = sessionLoaded(this.state, view);
    this.renderNow();
  }

  async refresh(): Promise<void> {
    if (!this.state.session) return;
    const view = await this.requireClient().getSession(this.state.session.session_id);
    this.state = sessionLoaded(this.state, view);
    this.renderNow();
  }

  accept(segmentId: string): void {
    this.track(this.interact(segmentId, (sid) =>
      this.requireClient().submitVerdict(sid, segmentId, 'accept'),
    ));
  }

  reject(segmentId: string, feedback: string | null): void {
    this.track(this.interact(segmentId, (sid) =>
      this.requireClient().submitVerdict(sid, segmentId, 'reject', feedback ?? undefined),
    ));
  }

  override(segmentId: string, value: string): void {
    this.track(this.interact(segmentId, (sid) =>
      this.requireClient().submitVerdict(sid, segmentId, 'reject', undefined, value),
    ));
  }

  saveEdit(segmentId: string, text: string): void {
    this.track(this.interact(segmentId, (sid) =>
      this.requireClient().editRebuttal(sid, segmentId, text),
    ));
  }

  finalize(): void {
    const session = this.state.session;
    if (!session) return;
    this.state = finalizeStarted(this.state);
    this.renderNow();
    this.track(
      this.requireClient()
        .finalize(session.session_id)
        .then((result) => {
          this.state = finalized(this.state, result.final_rebuttal);
        })
        .catch((error: unknown) => {
          this.state = finalizeFailed(this.state, toErrorBody(error));
        })
        .finally(() => this.renderNow()),
    );
  }

  /** Optimistic pending state, reconciled with the API response. */
  private async interact(
    segmentId: string,
    call: (sessionId: string) => Promise<FlowView>,
  ): Promise<void> {
    const session = this.state.session;
    if (!session) return;
    this.state = interactionStarted(this.state, segmentId);
    this.renderNow();
    try {
      const flow = await call(session.session_id);
      this.state = flowUpdated(this.state, flow);
    } catch (error: unknown) {
      this.state = interactionFailed(this.state, segmentId, toErrorBody(error));
    }
    this.renderNow();
  }

  private requireClient(): RebutkitClient {
    if (!this.client) throw new Error('not connected');
    return this.client;
  }

  private renderNow(): void {
    render(this.root, this.state, this);
  }
}

function toErrorBody(error: unknown): { code: string; message: string } {
  if (error instanceof ApiError) return error.body;
  return { code: 'network_error', message: String(error) };
}

/** Browser entry point: a connect form plus the session wizard. */
export function mount(document: Document): Controller {
  const root = document.querySelector<HTMLElement>('#app');
  if (!root) throw new Error('missing #app element');

  const wizard = document.createElement('div');
  const form = document.createElement('form');
  form.innerHTML = `
    <fieldset>
      <legend>Start a session</legend>
      <input name="server" placeholder="Server URL" value="http://127.0.0.1:8321" />
      <input name="token" placeholder="API token" />
      <input name="title" placeholder="Paper title" />
      <textarea name="paper" placeholder="Paper content"></textarea>
      <textarea name="review" placeholder="Review text"></textarea>
      <button type="submit">Create session</button>
    </fieldset>`;
  root.appendChild(form);
  root.appendChild(wizard);

  const controller = new Controller(wizard);
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const data = new FormData(form);
    controller.connect(String(data.get('server')), String(data.get('token')));
    controller.track(
      controller.createSession({
        paper_title: String(data.get('title')),
        paper_content: String(data.get('paper')),
        review: String(data.get('review')),
      }),
    );
  });
  return controller;
}

declare global {
  interface Window {
    rebutkitController?: Controller;
  }
}

if (typeof window !== 'undefined' && typeof document !== 'undefined' && document.querySelector('#app')) {
  window.rebutkitController = mount(document);
}
