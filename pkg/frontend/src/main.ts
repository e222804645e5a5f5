/**
 * DOM wiring for the annotation UI. All campaign state is server-side; this
 * layer renders the currently leased pair, collects one choice per dimension,
 * and submits. A reload simply re-requests the lease and gets the same pair.
 */

import {
  fetchNextPair,
  fetchProgress,
  submitAnnotation,
} from './api.js';
import {
  CHOICE_LABELS,
  CHOICES,
  DIMENSION_LABELS,
  DIMENSIONS,
  createSession,
  isComplete,
  setChoice,
  toSubmission,
  type Choice,
  type Dimension,
  type Session,
} from './state.js';

/** Same origin by default; ?api=http://host:port overrides for dev setups. */
function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get('api');
  return override ?? '';
}

const base = apiBase();
let session: Session | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function annotatorId(): string {
  return (el<HTMLInputElement>('annotator').value || '').trim();
}

function showBanner(message: string, retry: () => void): void {
  const banner = el<HTMLDivElement>('banner');
  banner.hidden = false;
  el<HTMLSpanElement>('banner-text').textContent = message;
  el<HTMLButtonElement>('banner-retry').onclick = () => {
    banner.hidden = true;
    retry();
  };
}

function hideBanner(): void {
  el<HTMLDivElement>('banner').hidden = true;
}

async function refreshProgress(): Promise<void> {
  try {
    const progress = await fetchProgress(base);
    el<HTMLSpanElement>('progress').textContent =
      `${progress.annotated_pairs} / ${progress.total_pairs} pairs` +
      (progress.complete ? ' — campaign complete' : '');
  } catch {
    // progress is advisory; never block annotation on it
  }
}

function renderChoices(): void {
  const grid = el<HTMLDivElement>('dimensions');
  grid.replaceChildren();
  for (const dimension of DIMENSIONS) {
    const row = document.createElement('div');
    row.className = 'dimension-row';
    const label = document.createElement('span');
    label.className = 'dimension-label';
    label.textContent = DIMENSION_LABELS[dimension];
    row.appendChild(label);
    for (const choice of CHOICES) {
      const button = document.createElement('button');
      button.type = 'button';
      button.textContent = CHOICE_LABELS[choice];
      button.dataset.dimension = dimension;
      button.dataset.choice = choice;
      if (session && session.choices[dimension] === choice) {
        button.classList.add('selected');
      }
      button.onclick = () => pickChoice(dimension, choice);
      row.appendChild(button);
    }
    grid.appendChild(row);
  }
  el<HTMLButtonElement>('submit').disabled = session === null || !isComplete(session);
}

function pickChoice(dimension: Dimension, choice: Choice): void {
  if (!session) return;
  session = setChoice(session, dimension, choice);
  renderChoices();
}

function renderPair(): void {
  const done = el<HTMLDivElement>('done');
  const workspace = el<HTMLDivElement>('workspace');
  if (!session) {
    workspace.hidden = true;
    done.hidden = false;
    return;
  }
  workspace.hidden = false;
  done.hidden = true;
  el<HTMLSpanElement>('task').textContent = session.pair.task;
  el<HTMLParagraphElement>('instruction').textContent = session.pair.instruction;
  el<HTMLImageElement>('original').src = String(session.pair.original ?? '');
  el<HTMLImageElement>('left').src = String(session.pair.left ?? '');
  el<HTMLImageElement>('right').src = String(session.pair.right ?? '');
  renderChoices();
}

async function loadNext(): Promise<void> {
  const annotator = annotatorId();
  if (annotator === '') {
    showBanner('enter an annotator id first', () => void loadNext());
    return;
  }
  try {
    const pair = await fetchNextPair(base, annotator);
    session = pair ? createSession(pair) : null;
    hideBanner();
    renderPair();
    await refreshProgress();
  } catch (error) {
    showBanner(`could not load the next pair: ${String(error)}`, () => void loadNext());
  }
}

async function submit(): Promise<void> {
  if (!session) return;
  const payload = toSubmission(session, annotatorId());
  try {
    await submitAnnotation(base, payload);
    await loadNext();
  } catch (error) {
    // keep the session (and its picked choices) so nothing is lost on retry
    showBanner(`submission failed: ${String(error)}`, () => void submit());
  }
}

/** One zoom slider drives both candidate panels for pixel-level comparison. */
function applyZoom(): void {
  const level = Number(el<HTMLInputElement>('zoom').value) / 100;
  for (const id of ['left', 'right'] as const) {
    el<HTMLImageElement>(id).style.transform = `scale(${level})`;
  }
  el<HTMLSpanElement>('zoom-value').textContent = `${el<HTMLInputElement>('zoom').value}%`;
}

export function start(): void {
  const saved = window.localStorage.getItem('annotator');
  if (saved) el<HTMLInputElement>('annotator').value = saved;
  el<HTMLButtonElement>('begin').onclick = () => {
    window.localStorage.setItem('annotator', annotatorId());
    void loadNext();
  };
  el<HTMLButtonElement>('submit').onclick = () => void submit();
  el<HTMLInputElement>('zoom').oninput = applyZoom;
  renderChoices();
}

if (typeof document !== 'undefined' && document.getElementById('workspace')) {
  start();
}
