import { RatingClient, NEED_MORE_INFO, type Score, type TaskView } from './api';
import { NEED_MORE_INFO_ENTRY, RUBRIC, rubricTitle } from './rubric';
import { RatingInvalid, SessionController, type ControllerOptions } from './session';
import { attachMosaic } from './viewer';

export interface TaskHandlers {
  mosaicUrl: (partId: string, slideId: string) => string;
  onSubmit: (
    partId: string,
    blindedTextId: string,
    score: Score | null,
    comment: string,
  ) => Promise<void>;
  /** called once, when the last card of the task has been saved */
  onTaskComplete?: () => void;
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

function scoreButtons(onPick: (score: Score) => void): HTMLElement {
  const wrap = el('div', 'scores');
  for (const entry of RUBRIC) {
    const btn = el('button', 'score-btn', String(entry.score));
    btn.type = 'button';
    btn.dataset.score = String(entry.score);
    btn.title = rubricTitle(entry.score);
    btn.setAttribute('aria-pressed', 'false');
    btn.addEventListener('click', () => onPick(entry.score));
    wrap.appendChild(btn);
  }
  const nmi = el('button', 'score-btn nmi', NEED_MORE_INFO_ENTRY.label);
  nmi.type = 'button';
  nmi.dataset.score = NEED_MORE_INFO;
  nmi.title = rubricTitle(NEED_MORE_INFO);
  nmi.setAttribute('aria-pressed', 'false');
  nmi.addEventListener('click', () => onPick(NEED_MORE_INFO));
  wrap.appendChild(nmi);
  return wrap;
}

/**
 * Render one rating task: the part label, a mosaic strip for its slides,
 * and every candidate text side by side in served order. Candidates carry
 * only their blinded ids — the task payload has no source information and
 * none is invented here.
 */
export function renderTask(root: HTMLElement, task: TaskView, handlers: TaskHandlers): void {
  root.textContent = '';
  const ratedIds = new Set(task.candidates.filter((c) => c.rated).map((c) => c.blinded_text_id));

  const header = el('header');
  header.appendChild(el('h2', 'part-label', task.label));
  header.appendChild(el('div', 'part-id', task.part_id));
  const progress = el('div', 'progress', `${task.completed} / ${task.total}`);
  header.appendChild(progress);
  root.appendChild(header);

  const strip = el('div', 'mosaics');
  for (const slideId of task.slide_ids) {
    const frame = el('div', 'mosaic-frame');
    const img = el('img', 'mosaic');
    img.alt = slideId;
    img.src = handlers.mosaicUrl(task.part_id, slideId);
    frame.appendChild(img);
    strip.appendChild(frame);
    attachMosaic(img);
  }
  root.appendChild(strip);

  const cards = el('div', 'cards');
  for (const cand of task.candidates) {
    const card = el('article', 'card');
    card.dataset.textId = cand.blinded_text_id;
    card.tabIndex = 0;
    if (cand.rated) card.classList.add('rated');

    card.appendChild(el('h3', undefined, cand.blinded_text_id));
    const body = el('pre', 'cand-text', cand.text);
    card.appendChild(body);

    let selected: Score | null = null;
    const buttons = scoreButtons((score) => {
      selected = score;
      for (const b of card.querySelectorAll<HTMLButtonElement>('.score-btn')) {
        b.setAttribute('aria-pressed', String(b.dataset.score === String(score)));
      }
      error.textContent = '';
    });
    card.appendChild(buttons);

    const comment = el('textarea', 'comment');
    comment.placeholder = 'Comment (required for "Need more info")';
    card.appendChild(comment);

    const error = el('div', 'error');
    const status = el('span', 'status', cand.rated ? 'saved' : '');

    const submit = el('button', 'submit', 'Submit score');
    submit.type = 'button';
    submit.addEventListener('click', async () => {
      error.textContent = '';
      try {
        await handlers.onSubmit(task.part_id, cand.blinded_text_id, selected, comment.value);
      } catch (err) {
        if (err instanceof RatingInvalid) {
          error.textContent = err.message;
        } else {
          error.textContent = 'Could not save — check the connection and try again.';
        }
        return;
      }
      const firstTime = !ratedIds.has(cand.blinded_text_id);
      ratedIds.add(cand.blinded_text_id);
      card.classList.add('rated');
      status.textContent = 'saved';
      if (firstTime && ratedIds.size === task.candidates.length) {
        handlers.onTaskComplete?.();
      }
    });
    card.appendChild(submit);
    card.appendChild(status);
    card.appendChild(error);

    // keyboard shortcuts: 1-5 on a focused card picks that score
    card.addEventListener('keydown', (ev: KeyboardEvent) => {
      if (ev.key >= '1' && ev.key <= '5') {
        const score = Number(ev.key) as Score;
        card
          .querySelector<HTMLButtonElement>(`.score-btn[data-score="${score}"]`)
          ?.click();
      }
    });

    cards.appendChild(card);
  }
  root.appendChild(cards);
}

export interface DashboardState {
  completed: number;
  total: number;
  done: boolean;
  exportHref?: string;
}

export function renderDashboard(root: HTMLElement, state: DashboardState): void {
  root.textContent = '';
  const box = el('section', 'dashboard');
  box.appendChild(el('h2', undefined, state.done ? 'Session complete' : 'Session'));
  box.appendChild(el('div', 'progress', `${state.completed} / ${state.total}`));
  if (state.done && state.exportHref) {
    const link = el('a', 'export-link', 'Download ratings (JSONL)');
    link.href = state.exportHref;
    box.appendChild(link);
  }
  root.appendChild(box);
}

/** Single-page wiring: fetch the next task, render, advance until done. */
export class Workbench {
  readonly controller: SessionController;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: RatingClient,
    opts: ControllerOptions = {},
  ) {
    this.controller = new SessionController(client, opts);
  }

  async start(raterId: string, seed = 0): Promise<void> {
    await this.controller.start(raterId, seed);
    await this.showNext();
  }

  async showNext(): Promise<void> {
    const task = await this.controller.refresh();
    if (task.done) {
      renderDashboard(this.root, {
        completed: task.completed,
        total: task.total,
        done: true,
        exportHref: this.controller.exportUrl(),
      });
      return;
    }
    renderTask(this.root, task, {
      mosaicUrl: (p, s) => this.client.mosaicUrl(p, s),
      onSubmit: async (partId, bid, score, comment) => {
        await this.controller.submit(partId, bid, score, comment);
        const current = this.root.querySelector('.progress');
        if (current) {
          const { completed, total } = this.controller.progress;
          current.textContent = `${completed} / ${total}`;
        }
      },
      onTaskComplete: () => void this.showNext(),
    });
  }
}
