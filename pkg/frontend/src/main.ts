import { GatewayApi } from './api.js';
import { formatRemaining } from './countdown.js';
import { WorkerGameController } from './gameView.js';
import { EventStreamClient, FetchStreamTransport } from './stream.js';
import type { GameView } from './types.js';

const BASE_URL = (window as { GATEWAY_URL?: string }).GATEWAY_URL ?? 'http://127.0.0.1:8080';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function render(view: GameView): void {
  el('status').textContent = view.status;
  el('timer').textContent = view.status === 'playing' ? formatRemaining(view.remainingS) : '-:--';
  el('points').textContent = `${view.points} pts`;
  el('prompt').textContent = view.prompt;
  el('explanation').textContent = view.explanation;
  el('playlist').textContent =
    view.playlistSize > 0 ? `Game ${view.playlistPosition} of ${view.playlistSize}` : '';
  const dialog = el('dialog');
  dialog.innerHTML = '';
  for (const line of view.dialog) {
    const row = document.createElement('div');
    row.className = `line ${line.speaker}`;
    row.textContent = `${line.speaker}: ${line.text}`;
    dialog.appendChild(row);
  }
  const answers = el('answers');
  answers.innerHTML = '';
  for (const answer of view.myAnswers) {
    const item = document.createElement('li');
    item.textContent = answer;
    answers.appendChild(item);
  }
  const notice = el('notice');
  notice.textContent = view.notice ?? '';
  notice.className = view.status === 'matched' ? 'notice matched' : 'notice';
  (el<HTMLInputElement>('answer-input')).disabled = view.status !== 'playing';
}

async function start(): Promise<void> {
  const workerId =
    new URLSearchParams(window.location.search).get('worker') ?? `web-${Date.now() % 100000}`;
  const api = new GatewayApi(BASE_URL);
  const controller = new WorkerGameController(workerId, api, {
    onRender: render,
    onAlert: (message) => window.alert(message),
  });

  let stream: EventStreamClient | null = null;
  const ensureStream = () => {
    const view = controller.current;
    if (stream === null && view.status !== 'idle') {
      stream = new EventStreamClient(
        new FetchStreamTransport(BASE_URL),
        `ws-${workerId}`,
        (event) => {
          controller.applyStreamEvent(event);
          if (event.kind === 'playlist_advanced' && event.payload.done !== true) {
            void controller.refresh();
          }
        },
      );
      stream.connect();
    }
  };

  el('answer-form').addEventListener('submit', (e) => {
    e.preventDefault();
    const input = el<HTMLInputElement>('answer-input');
    const text = input.value.trim();
    if (text) {
      void controller.submit(text);
      input.value = '';
    }
  });
  el('retry').addEventListener('click', () => void controller.refresh().then(ensureStream));

  setInterval(() => controller.tick(), 250);
  await controller.refresh();
  ensureStream();
}

window.addEventListener('DOMContentLoaded', () => void start());
