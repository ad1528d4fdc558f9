import type { GatewayApi } from './api.js';
import { Countdown } from './countdown.js';
import type { ClaimedTask, GameView, StreamEvent } from './types.js';
import { isClaimDone } from './types.js';

export interface ControllerCallbacks {
  /** Called with a fresh immutable view after every state change. */
  onRender: (view: GameView) => void;
  /** Attention-grabbing alert when the playlist advances to the next game. */
  onAlert?: (message: string) => void;
}

const MATCH_POINTS = 1000;

/**
 * Client-side game state. All state is derived from server responses and
 * stream events, so a reload (claim + stream resume) reconstructs an
 * equivalent view; the controller adds no timing decisions of its own.
 */
export class WorkerGameController {
  private view: GameView = emptyView();
  private alertedAdvanceCursors = new Set<number>();
  readonly countdown: Countdown;

  constructor(
    private readonly workerId: string,
    private readonly api: GatewayApi,
    private readonly callbacks: ControllerCallbacks,
    nowMs: () => number = () => Date.now(),
  ) {
    this.countdown = new Countdown(nowMs);
  }

  get current(): GameView {
    return this.view;
  }

  /** Claim (or re-claim) the current game and render it. */
  async refresh(): Promise<GameView> {
    const response = await this.api.claim(this.workerId);
    if (!response.available || response.task === null) {
      this.countdown.stop();
      this.patch({ ...emptyView(), status: 'idle' });
      return this.view;
    }
    const task = response.task;
    if (isClaimDone(task)) {
      this.countdown.stop();
      this.patch({
        ...emptyView(),
        status: 'done',
        points: task.total_points,
        notice: `All games finished. Total: ${task.total_points} points`,
      });
      return this.view;
    }
    this.applyClaim(task);
    return this.view;
  }

  applyClaim(task: ClaimedTask): void {
    const sameGame = task.game_id === this.view.gameId;
    if (sameGame) {
      // Reconnect mid-game: adopt the server's remaining time, never upward.
      this.countdown.sync(task.remaining_s);
    } else {
      this.countdown.reset(task.remaining_s);
    }
    this.patch({
      gameId: task.game_id,
      dialog: task.dialog,
      prompt: task.prompt,
      explanation: task.explanation,
      remainingS: this.countdown.value(),
      myAnswers: sameGame ? this.view.myAnswers : [],
      status: 'playing',
      points: task.points,
      playlistPosition: task.playlist_position,
      playlistSize: task.playlist_size,
      tutorial: task.tutorial,
      notice: sameGame ? this.view.notice : null,
    });
  }

  /** Post one answer; input stays enabled until a match or the timeout. */
  async submit(text: string): Promise<GameView> {
    if (this.view.status !== 'playing' || this.view.gameId === null) {
      return this.view;
    }
    const response = await this.api.postAnswer(this.view.gameId, this.workerId, text);
    if (!response.accepted) {
      this.countdown.stop();
      this.patch({ status: 'timed_out', notice: 'Time is up for this game.' });
      return this.view;
    }
    const myAnswers = [...this.view.myAnswers, text];
    if (response.matched) {
      this.patch({
        myAnswers,
        status: 'matched',
        points: this.view.points + response.points_awarded,
        notice: `Match! +${response.points_awarded} points`,
      });
    } else {
      this.patch({ myAnswers });
    }
    return this.view;
  }

  /** React to one deduplicated stream event. */
  applyStreamEvent(event: StreamEvent): void {
    switch (event.kind) {
      case 'match':
        this.onMatchEvent(event);
        break;
      case 'game_closed':
        this.onGameClosed(event);
        break;
      case 'playlist_advanced':
        this.onPlaylistAdvanced(event);
        break;
      default:
        break;
    }
  }

  private onMatchEvent(event: StreamEvent): void {
    if (event.game_id !== this.view.gameId || this.view.status !== 'playing') {
      return;
    }
    const workers = (event.payload.workers as string[] | undefined) ?? [];
    if (workers.includes(this.workerId)) {
      this.patch({
        status: 'matched',
        points: this.view.points + MATCH_POINTS,
        notice: `Match! +${MATCH_POINTS} points`,
      });
    } else {
      // Someone else matched first: the game is decided for everyone.
      this.patch({ status: 'waiting_next', notice: 'Two other players matched.' });
    }
  }

  private onGameClosed(event: StreamEvent): void {
    if (event.game_id !== this.view.gameId) {
      return;
    }
    this.countdown.stop();
    if (this.view.status === 'playing') {
      this.patch({ status: 'timed_out', notice: 'Time is up for this game.' });
    } else if (this.view.status === 'matched') {
      this.patch({ status: 'waiting_next' });
    }
  }

  private onPlaylistAdvanced(event: StreamEvent): void {
    // The stream is at-least-once; the cursor set keeps one alert per advance
    // even if a reconnect redelivers the event.
    if (this.alertedAdvanceCursors.has(event.cursor)) {
      return;
    }
    this.alertedAdvanceCursors.add(event.cursor);
    if (event.payload.done === true) {
      this.countdown.stop();
      this.patch({ status: 'done', notice: `All games finished. Total: ${this.view.points} points` });
      return;
    }
    this.callbacks.onAlert?.('Next game is starting!');
    this.patch({ status: 'waiting_next', notice: 'Next game is starting!' });
  }

  /** Refresh the rendered remaining time from the interpolated countdown. */
  tick(): void {
    if (this.view.status !== 'playing') {
      return;
    }
    const remaining = this.countdown.value();
    if (remaining <= 0) {
      this.patch({ remainingS: 0, status: 'timed_out', notice: 'Time is up for this game.' });
      return;
    }
    this.patch({ remainingS: remaining });
  }

  private patch(changes: Partial<GameView>): void {
    this.view = { ...this.view, ...changes };
    if (changes.remainingS === undefined && this.view.status === 'playing') {
      this.view.remainingS = this.countdown.value();
    }
    this.callbacks.onRender(this.view);
  }
}

function emptyView(): GameView {
  return {
    gameId: null,
    dialog: [],
    prompt: '',
    explanation: '',
    remainingS: 0,
    myAnswers: [],
    status: 'idle',
    points: 0,
    playlistPosition: 0,
    playlistSize: 0,
    tutorial: false,
    notice: null,
  };
}
