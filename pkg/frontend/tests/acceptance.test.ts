/**
 * Acceptance: with a mocked event stream, the countdown never increases, the
 * match feedback renders within 200 ms of the match event, and the playlist
 * alert fires exactly once per advance across a forced reconnect.
 */
import { describe, expect, it } from 'vitest';

import type { GatewayApi } from '../src/api.js';
import { WorkerGameController } from '../src/gameView.js';
import { EventStreamClient, type StreamTransport } from '../src/stream.js';
import type { ClaimResponse, ClaimedTask, GameView, StreamEvent } from '../src/types.js';

function task(gameId: string, remaining: number, position: number): ClaimedTask {
  return {
    worker_session_id: 'ws-w1',
    game_id: gameId,
    dialog: [{ speaker: 'user', text: 'I could go for bubble tea.' }],
    prompt: 'What is the food_name in this dialog?',
    explanation: 'Food name.',
    remaining_s: remaining,
    playlist_position: position,
    playlist_size: 6,
    tutorial: position === 1,
    points: 0,
  };
}

class ScriptedApi {
  constructor(private readonly claims: ClaimResponse[]) {}

  async claim(): Promise<ClaimResponse> {
    const next = this.claims.shift();
    if (!next) {
      return { available: false, task: null };
    }
    return next;
  }

  async postAnswer(): Promise<never> {
    throw new Error('not used in this scenario');
  }
}

/** At-least-once transport: every open replays all lines after the cursor. */
class MockStream implements StreamTransport {
  lines: string[] = [];

  open(_target: string, cursor: number, onLine: (l: string) => void): () => void {
    for (const raw of this.lines) {
      if ((JSON.parse(raw) as { cursor: number }).cursor > cursor) {
        onLine(raw);
      }
    }
    return () => undefined;
  }

  push(event: StreamEvent): string {
    const raw = JSON.stringify(event);
    this.lines.push(raw);
    return raw;
  }
}

function event(cursor: number, kind: string, payload: Record<string, unknown>, gameId: string | null): StreamEvent {
  return { cursor, at: '2026-01-01T00:00:00.000Z', kind, game_id: gameId, worker_id: null, payload };
}

describe('worker UI acceptance', () => {
  it('countdown never increases while a game is on screen', async () => {
    let now = 0;
    const api = new ScriptedApi([
      { available: true, task: task('g1', 20, 1) },
      // Reconnect responses with jittered, sometimes larger remaining times.
      { available: true, task: task('g1', 19.5, 1) },
      { available: true, task: task('g1', 25, 1) },
    ]);
    const renders: GameView[] = [];
    const controller = new WorkerGameController(
      'w1',
      api as unknown as GatewayApi,
      { onRender: (v) => renders.push(v) },
      () => now,
    );
    await controller.refresh();
    for (let step = 0; step < 4; step += 1) {
      now += 300;
      controller.tick();
    }
    await controller.refresh(); // server says 19.5 with 1.2 s elapsed locally
    now += 300;
    controller.tick();
    await controller.refresh(); // stale response claims 25 s remain
    for (let step = 0; step < 4; step += 1) {
      now += 300;
      controller.tick();
    }
    const inGame = renders.filter((v) => v.gameId === 'g1' && v.status === 'playing');
    expect(inGame.length).toBeGreaterThan(8);
    for (let idx = 1; idx < inGame.length; idx += 1) {
      expect(inGame[idx].remainingS).toBeLessThanOrEqual(inGame[idx - 1].remainingS + 1e-9);
    }
  });

  it('match feedback renders within 200 ms of the match event', async () => {
    const api = new ScriptedApi([{ available: true, task: task('g1', 20, 1) }]);
    let matchedRenderedAt: number | null = null;
    const controller = new WorkerGameController('w1', api as unknown as GatewayApi, {
      onRender: (view) => {
        if (view.status === 'matched' && matchedRenderedAt === null) {
          matchedRenderedAt = performance.now();
        }
      },
    });
    await controller.refresh();

    const stream = new MockStream();
    const client = new EventStreamClient(stream, 'ws-w1', (e) => controller.applyStreamEvent(e));
    stream.push(event(1, 'answer_submitted', { raw_text: 'bubble tea' }, 'g1'));
    stream.push(event(2, 'match', { workers: ['w1', 'w2'], label: 'bubble tea' }, 'g1'));
    const deliveredAt = performance.now();
    client.connect();

    expect(matchedRenderedAt).not.toBeNull();
    expect((matchedRenderedAt ?? Infinity) - deliveredAt).toBeLessThanOrEqual(200);
    expect(controller.current.points).toBe(1000);
  });

  it('playlist alert fires exactly once per advance across a forced reconnect', async () => {
    const api = new ScriptedApi([{ available: true, task: task('g1', 20, 1) }]);
    const alerts: string[] = [];
    const controller = new WorkerGameController('w1', api as unknown as GatewayApi, {
      onRender: () => undefined,
      onAlert: (m) => alerts.push(m),
    });
    await controller.refresh();

    const stream = new MockStream();
    const client = new EventStreamClient(stream, 'ws-w1', (e) => controller.applyStreamEvent(e));
    stream.push(event(1, 'game_closed', {}, 'g1'));
    stream.push(event(2, 'playlist_advanced', { done: false, next_game_id: 'g2', cursor: 1 }, 'g2'));
    client.connect();
    expect(alerts.length).toBe(1);

    // Connection drops; the server re-sends from the client's cursor and the
    // client also replays the tail after a conservative resume.
    client.reconnect();
    client.reconnect();
    expect(alerts.length).toBe(1);

    // A second advance later must alert exactly once more, even when the
    // delivery duplicates the first advance.
    stream.push(event(3, 'game_closed', {}, 'g2'));
    stream.push(event(4, 'playlist_advanced', { done: false, next_game_id: 'g3', cursor: 2 }, 'g3'));
    client.reconnect();
    expect(alerts.length).toBe(2);

    // Even a buggy transport replaying everything is deduplicated downstream.
    const replayEverything = new EventStreamClient(stream, 'ws-w1', (e) => controller.applyStreamEvent(e));
    replayEverything.connect();
    expect(alerts.length).toBe(2);
  });
});
